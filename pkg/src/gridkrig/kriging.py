"""Simple and ordinary kriging predictors plus their risk functionals.

A predictor bundles the prediction-input sites, a solved linear system
(factorized covariance matrix for simple kriging, LU of the augmented
semi-variogram system for ordinary kriging) and a covariance source, which
is either the true model (theoretical predictor) or an estimated covariance
structure (empirical, plug-in predictor).  The empirical predictor never
sees the true model; only risk evaluation does.

Risk comes in two flavors: the exact conditional form
``c(0) + L' Sigma L - 2 c_d' L`` averaged over an evaluation grid (IMSE),
and the per-realization average squared prediction error (AMSE) used by the
replication studies.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .covmodel import CovModel, cov, cov_matrix, cov_vec, cov_vector
from .errors import NumericalError, ValidationError
from .estimate import EmpiricalCovariance, precision_hat, sigma_hat
from .gaussfield import factorize
from .grid import SiteSet, _as_coords

SOLVE_RESIDUAL_TOL = 1e-8


def _pairwise_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", d, d))


def _true_cov_rows(model: CovModel, coords: np.ndarray, coords_in: np.ndarray) -> np.ndarray:
    """True covariance between query rows and input columns (anisotropy-aware)."""
    return np.asarray(cov_vec(model, coords[:, None, :] - coords_in[None, :, :]))


class KrigingPredictor:
    """A solved kriging system able to produce weights and predictions.

    Build through the module-level constructors (`theoretical_simple`,
    `empirical_simple`, `theoretical_ordinary`, `empirical_ordinary`).
    """

    def __init__(self, mode, variant, inputs, solve, cov_fn, gamma_fn, eta):
        self.mode = mode            # "theoretical" | "empirical"
        self.variant = variant      # "simple" | "ordinary"
        self.inputs = inputs
        self._solve = solve         # solves the system matrix
        self._cov_fn = cov_fn       # cov_fn(coords (m,2)) -> (m, d) covariance rows
        self._gamma_fn = gamma_fn   # same for the semi-variogram (ordinary)
        self.regularization_used = eta
        self.d = len(inputs)

    # -- weights -----------------------------------------------------------

    def _rhs(self, coords: np.ndarray) -> np.ndarray:
        """System right-hand sides for query coordinates, one column each."""
        if self.variant == "simple":
            return self._cov_fn(coords).T
        g = self._gamma_fn(coords).T
        return np.vstack([g, np.ones((1, coords.shape[0]))])

    def weight_matrix(self, sites) -> np.ndarray:
        """Weights for many query sites at once, as a (d, m) matrix."""
        coords = np.atleast_2d(_as_coords(sites))
        sol = self._solve(self._rhs(coords))
        return sol[: self.d]

    def weights(self, s) -> np.ndarray:
        """Weight vector Lambda(s) for one query site."""
        return self.weight_matrix(np.atleast_2d(_as_coords(s)))[:, 0]

    def weights_and_multiplier(self, s) -> tuple[np.ndarray, float]:
        """Ordinary-kriging weights plus the Lagrange multiplier."""
        if self.variant != "ordinary":
            raise ValidationError("only the ordinary variant carries a multiplier")
        coords = np.atleast_2d(_as_coords(s))
        sol = self._solve(self._rhs(coords))
        return sol[: self.d, 0], float(sol[self.d, 0])

    # -- prediction --------------------------------------------------------

    def predict(self, s, observations) -> float:
        obs = np.asarray(observations, dtype=float)
        if obs.shape != (self.d,):
            raise ValidationError(f"expected {self.d} observations, got shape {obs.shape}")
        return float(self.weights(s) @ obs)

    def predict_many(self, sites, observations) -> np.ndarray:
        obs = np.asarray(observations, dtype=float)
        if obs.shape != (self.d,):
            raise ValidationError(f"expected {self.d} observations, got shape {obs.shape}")
        return self.weight_matrix(sites).T @ obs


def _check_solution(matrix: np.ndarray, solve) -> None:
    eye = np.eye(matrix.shape[0])
    resid = np.max(np.abs(matrix @ solve(eye) - eye))
    if not resid <= SOLVE_RESIDUAL_TOL:  # NaN counts as failure
        raise NumericalError(f"kriging system solve residual {resid:.3e} exceeds tolerance")


def theoretical_simple(model: CovModel, inputs: SiteSet) -> KrigingPredictor:
    """Optimal linear predictor from the true covariance: weights Sigma^-1 c_d(s)."""
    sigma = cov_matrix(model, inputs)
    factor = factorize(sigma)
    coords_in = inputs.coords

    def cov_fn(coords):
        return _true_cov_rows(model, coords, coords_in)

    _check_solution(sigma.values + factor.jitter * np.eye(len(inputs)), factor.solve)
    return KrigingPredictor("theoretical", "simple", inputs, factor.solve, cov_fn,
                            None, eta=factor.jitter)


def empirical_simple(emp: EmpiricalCovariance, inputs: SiteSet,
                     ridge_schedule=None) -> KrigingPredictor:
    """Plug-in predictor: estimated precision matrix times estimated covariance vector."""
    shat = sigma_hat(emp, inputs)
    reg = precision_hat(shat) if ridge_schedule is None else precision_hat(shat, ridge_schedule)
    coords_in = inputs.coords

    def cov_fn(coords):
        return np.asarray(emp.covariance_at(_pairwise_dist(coords, coords_in)))

    return KrigingPredictor("empirical", "simple", inputs, reg.solve, cov_fn,
                            None, eta=reg.eta)


ORDINARY_RIDGE_LADDER = (0.0, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4)


def _ordinary_from_rows(inputs: SiteSet, gamma_matrix: np.ndarray, gamma_fn,
                        mode: str) -> KrigingPredictor:
    """Solve the augmented semi-variogram system, ridging the gamma block if
    it is singular (e.g. a degenerate estimated semi-variogram)."""
    d = len(inputs)
    G = 0.5 * (gamma_matrix + gamma_matrix.T)
    np.fill_diagonal(G, 0.0)
    scale = max(float(np.abs(G).max()), 1.0)
    last_exc = None
    for mult in ORDINARY_RIDGE_LADDER:
        eta = mult * scale
        A = np.zeros((d + 1, d + 1))
        A[:d, :d] = G + eta * np.eye(d)
        A[d, :d] = 1.0
        A[:d, d] = 1.0
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lu = scipy.linalg.lu_factor(A)

            def solve(b, _lu=lu):
                return scipy.linalg.lu_solve(_lu, b)

            try:
                _check_solution(A, solve)
            except NumericalError as exc:
                last_exc = exc
                continue
        return KrigingPredictor(mode, "ordinary", inputs, solve, None, gamma_fn, eta=eta)
    raise NumericalError(f"ordinary kriging system is unsolvable: {last_exc}")


def theoretical_ordinary(model: CovModel, inputs: SiteSet) -> KrigingPredictor:
    """Ordinary kriging from the true semi-variogram (weights sum to one)."""
    coords_in = inputs.coords
    sill = float(cov(model, 0.0))
    gmat = sill - np.asarray(cov_vec(model, coords_in[:, None, :] - coords_in[None, :, :]))
    return _ordinary_from_rows(
        inputs, gamma_matrix=gmat,
        gamma_fn=lambda coords: sill - _true_cov_rows(model, coords, coords_in),
        mode="theoretical",
    )


def empirical_ordinary(emp: EmpiricalCovariance, inputs: SiteSet) -> KrigingPredictor:
    """Ordinary kriging from the estimated semi-variogram."""
    coords_in = inputs.coords
    gmat = np.asarray(emp.semivariogram_at(_pairwise_dist(coords_in, coords_in)), dtype=float)
    return _ordinary_from_rows(
        inputs, gamma_matrix=gmat,
        gamma_fn=lambda coords: np.asarray(
            emp.semivariogram_at(_pairwise_dist(coords, coords_in))),
        mode="empirical",
    )


# ---------------------------------------------------------------------------
# Risk functionals
# ---------------------------------------------------------------------------

def pointwise_mse_theoretical(model: CovModel, s, inputs: SiteSet) -> float:
    """Minimal mean squared error at s: Var(X_s) - c_d(s)' Sigma^-1 c_d(s)."""
    factor = factorize(cov_matrix(model, inputs))
    c_d = cov_vector(model, s, inputs)
    return float(cov(model, 0.0) - c_d @ factor.solve(c_d))


def _risk_terms(model: CovModel, inputs: SiteSet, weights: np.ndarray,
                eval_sites) -> np.ndarray:
    """Conditional MSE c(0) + L'SL - 2 c_d'L per evaluation site (true model)."""
    coords = np.atleast_2d(_as_coords(eval_sites))
    sigma = cov_matrix(model, inputs).values
    c_true = _true_cov_rows(model, coords, inputs.coords)  # (m, d)
    quad = np.einsum("dm,de,em->m", weights, sigma, weights)
    cross = np.einsum("md,dm->m", c_true, weights)
    return float(cov(model, 0.0)) + quad - 2.0 * cross


def imse(model: CovModel, pred: KrigingPredictor, eval_sites) -> float:
    """Integrated MSE of a predictor, as the average of the exact conditional
    MSE over the evaluation grid, always under the true model."""
    coords = np.atleast_2d(_as_coords(eval_sites))
    if coords.shape[0] == 0:
        raise ValidationError("evaluation grid must be non-empty")
    w = pred.weight_matrix(coords)
    return float(_risk_terms(model, pred.inputs, w, coords).mean())


def imse_of_weights(model: CovModel, inputs: SiteSet, weights: np.ndarray,
                    eval_sites) -> float:
    """IMSE of an arbitrary weight field given as a (d, m) matrix."""
    return float(_risk_terms(model, inputs, weights, eval_sites).mean())


def excess_risk(model: CovModel, emp_pred: KrigingPredictor,
                theo_pred: KrigingPredictor, eval_sites) -> float:
    """IMSE gap between a predictor and the optimal one.

    Computed both as imse(emp) - imse(theo) and via the integrand
    ``Lhat'S Lhat - L*'S L* - 2 c_d'(Lhat - L*)``; the two must agree to
    1e-8, otherwise something is off numerically.
    """
    coords = np.atleast_2d(_as_coords(eval_sites))
    if emp_pred.inputs != theo_pred.inputs:
        raise ValidationError("both predictors must share the same inputs")
    gap = imse(model, emp_pred, coords) - imse(model, theo_pred, coords)

    inputs = theo_pred.inputs
    sigma = cov_matrix(model, inputs).values
    c_true = _true_cov_rows(model, coords, inputs.coords)
    w_emp = emp_pred.weight_matrix(coords)
    w_theo = theo_pred.weight_matrix(coords)
    integrand = (
        np.einsum("dm,de,em->m", w_emp, sigma, w_emp)
        - np.einsum("dm,de,em->m", w_theo, sigma, w_theo)
        - 2.0 * np.einsum("md,dm->m", c_true, w_emp - w_theo)
    )
    direct = float(integrand.mean())
    if abs(direct - gap) > 1e-8 * (1.0 + abs(gap) + abs(direct)):
        raise NumericalError(
            f"excess-risk computations disagree: {gap:.3e} vs {direct:.3e}"
        )
    return gap


def amse(predictions, truth) -> float:
    """Average squared prediction error over an evaluation set."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise ValidationError(f"length mismatch: {p.shape} vs {t.shape}")
    return float(np.mean((p - t) ** 2))


@dataclass(frozen=True)
class RiskReport:
    """Pointwise and integrated risk of a predictor, plus the excess if known."""

    pointwise_mse: np.ndarray
    imse: float
    excess: float | None = None


def risk_report(model: CovModel, pred: KrigingPredictor, eval_sites,
                theo_pred: KrigingPredictor | None = None) -> RiskReport:
    coords = np.atleast_2d(_as_coords(eval_sites))
    w = pred.weight_matrix(coords)
    pw = _risk_terms(model, pred.inputs, w, coords)
    excess = None
    if theo_pred is not None:
        excess = excess_risk(model, pred, theo_pred, coords)
    return RiskReport(pointwise_mse=pw, imse=float(pw.mean()), excess=excess)
