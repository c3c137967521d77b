"""Nonparametric covariance estimation from one field realization on a grid.

For each observed lag h below a known decorrelation cutoff, three statistics
are computed from the ordered pair list N(h):

* ``c_hat(h)``   - mean of products X_i X_j over pairs at lag h,
* ``gamma_hat(h)`` - half the mean squared difference over those pairs,
* ``c_hat0(h)``  - degree-weighted mean of X_i^2, so that
  ``gamma_hat + c_hat == c_hat0`` identically.

Beyond the cutoff all three are zero by definition.  Queries at arbitrary
lags use a 1-NN rule over the stored lags (ties break toward the smaller
lag), which is also how the estimated covariance matrix and vector of the
plug-in predictor are assembled.  The weighted-chi-square distribution of
``gamma_hat`` / ``c_hat0`` on Gaussian fields is exposed both as exact
moments (from lag-graph eigenvalues) and as an oracle sampler.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.stats import ks_2samp

from .covmodel import CovMatrix, CovModel, cov, cov_matrix, semivariogram
from .errors import NumericalError, ValidationError
from .gaussfield import FieldSample, factorize
from .grid import LagTable, SiteSet, _as_coords, dyadic_grid, lag_graph, lag_table
from .rng import stream

EIGENVALUE_TOL = 1e-8


@dataclass(frozen=True)
class EstimationConfig:
    """Cutoff and lag-retention policy for the covariance estimator.

    The cutoff is ``sqrt(2) - 2**-j1`` unless `cutoff` overrides it with an
    explicitly known decorrelation lag.  `nu_min`, when set, drops lags whose
    pair count falls below ``nu_min * n`` (used on real data, where sparse
    lags are too noisy to keep); queries then fall through to the nearest
    retained lag.
    """

    j1: int = 1
    cutoff: float | None = None
    nu_min: float | None = None
    extrapolator: str = "1nn"

    def __post_init__(self):
        if self.cutoff is None:
            if int(self.j1) < 1:
                raise ValidationError("j1 must be an integer >= 1")
        elif not 0.0 < self.cutoff <= 1.5:
            # anything >= sqrt(2) simply keeps every observable lag
            raise ValidationError(f"cutoff must lie in (0, 1.5], got {self.cutoff}")
        if self.extrapolator != "1nn":
            raise ValidationError("only the 1-NN extrapolator is implemented")
        if self.nu_min is not None and not 0.0 <= self.nu_min < 1.0:
            raise ValidationError(f"nu_min must be in [0, 1), got {self.nu_min}")

    @property
    def cutoff_lag(self) -> float:
        return self.cutoff if self.cutoff is not None else math.sqrt(2) - 2.0 ** -int(self.j1)


@dataclass(frozen=True)
class EmpiricalCovariance:
    """Estimated covariance structure over the observed lag set."""

    lags: np.ndarray        # all observed lags, ascending
    counts: np.ndarray      # n_h per lag
    chat: np.ndarray        # covariance estimate per lag (0 beyond cutoff)
    gammahat: np.ndarray    # semi-variogram estimate per lag (0 beyond cutoff)
    chat0: np.ndarray       # lag-indexed variance estimate (0 beyond cutoff)
    in_cutoff: np.ndarray   # lag < cutoff
    retained: np.ndarray    # in-cutoff and not dropped by nu_min
    config: EstimationConfig
    n: int                  # training size
    nu: float               # min n_h/n over positive in-cutoff lags (1.0 if none)
    # lags available as 1-NN sources: not dropped (out-of-cutoff lags keep
    # their definitional zeros and stay valid sources)
    _source_idx: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        src = np.flatnonzero(self.retained | ~self.in_cutoff)
        object.__setattr__(self, "_source_idx", src)

    @property
    def dropped_lags(self) -> np.ndarray:
        return self.lags[self.in_cutoff & ~self.retained]

    def _nearest_source(self, h: np.ndarray) -> np.ndarray:
        src_lags = self.lags[self._source_idx]
        if len(src_lags) == 0:
            raise ValidationError("no stored lags left to extrapolate from")
        if len(src_lags) == 1:
            return np.full(h.shape, self._source_idx[0], dtype=np.int64)
        pos = np.searchsorted(src_lags, h)
        pos = np.clip(pos, 1, len(src_lags) - 1)
        left, right = src_lags[pos - 1], src_lags[pos]
        # ties break toward the smaller lag
        take_left = np.abs(h - left) <= np.abs(h - right)
        return self._source_idx[np.where(take_left, pos - 1, pos)]

    def _extrapolate(self, values: np.ndarray, h) -> np.ndarray | float:
        h_arr = np.atleast_1d(np.asarray(h, dtype=float))
        if np.any(h_arr < 0):
            raise ValidationError("lags must be non-negative")
        out = values[self._nearest_source(h_arr)]
        out = np.where(h_arr >= self.config.cutoff_lag, 0.0, out)
        return out.reshape(np.shape(h)) if np.ndim(h) else float(out[0])

    def covariance_at(self, h) -> np.ndarray | float:
        """1-NN extrapolation of c_hat to arbitrary lags (0 beyond the cutoff)."""
        return self._extrapolate(self.chat, h)

    def semivariogram_at(self, h) -> np.ndarray | float:
        """1-NN extrapolation of gamma_hat, same rule as the covariance."""
        return self._extrapolate(self.gammahat, h)

    def to_csv(self, path_or_buf) -> None:
        """Write ``h,n_h,c_hat,gamma_hat,c_hat0,in_cutoff`` rows."""
        close = False
        if isinstance(path_or_buf, (str, bytes)):
            fh = open(path_or_buf, "w", newline="")
            close = True
        else:
            fh = path_or_buf
        try:
            w = csv.writer(fh)
            w.writerow(["h", "n_h", "c_hat", "gamma_hat", "c_hat0", "in_cutoff"])
            for i in range(len(self.lags)):
                w.writerow([
                    f"{self.lags[i]:.17g}", int(self.counts[i]),
                    f"{self.chat[i]:.17g}", f"{self.gammahat[i]:.17g}",
                    f"{self.chat0[i]:.17g}", int(self.in_cutoff[i]),
                ])
        finally:
            if close:
                fh.close()


def extrapolate(emp: EmpiricalCovariance, h) -> np.ndarray | float:
    """Functional alias for ``emp.covariance_at``."""
    return emp.covariance_at(h)


def empirical_cov(fieldsample: FieldSample, table: LagTable,
                  config: EstimationConfig = EstimationConfig()) -> EmpiricalCovariance:
    """Compute c_hat, gamma_hat and c_hat0 on every in-cutoff lag of `table`."""
    if fieldsample.sites is not table.sites and fieldsample.sites != table.sites:
        raise ValidationError("field and lag table were built over different site sets")
    x = np.asarray(fieldsample.values, dtype=float)
    n = len(x)
    m = len(table)
    cutoff = config.cutoff_lag
    chat = np.zeros(m)
    gammahat = np.zeros(m)
    chat0 = np.zeros(m)
    counts = table.counts
    in_cutoff = table.lags < cutoff
    for k in np.flatnonzero(in_cutoff):
        ij = table._pairs[k]
        xi, xj = x[ij[:, 0]], x[ij[:, 1]]
        n_h = ij.shape[0]
        chat[k] = (xi * xj).sum() / n_h
        gammahat[k] = ((xi - xj) ** 2).sum() / (2.0 * n_h)
        chat0[k] = (table._degrees[k] * x * x).sum() / n_h
    retained = in_cutoff.copy()
    if config.nu_min is not None:
        retained &= counts >= config.nu_min * n
        retained[table.lags == 0.0] = in_cutoff[table.lags == 0.0]
    pos = in_cutoff & (table.lags > 0)
    nu = float((counts[pos] / n).min()) if pos.any() else 1.0
    return EmpiricalCovariance(
        lags=table.lags.copy(), counts=counts, chat=chat, gammahat=gammahat,
        chat0=chat0, in_cutoff=in_cutoff, retained=retained, config=config,
        n=n, nu=nu,
    )


def sigma_hat(emp: EmpiricalCovariance, inputs: SiteSet) -> CovMatrix:
    """Estimated covariance matrix over prediction inputs, via 1-NN extrapolation."""
    sites = inputs if isinstance(inputs, SiteSet) else SiteSet(_as_coords(inputs))
    coords = sites.coords
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    vals = np.asarray(emp.covariance_at(dist), dtype=float)
    vals = 0.5 * (vals + vals.T)
    return CovMatrix(sites=sites, values=vals)


def c_hat_vector(emp: EmpiricalCovariance, s, inputs: SiteSet) -> np.ndarray:
    """Estimated covariance vector between a query site and the inputs."""
    s_arr = _as_coords(s)
    coords = _as_coords(inputs)
    dist = np.linalg.norm(s_arr - coords, axis=-1)
    return np.asarray(emp.covariance_at(dist), dtype=float)


RIDGE_LADDER = (0.0, 1e-8, 1e-6, 1e-4, 1e-2)
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class RegularizedFactor:
    """Cholesky factor of (Sigma_hat + eta I) with the accepted ridge eta."""

    lower: np.ndarray
    eta: float

    def solve(self, b: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve((self.lower, True), b)


def precision_hat(sigma: CovMatrix | np.ndarray,
                  ridge_schedule=RIDGE_LADDER) -> RegularizedFactor:
    """Factorize Sigma_hat, ridging by eta * max-diagonal until well posed.

    A candidate factorization is accepted only if its inverse actually solves
    the ridged matrix: ``max |(Sigma_hat + eta I) P - I| <= 1e-10``.  A bare
    Cholesky success is not enough, since a numerically semi-definite
    Sigma_hat can factor and still produce useless solves.
    """
    mat = sigma.values if isinstance(sigma, CovMatrix) else np.asarray(sigma, dtype=float)
    d = mat.shape[0]
    scale = max(float(mat.diagonal().max()), np.finfo(float).tiny)
    eye = np.eye(d)
    for mult in ridge_schedule:
        eta = mult * scale
        try:
            lower = scipy.linalg.cholesky(mat + eta * eye, lower=True)
        except scipy.linalg.LinAlgError:
            continue
        inv = scipy.linalg.cho_solve((lower, True), eye)
        if np.max(np.abs((mat + eta * eye) @ inv - eye)) <= RESIDUAL_TOL:
            return RegularizedFactor(lower=lower, eta=eta)
    raise NumericalError(
        f"no ridge in {tuple(ridge_schedule)} (times max diagonal {scale:.3g}) "
        "produced a usable factorization"
    )


# ---------------------------------------------------------------------------
# Monte Carlo and distributional diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LagCheckRow:
    h: float
    n_h: int
    gamma_true: float
    gamma_mean: float
    mean_band: float
    mean_ok: bool
    var_ratio: float


@dataclass(frozen=True)
class UnbiasednessReport:
    rows: list
    reps: int

    @property
    def all_means_ok(self) -> bool:
        return all(r.mean_ok for r in self.rows)


def unbiasedness_check(model: CovModel, sites: SiteSet, config: EstimationConfig,
                       reps: int, seed: int) -> UnbiasednessReport:
    """Monte Carlo check that gamma_hat is unbiased at every in-cutoff lag.

    The mean over `reps` independent fields is compared against gamma(h)
    with the band ``4 sqrt(2 gamma(h)^2 / n_h / reps)``; the observed
    variance is reported as a ratio against ``2 gamma(h)^2 / n_h``.
    """
    if reps < 1000:
        raise ValidationError("unbiasedness_check needs at least 1000 replications")
    table = lag_table(sites)
    factor = factorize(cov_matrix(model, sites))
    rng = stream(seed, "oracle")
    draws = factor.sample(rng, size=reps)
    cutoff = config.cutoff_lag
    rows = []
    for k in np.flatnonzero((table.lags > 0) & (table.lags < cutoff)):
        ij = table._pairs[k]
        n_h = ij.shape[0]
        diffs = draws[:, ij[:, 0]] - draws[:, ij[:, 1]]
        gam = (diffs ** 2).sum(axis=1) / (2.0 * n_h)
        h = float(table.lags[k])
        gtrue = float(semivariogram(model, h))
        band = 4.0 * math.sqrt(2.0 * gtrue ** 2 / n_h / reps)
        mean = float(gam.mean())
        ratio = float(gam.var(ddof=1) / (2.0 * gtrue ** 2 / n_h)) if gtrue > 0 else math.nan
        rows.append(LagCheckRow(h=h, n_h=n_h, gamma_true=gtrue, gamma_mean=mean,
                                mean_band=band, mean_ok=abs(mean - gtrue) <= band,
                                var_ratio=ratio))
    return UnbiasednessReport(rows=rows, reps=reps)


def _psd_product_eigenvalues(matrix: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Eigenvalues of (matrix @ sigma) for PSD matrix and PD sigma.

    Computed symmetrically as eig(sigma^(1/2) matrix sigma^(1/2)), which is
    similar to the product and numerically keeps the spectrum real.
    """
    w, v = np.linalg.eigh(sigma)
    if w.min() <= 0:
        raise NumericalError(f"covariance matrix not positive definite (min eig {w.min():.3e})")
    root = (v * np.sqrt(w)) @ v.T
    sym = root @ matrix @ root
    return np.linalg.eigvalsh(0.5 * (sym + sym.T))


@dataclass(frozen=True)
class QuadraticFormReport:
    """Weighted-chi-square diagnostics for gamma_hat and c_hat0 at one lag."""

    h: float
    n_h: int
    ell: np.ndarray          # positive eigenvalues of L(n,h) Sigma_n
    rho: np.ndarray          # positive eigenvalues of D(n,h) Sigma_n
    gamma_mean_exact: float  # sum(ell) / n_h
    gamma_var_exact: float   # 2 sum(ell^2) / n_h^2
    c0_mean_exact: float
    c0_var_exact: float
    gamma_mean_mc: float
    gamma_var_mc: float
    c0_mean_mc: float
    c0_var_mc: float
    ks_gamma: float
    ks_c0: float


def quadratic_form_check(model: CovModel, J: int, h: float, reps: int,
                         seed: int) -> QuadraticFormReport:
    """Compare the sampled gamma_hat / c_hat0 laws with their exact forms.

    Both statistics are quadratic forms of the observation vector, hence
    weighted sums of independent one-degree chi-squares whose weights are
    the positive eigenvalues of the lag-graph matrices times the covariance
    matrix.  The report carries exact and Monte Carlo moments plus the
    two-sample Kolmogorov-Smirnov distance against a direct weighted
    chi-square sampler.
    """
    sites = dyadic_grid(J)
    table = lag_table(sites)
    graphs = lag_graph(sites, table, h)
    sig = cov_matrix(model, sites).values
    n_h = table.n_h(h)

    ell_all = _psd_product_eigenvalues(graphs.laplacian, sig)
    rho_all = _psd_product_eigenvalues(graphs.degree_matrix, sig)
    tol = EIGENVALUE_TOL * max(1.0, float(ell_all.max()), float(rho_all.max()))
    if ell_all.min() < -tol or rho_all.min() < -tol:
        raise NumericalError(
            f"negative weight eigenvalue at lag {h}: "
            f"min ell {ell_all.min():.3e}, min rho {rho_all.min():.3e}"
        )
    ell = ell_all[ell_all > tol]
    rho = rho_all[rho_all > tol]

    factor = factorize(sig)
    rng = stream(seed, "field")
    draws = factor.sample(rng, size=reps)
    ij = table.pairs(h)
    diffs = draws[:, ij[:, 0]] - draws[:, ij[:, 1]]
    gam = (diffs ** 2).sum(axis=1) / (2.0 * n_h)
    deg = table.degrees(h)
    c0 = (draws ** 2 * deg).sum(axis=1) / n_h

    oracle = stream(seed, "oracle")
    gam_oracle = (oracle.standard_normal((reps, len(ell))) ** 2 @ ell) / n_h
    c0_oracle = (oracle.standard_normal((reps, len(rho))) ** 2 @ rho) / n_h

    return QuadraticFormReport(
        h=float(graphs.h), n_h=n_h, ell=ell, rho=rho,
        gamma_mean_exact=float(ell.sum() / n_h),
        gamma_var_exact=float(2.0 * (ell ** 2).sum() / n_h ** 2),
        c0_mean_exact=float(rho.sum() / n_h),
        c0_var_exact=float(2.0 * (rho ** 2).sum() / n_h ** 2),
        gamma_mean_mc=float(gam.mean()), gamma_var_mc=float(gam.var(ddof=1)),
        c0_mean_mc=float(c0.mean()), c0_var_mc=float(c0.var(ddof=1)),
        ks_gamma=float(ks_2samp(gam, gam_oracle).statistic),
        ks_c0=float(ks_2samp(c0, c0_oracle).statistic),
    )


@dataclass(frozen=True)
class AccuracyRecord:
    J: int
    n: int
    sup_errors: np.ndarray
    percentile90: float


def _sup_eval_lags(lags: np.ndarray, cutoff: float) -> np.ndarray:
    """Dense lag grid for approximating sup |c_hat - c|: stored lags,
    bin edges of the 1-NN rule, cutoff edges, plus a uniform fill."""
    mids = 0.5 * (lags[1:] + lags[:-1])
    eps = 1e-9
    pieces = [lags, mids - eps, mids + eps,
              np.array([max(cutoff - eps, 0.0), cutoff]),
              np.linspace(0.0, math.sqrt(2), 1201)]
    hs = np.unique(np.concatenate(pieces))
    return hs[(hs >= 0.0) & (hs <= math.sqrt(2))]


def estimator_accuracy(model: CovModel, j_values, config: EstimationConfig,
                       reps: int, seed: int) -> list[AccuracyRecord]:
    """Sup-norm covariance-estimation error sweep across grid scales.

    For each scale J, draws `reps` independent fields on the dyadic grid,
    estimates the covariance, and records the 90th percentile over
    replications of ``sup_h |c_hat(h) - c(h)|``, the sup being taken over a
    dense lag grid that includes every stored lag and the 1-NN bin edges.
    """
    if reps < 100:
        raise ValidationError("estimator_accuracy needs at least 100 replications")
    records = []
    for J in j_values:
        sites = dyadic_grid(J)
        table = lag_table(sites)
        factor = factorize(cov_matrix(model, sites))
        rng = stream(seed, int(J), "field")
        hs = _sup_eval_lags(table.lags, config.cutoff_lag)
        ctrue = np.asarray(cov(model, hs))
        sups = np.empty(reps)
        for r in range(reps):
            sample = FieldSample(sites, factor.sample(rng))
            emp = empirical_cov(sample, table, config)
            sups[r] = np.max(np.abs(np.asarray(emp.covariance_at(hs)) - ctrue))
        records.append(AccuracyRecord(J=int(J), n=len(sites), sup_errors=sups,
                                      percentile90=float(np.percentile(sups, 90))))
    return records
