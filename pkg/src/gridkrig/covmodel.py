"""Isotropic covariance families and covariance matrices/vectors over sites.

Six unit-variance families are supported: truncated power law, Gaussian,
cubic, spherical, exponential and Matern.  The first three of the compactly
supported ones vanish beyond the correlation length theta, which is what the
estimation cutoff machinery relies on.

An optional anisotropy ratio alpha in (0, 1] compresses the y-axis before
the isotropic formula is evaluated, so ``alpha=1`` is exactly isotropic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .errors import ValidationError
from .grid import SiteSet, _as_coords

FAMILIES = ("tpl", "gaussian", "cubic", "spherical", "exponential", "matern")
COMPACT_FAMILIES = ("tpl", "cubic", "spherical")


@dataclass(frozen=True)
class CovModel:
    """A covariance family with correlation length `theta`.

    Parameters
    ----------
    family : str
        One of ``tpl``, ``gaussian``, ``cubic``, ``spherical``,
        ``exponential``, ``matern``.
    theta : float
        Correlation length, in domain units of the unit square.
    nu : float, optional
        Matern smoothness (required for ``matern``, ignored otherwise).
    alpha : float
        Anisotropy ratio in (0, 1]; 1 means isotropic.
    grad_bound : float, optional
        Known bound on |c'| over the in-cutoff range, when available.
    sup_bound : float, optional
        Known bound on sup |c|, when available.
    """

    family: str
    theta: float
    nu: float | None = None
    alpha: float = 1.0
    grad_bound: float | None = None
    sup_bound: float | None = None

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in FAMILIES:
            raise ValidationError(f"unknown covariance family {self.family!r}; choose from {FAMILIES}")
        object.__setattr__(self, "family", fam)
        if not self.theta > 0:
            raise ValidationError(f"theta must be positive, got {self.theta}")
        if fam == "matern":
            if self.nu is None or not self.nu > 0:
                raise ValidationError("matern needs a positive smoothness nu")
        if not 0.0 < self.alpha <= 1.0:
            raise ValidationError(f"anisotropy ratio must be in (0, 1], got {self.alpha}")

    @property
    def compact_support(self) -> float | None:
        """Lag beyond which c vanishes, for the compactly supported families."""
        return self.theta if self.family in COMPACT_FAMILIES else None

    def with_theta(self, theta: float) -> "CovModel":
        return replace(self, theta=theta)


def _matern(u: np.ndarray, nu: float) -> np.ndarray:
    """Matern correlation at scaled lag u = h/theta."""
    if nu == 1.5:
        t = math.sqrt(3.0) * u
        return (1.0 + t) * np.exp(-t)
    if nu == 2.5:
        t = math.sqrt(5.0) * u
        return (1.0 + t + t * t / 3.0) * np.exp(-t)
    t = np.atleast_1d(math.sqrt(2.0 * nu) * u)
    out = np.ones_like(t)
    pos = t > 0
    tp = t[pos]
    val = (2.0 ** (1.0 - nu) / gamma_fn(nu)) * tp ** nu * kv(nu, tp)
    # kv underflows to 0 for large argument, which is the correct limit
    out[pos] = np.where(np.isfinite(val), val, 0.0)
    return out.reshape(np.shape(u))


def cov(model: CovModel, h) -> np.ndarray | float:
    """Covariance c(h) at isotropic lag h >= 0 (vectorized)."""
    h_arr = np.asarray(h, dtype=float)
    if np.any(h_arr < 0):
        raise ValidationError("lags must be non-negative")
    u = h_arr / model.theta
    fam = model.family
    if fam == "tpl":
        out = np.where(u <= 1.0, np.clip(1.0 - u, 0.0, None) ** 1.5, 0.0)
    elif fam == "gaussian":
        out = np.exp(-(u ** 2))
    elif fam == "cubic":
        poly = 7.0 * u ** 2 - 8.75 * u ** 3 + 3.5 * u ** 5 - 0.75 * u ** 7
        out = np.where(u <= 1.0, 1.0 - poly, 0.0)
    elif fam == "spherical":
        out = np.where(u <= 1.0, 1.0 - (1.5 * u - 0.5 * u ** 3), 0.0)
    elif fam == "exponential":
        out = np.exp(-u)
    else:
        out = _matern(u, float(model.nu))
    return out if out.ndim else float(out)


def semivariogram(model: CovModel, h) -> np.ndarray | float:
    """gamma(h) = c(0) - c(h)."""
    return cov(model, 0.0) - cov(model, h)


def cov_vec(model: CovModel, delta) -> np.ndarray | float:
    """Covariance at a planar displacement, honoring anisotropy.

    The y component is divided by alpha before the isotropic length is
    taken, so alpha=1 reduces to ``cov(model, ||delta||)`` exactly.
    """
    d = np.asarray(delta, dtype=float)
    if d.shape[-1] != 2:
        raise ValidationError(f"displacement must have 2 components, got shape {d.shape}")
    if model.alpha == 1.0:
        length = np.sqrt(np.einsum("...k,...k->...", d, d))
    else:
        scaled = d / np.array([1.0, model.alpha])
        length = np.sqrt(np.einsum("...k,...k->...", scaled, scaled))
    return cov(model, length)


@dataclass(frozen=True)
class CovMatrix:
    """Covariance matrix of a site set under a model: entries c(s_i - s_j)."""

    sites: SiteSet
    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def shape(self):
        return self.values.shape


def cov_matrix(model: CovModel, sites: SiteSet) -> CovMatrix:
    """Assemble the d x d covariance matrix over `sites` (symmetric, unit diagonal)."""
    coords = _as_coords(sites)
    disp = coords[:, None, :] - coords[None, :, :]
    vals = np.asarray(cov_vec(model, disp), dtype=float)
    vals = 0.5 * (vals + vals.T)  # exact symmetry despite rounding
    np.fill_diagonal(vals, cov(model, 0.0))
    return CovMatrix(sites=sites if isinstance(sites, SiteSet) else SiteSet(coords), values=vals)


def cov_vector(model: CovModel, s, sites: SiteSet) -> np.ndarray:
    """Covariance vector (c(s - s_1), ..., c(s - s_d))."""
    s_arr = _as_coords(s)
    coords = _as_coords(sites)
    return np.asarray(cov_vec(model, s_arr - coords), dtype=float)


THETA_UNITS = ("cells", "train_cells", "domain")


@dataclass(frozen=True)
class ModelSpec:
    """Covariance model as configured, before theta-unit resolution.

    ``theta_units`` chooses how the configured theta maps onto the unit
    square: ``cells`` divides by the evaluation-grid side (so theta counts
    evaluation-grid cells), ``train_cells`` multiplies by the training-grid
    spacing ``2**-J``, and ``domain`` leaves theta untouched.
    """

    family: str
    theta: float
    nu: float | None = None
    alpha: float = 1.0
    theta_units: str = "cells"

    def __post_init__(self):
        if self.theta_units not in THETA_UNITS:
            raise ValidationError(f"theta_units must be one of {THETA_UNITS}")

    def resolve(self, eval_grid_side: int | None = None,
                train_scale: int | None = None) -> CovModel:
        """Build the domain-unit CovModel given the grids of the experiment."""
        if self.theta_units == "domain":
            theta = self.theta
        elif self.theta_units == "cells":
            if eval_grid_side is None:
                raise ValidationError("theta_units='cells' needs the evaluation-grid side")
            theta = self.theta / float(eval_grid_side)
        else:
            if train_scale is None:
                raise ValidationError("theta_units='train_cells' needs the training grid scale")
            theta = self.theta * 2.0 ** -int(train_scale)
        return CovModel(family=self.family, theta=theta, nu=self.nu, alpha=self.alpha)


def model_spec_from_config(block: dict) -> ModelSpec:
    """Parse a ``{family, theta, nu?, alpha?, theta_units?}`` config block."""
    if "family" not in block or "theta" not in block:
        raise ValidationError("model config needs at least 'family' and 'theta'")
    known = {"family", "theta", "nu", "alpha", "theta_units"}
    extra = set(block) - known
    if extra:
        raise ValidationError(f"unknown model config keys: {sorted(extra)}")
    return ModelSpec(
        family=str(block["family"]).lower(),
        theta=float(block["theta"]),
        nu=None if block.get("nu") is None else float(block["nu"]),
        alpha=float(block.get("alpha", 1.0)),
        theta_units=str(block.get("theta_units", "cells")),
    )
