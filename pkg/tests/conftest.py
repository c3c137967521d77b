"""Shared fixtures and brute-force oracles used across the test suite."""

import numpy as np
import pytest

from gridkrig import CovModel, SiteSet, dyadic_grid


@pytest.fixture(scope="session")
def grid_j1():
    return dyadic_grid(1)


@pytest.fixture(scope="session")
def grid_j2():
    return dyadic_grid(2)


@pytest.fixture(scope="session")
def grid_j3():
    return dyadic_grid(3)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def brute_force_lag_stats(coords: np.ndarray, values: np.ndarray, decimals: int = 9):
    """O(n^2) reference for the per-lag estimators, keyed by rounded distance.

    Returns {lag: (n_h, c_hat, gamma_hat, c_hat0)} including the lag-0 class
    of self pairs; every unordered pair at a positive lag counts twice.
    """
    n = len(coords)
    sums = {}
    for i in range(n):
        for j in range(n):
            h = round(float(np.hypot(*(coords[i] - coords[j]))), decimals)
            rec = sums.setdefault(h, [0, 0.0, 0.0, 0.0])
            rec[0] += 1
            rec[1] += values[i] * values[j]
            rec[2] += (values[i] - values[j]) ** 2
            rec[3] += values[i] ** 2
    out = {}
    for h, (n_h, prod, sqdiff, sq) in sorted(sums.items()):
        out[h] = (n_h, prod / n_h, sqdiff / (2 * n_h), sq / n_h)
    return out


def brute_force_cov_matrix(model: CovModel, coords: np.ndarray) -> np.ndarray:
    from gridkrig import cov_vec

    d = len(coords)
    out = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            out[i, j] = cov_vec(model, coords[i] - coords[j])
    return out


def random_sites(rng, d: int, min_sep: float = 0.02) -> SiteSet:
    """Uniform sites with a minimum separation, to keep systems well posed."""
    pts = []
    while len(pts) < d:
        cand = rng.uniform(0.0, 1.0, size=2)
        if all(np.hypot(*(cand - p)) >= min_sep for p in pts):
            pts.append(cand)
    return SiteSet(np.array(pts))
