"""Site sets on the unit square and their lag/pair combinatorics.

Provides dyadic grids, Bernoulli-thinned grids, sampled prediction-site
configurations, the table of observed lags with per-lag pair lists and
per-site degrees, and the lag-graph Laplacian/degree matrices used by the
distributional checks.

On a full dyadic grid at scale ``J`` every pairwise squared distance is an
integer multiple of ``2**(-2J)``; lags are therefore keyed by that integer,
so no floating-point binning is involved.  Irregular site sets fall back to
binning by squared distance rounded to a tolerance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .rng import stream

_MAX_GRID_SCALE = 12  # (1+2^12)^2 ~ 16.8M sites; beyond that the site count is absurd
DEFAULT_BIN_TOLERANCE = 1e-9

CORNER_REGION = (0.0, 0.25)  # corner sub-square [0, .25]^2
RING_CENTER = (0.5, 0.5)
RING_RADII = (0.3, 0.45)


@dataclass(frozen=True)
class Site:
    """A point of the unit square."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValidationError(f"site coordinates must be finite, got ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


def _as_coords(obj) -> np.ndarray:
    """Coerce a Site / pair / (n,2) array-like to a float ndarray."""
    if isinstance(obj, Site):
        return obj.as_array()
    if isinstance(obj, SiteSet):
        return obj.coords
    arr = np.asarray(obj, dtype=float)
    if arr.shape[-1] != 2:
        raise ValidationError(f"expected planar coordinates, got shape {arr.shape}")
    return arr


class SiteSet:
    """Ordered collection of pairwise-distinct planar sites.

    Parameters
    ----------
    coords : (n, 2) array
        Site coordinates, in order.
    grid_scale : int, optional
        Present when the set is the full dyadic grid at that scale; enables
        exact integer lag keys.
    grid_coords : (n, 2) int array, optional
        Integer grid coordinates (k, l) such that a site is
        ``(k * 2**-J, l * 2**-J)``.  Derived from `coords` when omitted.
    """

    def __init__(self, coords, grid_scale=None, grid_coords=None):
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValidationError(f"coords must be (n, 2), got {coords.shape}")
        if coords.shape[0] == 0:
            raise ValidationError("a SiteSet needs at least one site")
        if not np.all(np.isfinite(coords)):
            raise ValidationError("site coordinates must be finite")
        if np.unique(coords, axis=0).shape[0] != coords.shape[0]:
            raise ValidationError("sites must be pairwise distinct")
        self.coords = coords
        self.coords.setflags(write=False)
        self.grid_scale = None if grid_scale is None else int(grid_scale)
        if self.grid_scale is not None:
            side = 1 + 2 ** self.grid_scale
            if len(coords) != side * side:
                raise ValidationError(
                    f"grid_scale={grid_scale} implies {side * side} sites, got {len(coords)}"
                )
            if grid_coords is None:
                grid_coords = np.rint(coords * 2.0 ** self.grid_scale).astype(np.int64)
            else:
                grid_coords = np.asarray(grid_coords, dtype=np.int64)
            if not np.allclose(grid_coords * 2.0 ** -self.grid_scale, coords):
                raise ValidationError("coords are not on the dyadic grid claimed by grid_scale")
            expect = np.stack(
                np.meshgrid(np.arange(side), np.arange(side), indexing="ij"), axis=-1
            ).reshape(-1, 2)
            if not np.array_equal(grid_coords, expect):
                raise ValidationError("dyadic grid sites must be in lexicographic index order")
            self.grid_coords = grid_coords
            self.grid_coords.setflags(write=False)
        else:
            self.grid_coords = None

    def __len__(self) -> int:
        return len(self.coords)

    def __getitem__(self, i) -> Site:
        x, y = self.coords[i]
        return Site(float(x), float(y))

    def __eq__(self, other):
        return (
            isinstance(other, SiteSet)
            and self.grid_scale == other.grid_scale
            and np.array_equal(self.coords, other.coords)
        )

    def pairwise_distances(self) -> np.ndarray:
        d = self.coords[:, None, :] - self.coords[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", d, d))

    def content_hash(self) -> str:
        """Stable hash of coordinates, for report provenance."""
        import hashlib

        return hashlib.sha256(np.ascontiguousarray(self.coords).tobytes()).hexdigest()[:16]

    def to_csv(self, path_or_buf) -> None:
        """Write ``index,x,y`` rows (1-based index)."""
        close = False
        if isinstance(path_or_buf, (str, bytes)):
            fh = open(path_or_buf, "w", newline="")
            close = True
        else:
            fh = path_or_buf
        try:
            w = csv.writer(fh)
            w.writerow(["index", "x", "y"])
            for i, (x, y) in enumerate(self.coords, start=1):
                w.writerow([i, f"{x:.17g}", f"{y:.17g}"])
        finally:
            if close:
                fh.close()

    @classmethod
    def from_csv(cls, path_or_buf) -> "SiteSet":
        if isinstance(path_or_buf, (str, bytes)):
            with open(path_or_buf, newline="") as fh:
                return cls.from_csv(fh)
        rd = csv.reader(path_or_buf)
        header = next(rd)
        if [c.strip() for c in header] != ["index", "x", "y"]:
            raise ValidationError(f"expected header index,x,y got {header}")
        rows = [(float(r[1]), float(r[2])) for r in rd if r]
        return cls(np.array(rows))


def lexicographic_index(k: int, l: int, J: int) -> int:
    """1-based index of grid point (k, l) on the scale-J dyadic grid."""
    return k * (1 + 2 ** J) + (l + 1)


def dyadic_grid(J: int) -> SiteSet:
    """The dyadic grid at scale J: points (k 2^-J, l 2^-J), 0 <= k, l <= 2^J.

    Sites come in lexicographic order, so point (k, l) has 1-based index
    ``k (1+2^J) + (l+1)``.
    """
    J = int(J)
    if J < 0:
        raise ValidationError("grid scale J must be >= 0")
    if J > _MAX_GRID_SCALE:
        raise ValidationError(f"grid scale J={J} exceeds supported maximum {_MAX_GRID_SCALE}")
    side = 1 + 2 ** J
    kl = np.stack(np.meshgrid(np.arange(side), np.arange(side), indexing="ij"), axis=-1)
    grid_coords = kl.reshape(-1, 2).astype(np.int64)
    coords = grid_coords * 2.0 ** -J
    return SiteSet(coords, grid_scale=J, grid_coords=grid_coords)


@dataclass(frozen=True)
class LagTable:
    """Observed lags of a site set with pair lists, counts and degrees.

    ``pairs(h)`` lists ordered index pairs, so every unordered pair at a
    positive lag appears twice; the lag-0 entry pairs each site with itself
    and has count n.
    """

    sites: SiteSet
    keys: np.ndarray          # (m,) int64 squared-distance bin keys, ascending
    lags: np.ndarray          # (m,) float lag values, ascending
    key_scale: float          # squared distance = key * key_scale
    _pairs: list = field(repr=False)      # per lag: (n_h, 2) int array of ordered pairs
    _degrees: list = field(repr=False)    # per lag: (n,) int degree vector

    def __len__(self) -> int:
        return len(self.lags)

    @property
    def counts(self) -> np.ndarray:
        return np.array([p.shape[0] for p in self._pairs])

    def index_of(self, h: float, *, atol: float = 1e-9) -> int:
        """Index of the stored lag equal to `h`; error names the nearest lag."""
        i = int(np.argmin(np.abs(self.lags - h)))
        if abs(self.lags[i] - h) <= atol * max(1.0, abs(h)):
            return i
        raise ValidationError(
            f"lag {h!r} not observed on this site set; nearest available lag is {self.lags[i]!r}"
        )

    def pairs(self, h: float) -> np.ndarray:
        return self._pairs[self.index_of(h)]

    def n_h(self, h: float) -> int:
        return self._pairs[self.index_of(h)].shape[0]

    def degrees(self, h: float) -> np.ndarray:
        return self._degrees[self.index_of(h)]

    def degree(self, h: float, i: int) -> int:
        return int(self._degrees[self.index_of(h)][i])

    def nu(self, cutoff: float = math.sqrt(2)) -> float:
        """min of n_h/n over positive lags below `cutoff` (pair-fraction floor)."""
        n = len(self.sites)
        frac = [p.shape[0] / n for h, p in zip(self.lags, self._pairs) if 0.0 < h < cutoff]
        if not frac:
            raise ValidationError(f"no positive lag below cutoff {cutoff}")
        return min(frac)

    def to_csv(self, path_or_buf) -> None:
        """Write ``h,n_h`` diagnostic rows."""
        close = False
        if isinstance(path_or_buf, (str, bytes)):
            fh = open(path_or_buf, "w", newline="")
            close = True
        else:
            fh = path_or_buf
        try:
            w = csv.writer(fh)
            w.writerow(["h", "n_h"])
            for h, p in zip(self.lags, self._pairs):
                w.writerow([f"{h:.17g}", p.shape[0]])
        finally:
            if close:
                fh.close()


def lag_table(sites: SiteSet, tolerance: float | None = None) -> LagTable:
    """Group all ordered site pairs by distance.

    Full dyadic grids use exact integer squared-distance keys (in units of
    ``2**(-2J)``); other site sets bin squared distances rounded to
    `tolerance` (default 1e-9).
    """
    n = len(sites)
    if sites.grid_scale is not None and not tolerance:
        J = sites.grid_scale
        g = sites.grid_coords
        dk = g[:, 0][:, None] - g[:, 0][None, :]
        dl = g[:, 1][:, None] - g[:, 1][None, :]
        key_mat = dk * dk + dl * dl
        key_scale = 4.0 ** -J
    else:
        tol = DEFAULT_BIN_TOLERANCE if tolerance is None else float(tolerance)
        if tol <= 0:
            tol = DEFAULT_BIN_TOLERANCE
        d = sites.coords[:, None, :] - sites.coords[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", d, d)
        key_mat = np.rint(d2 / tol).astype(np.int64)
        key_scale = tol

    flat = key_mat.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_keys = flat[order]
    splits = np.flatnonzero(np.diff(sorted_keys)) + 1
    groups = np.split(order, splits)
    keys = sorted_keys[np.concatenate(([0], splits))] if len(splits) else sorted_keys[:1]

    pairs, degrees = [], []
    for grp in groups:
        ij = np.column_stack(np.divmod(grp, n)).astype(np.int64)
        # deterministic row order: by first index, then second
        ij = ij[np.lexsort((ij[:, 1], ij[:, 0]))]
        pairs.append(ij)
        degrees.append(np.bincount(ij[:, 0], minlength=n))
    lags = np.sqrt(keys.astype(float) * key_scale)
    return LagTable(sites=sites, keys=keys, lags=lags, key_scale=key_scale,
                    _pairs=pairs, _degrees=degrees)


@dataclass(frozen=True)
class LagGraphMatrices:
    """Laplacian and degree matrix of the lag graph at one positive lag."""

    h: float
    laplacian: np.ndarray
    degree_matrix: np.ndarray

    @property
    def max_degree(self) -> int:
        return int(self.degree_matrix.diagonal().max())


def lag_graph(sites: SiteSet, table: LagTable, h: float) -> LagGraphMatrices:
    """Laplacian L(n,h) and degree matrix D(n,h) for the pairs at lag h.

    L has diagonal n_h(i), off-diagonal -1 exactly where (i, j) is a pair at
    lag h; rows sum to zero and the largest eigenvalue is at most twice the
    maximum degree.
    """
    if h <= 0:
        raise ValidationError("lag graphs are defined for positive lags")
    idx = table.index_of(h)
    n = len(sites)
    deg = table._degrees[idx].astype(float)
    L = np.zeros((n, n))
    ij = table._pairs[idx]
    L[ij[:, 0], ij[:, 1]] = -1.0
    np.fill_diagonal(L, deg)
    D = np.diag(deg)
    return LagGraphMatrices(h=float(table.lags[idx]), laplacian=L, degree_matrix=D)


def bernoulli_thin(sites: SiteSet, p: float, seed: int) -> SiteSet:
    """Keep each site independently with probability p (deterministic per seed)."""
    if not 0.0 < p <= 1.0:
        raise ValidationError(f"thinning probability must be in (0, 1], got {p}")
    if p == 1.0:
        return sites
    keep = stream(seed, "thin").random(len(sites)) < p
    if keep.sum() < 2:
        raise ValidationError(
            f"thinning with p={p} left {int(keep.sum())} site(s); need at least 2"
        )
    return SiteSet(sites.coords[keep])


def _sample_outside(rng, d, inside) -> np.ndarray:
    """Rejection-sample d uniform points of the unit square outside a region."""
    out = []
    while len(out) < d:
        cand = rng.uniform(0.0, 1.0, size=(4 * (d - len(out)) + 8, 2))
        cand = cand[~inside(cand)]
        out.extend(cand.tolist())
    return np.array(out[:d])


def sample_prediction_sites(d: int, config: str = "uniform",
                            split: tuple[int, int] | None = None,
                            seed: int = 0) -> SiteSet:
    """Draw d prediction-input sites in one of three configurations.

    ``uniform`` draws d i.i.d. uniform sites.  ``corner`` puts the first
    split count uniformly in the corner sub-square [0, 0.25]^2 and the rest
    uniformly elsewhere; ``ring`` does the same with the annulus of radii
    [0.3, 0.45] around (0.5, 0.5).  `split` defaults to (d - 10, 10) for the
    clustered configurations.
    """
    d = int(d)
    if d <= 0:
        raise ValidationError("need at least one prediction site")
    config = config.lower()
    rng = stream(seed, "sites")
    if config == "uniform":
        return SiteSet(rng.uniform(0.0, 1.0, size=(d, 2)))
    if split is None:
        split = (d - 10, 10) if d > 10 else (d, 0)
    n_in, n_out = int(split[0]), int(split[1])
    if n_in + n_out != d or n_in < 0 or n_out < 0:
        raise ValidationError(f"split {split} must be non-negative and sum to d={d}")
    if config == "corner":
        lo, hi = CORNER_REGION
        inside = lambda c: (c[:, 0] >= lo) & (c[:, 0] <= hi) & (c[:, 1] >= lo) & (c[:, 1] <= hi)
        in_pts = rng.uniform(lo, hi, size=(n_in, 2))
    elif config == "ring":
        cx, cy = RING_CENTER
        r0, r1 = RING_RADII
        inside = lambda c: np.abs(np.hypot(c[:, 0] - cx, c[:, 1] - cy) - (r0 + r1) / 2) <= (r1 - r0) / 2
        radii = np.sqrt(rng.uniform(r0 ** 2, r1 ** 2, size=n_in))
        angles = rng.uniform(0.0, 2.0 * np.pi, size=n_in)
        in_pts = np.column_stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)])
    else:
        raise ValidationError(f"unknown configuration {config!r} (uniform|corner|ring)")
    out_pts = _sample_outside(rng, n_out, inside) if n_out else np.empty((0, 2))
    return SiteSet(np.vstack([in_pts, out_pts]))


def eval_grid(n_eval: int) -> SiteSet:
    """Regular inclusive sqrt(N) x sqrt(N) evaluation grid over the unit square."""
    g = math.isqrt(int(n_eval))
    if g * g != int(n_eval):
        raise ValidationError(f"evaluation-grid size must be a perfect square, got {n_eval}")
    xs = np.linspace(0.0, 1.0, g)
    coords = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)
    return SiteSet(coords)
