"""Market model: time grids, triangular volatility, exact path simulation.

The asset model is a d-dimensional exponential diffusion
``dS_t^i / S_t^i = r dt + sum_j sigma_ij(t) dW_t^j`` with a deterministic,
piecewise-constant, lower-triangular volatility matrix.  Log-prices are
simulated exactly per constant interval, so there is no discretisation bias
for this model class.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NotEllipticError, NotTriangularError, SingularVolError
from .rng import block_bounds, stream_normals

EPS_ELLIPTIC = 1e-8
_INV_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Regular exercise grid t_k = k T / n for k = 0..n."""

    maturity: float
    n_steps: int
    dates: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.maturity <= 0.0:
            raise ValueError(f"maturity must be positive, got {self.maturity}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        dates = np.linspace(0.0, float(self.maturity), int(self.n_steps) + 1)
        object.__setattr__(self, "dates", dates)

    @property
    def dt(self) -> float:
        return float(self.maturity) / float(self.n_steps)


@dataclass(frozen=True, eq=False)
class TriangularVol:
    """Piecewise-constant lower-triangular volatility with precomputed inverses.

    ``breaks`` has m+1 entries covering [0, inf) or [0, b_m]; ``mats[i]`` is the
    d x d matrix on [breaks[i], breaks[i+1]) and ``invs[i]`` its inverse.
    """

    dim: int
    breaks: np.ndarray
    mats: np.ndarray
    invs: np.ndarray
    rate: float = 0.0

    @property
    def is_diagonal(self) -> bool:
        off = self.mats - self.mats * np.eye(self.dim)[None, :, :]
        return bool(np.all(off == 0.0))

    @property
    def is_constant(self) -> bool:
        return self.mats.shape[0] == 1 or bool(np.all(self.mats == self.mats[0]))

    def diagonal_sigmas(self) -> np.ndarray:
        """Constant per-asset vols; only meaningful for constant diagonal vol."""
        if not (self.is_diagonal and self.is_constant):
            raise ValueError("diagonal_sigmas requires constant diagonal volatility")
        return np.diagonal(self.mats[0]).copy()

    def overlaps(self, a: float, b: float) -> list[tuple[int, float]]:
        """(interval index, overlap length) pairs covering [a, b]."""
        if b < a:
            raise ValueError(f"empty interval [{a}, {b}]")
        if b > self.breaks[-1]:
            raise ValueError(f"vol spec covers up to t={self.breaks[-1]}, asked for {b}")
        out = []
        for i in range(len(self.breaks) - 1):
            lo = max(a, float(self.breaks[i]))
            hi = min(b, float(self.breaks[i + 1]))
            if hi > lo:
                out.append((i, hi - lo))
        return out

    def gram_rho(self, a: float, b: float) -> np.ndarray:
        """integral over [a,b] of rho(u)' rho(u) du, entrywise (k,l)."""
        g = np.zeros((self.dim, self.dim))
        for i, length in self.overlaps(a, b):
            g += length * (self.invs[i].T @ self.invs[i])
        return g

    def union_times(self, grid: TimeGrid) -> np.ndarray:
        """Exercise dates refined with the vol breakpoints inside (0, T)."""
        inner = self.breaks[(self.breaks > 0.0) & (self.breaks < grid.maturity)]
        return np.unique(np.concatenate([grid.dates, inner]))


def build_vol(dim: int, spec, rate: float = 0.0, eps_ell: float = EPS_ELLIPTIC) -> TriangularVol:
    """Build a TriangularVol from a scalar, per-asset vector, matrix, or piecewise spec.

    Accepted specs:
      * float              -> constant diagonal, same sigma for every asset
      * sequence of d      -> constant diagonal, per-asset sigmas
      * d x d matrix       -> constant lower-triangular matrix
      * {"breaks": [...], "matrices": [...]} -> piecewise constant matrices

    Raises NotTriangularError / NotEllipticError / SingularVolError.
    """
    if isinstance(spec, dict):
        breaks = np.asarray(spec["breaks"], dtype=float)
        mats = np.asarray(spec["matrices"], dtype=float)
        if breaks.ndim != 1 or len(breaks) != len(mats) + 1:
            raise ValueError("piecewise spec needs len(breaks) == len(matrices) + 1")
        if breaks[0] != 0.0 or np.any(np.diff(breaks) <= 0.0):
            raise ValueError("breaks must start at 0 and strictly increase")
    else:
        arr = np.asarray(spec, dtype=float)
        if arr.ndim == 0:
            mat = np.eye(dim) * float(arr)
        elif arr.ndim == 1:
            if len(arr) != dim:
                raise ValueError(f"expected {dim} diagonal entries, got {len(arr)}")
            mat = np.diag(arr)
        elif arr.ndim == 2:
            if arr.shape != (dim, dim):
                raise ValueError(f"expected {dim}x{dim} matrix, got {arr.shape}")
            mat = arr
        else:
            raise ValueError(f"unsupported vol spec with ndim={arr.ndim}")
        breaks = np.array([0.0, np.inf])
        mats = mat[None, :, :]

    if mats.shape[1:] != (dim, dim):
        raise ValueError(f"matrices must be {dim}x{dim}, got {mats.shape[1:]}")
    upper = np.triu(mats, k=1)
    if np.any(upper != 0.0):
        raise NotTriangularError("sigma_ij must vanish for i < j")
    diag = np.diagonal(mats, axis1=1, axis2=2)
    if np.any(np.abs(diag) < eps_ell):
        raise NotEllipticError(f"min |sigma_ii| = {np.abs(diag).min():.3e} < {eps_ell:.1e}")

    invs = np.empty_like(mats)
    for i, m in enumerate(mats):
        try:
            invs[i] = np.linalg.inv(m)
        except np.linalg.LinAlgError as exc:
            raise SingularVolError(f"interval {i}: {exc}") from exc
        resid = np.abs(invs[i] @ m - np.eye(dim)).max()
        if not np.isfinite(resid) or resid > _INV_TOL:
            raise SingularVolError(f"interval {i}: rho sigma deviates from identity by {resid:.2e}")

    return TriangularVol(dim=dim, breaks=breaks, mats=mats, invs=invs, rate=float(rate))


@dataclass(frozen=True, eq=False)
class AssetPaths:
    """Simulated Brownian and asset values on an exercise grid.

    ``w`` holds the Brownian vector at every union time (exercise dates plus
    vol breakpoints); ``s`` holds asset values at exercise dates only.
    ``y`` (optional) holds the accumulated integrals Y_ij = int sigma_ij dW^j
    at exercise dates, stored only when the vol is not diagonal.
    Immutable after construction and safe to share across workers.
    """

    vol: TriangularVol
    grid: TimeGrid
    s0: np.ndarray
    rate: float
    seed: int
    union: np.ndarray
    exercise_idx: np.ndarray
    w: np.ndarray
    s: np.ndarray
    y: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.w.shape[0]

    @property
    def dim(self) -> int:
        return self.w.shape[2]

    def w_at_date(self, k: int) -> np.ndarray:
        """Brownian vector at exercise date t_k, shape (n_paths, d)."""
        return self.w[:, self.exercise_idx[k], :]

    def dw_between(self, a: float, b: float) -> list[tuple[int, np.ndarray]]:
        """Per union interval inside [a, b]: (vol interval index, Brownian increment)."""
        out = []
        for m in range(len(self.union) - 1):
            lo, hi = float(self.union[m]), float(self.union[m + 1])
            if lo >= a - 1e-15 and hi <= b + 1e-15:
                (vidx, _), = self.vol.overlaps(lo, hi)
                out.append((vidx, self.w[:, m + 1, :] - self.w[:, m, :]))
        return out


def simulate_paths(
    vol: TriangularVol,
    grid: TimeGrid,
    s0,
    r: float,
    n_paths: int,
    seed: int,
    n_workers: int = 1,
    brownian_scale: float = 1.0,
    store_y: bool | None = None,
) -> AssetPaths:
    """Simulate asset paths with exact per-interval log-space increments.

    Parameters
    ----------
    vol, grid : model and exercise schedule; vol must cover [0, T].
    s0 : initial asset vector (componentwise positive) or scalar.
    r : risk-neutral drift rate.
    n_paths, seed : sample size and master seed.
    n_workers : thread fan-out over fixed path blocks.  The output is a pure
        function of (seed, parameters) and bit-identical for any worker count.
    brownian_scale : test hook; 0.0 freezes every Brownian increment at zero.
    store_y : force storing the Y integrals (default: only for non-diagonal vol).
    """
    d = vol.dim
    s0 = np.broadcast_to(np.asarray(s0, dtype=float), (d,)).copy()
    if np.any(s0 <= 0.0):
        raise ValueError("initial asset values must be positive")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")

    union = vol.union_times(grid)
    n_union = len(union) - 1
    ex_idx = np.searchsorted(union, grid.dates)
    if store_y is None:
        store_y = not vol.is_diagonal

    n_ex = grid.n_steps + 1
    w = np.empty((n_paths, n_union + 1, d))
    s = np.empty((n_paths, n_ex, d))
    y = np.empty((n_paths, n_ex, d, d)) if store_y else None

    # Per union interval: vol matrix index, dt, and the log-drift vector.
    seg = []
    for m in range(n_union):
        (vidx, _), = vol.overlaps(float(union[m]), float(union[m + 1]))
        dt = float(union[m + 1] - union[m])
        sig = vol.mats[vidx]
        drift = (r - 0.5 * np.sum(sig * sig, axis=1)) * dt
        seg.append((dt, sig, drift))

    ex_pos = {int(idx): k for k, idx in enumerate(ex_idx)}
    log_s0 = np.log(s0)

    def fill_block(lo: int, hi: int, block_id: int) -> None:
        nb = hi - lo
        wb = np.zeros((nb, d))
        log_sb = np.tile(log_s0, (nb, 1))
        yb = np.zeros((nb, d, d))
        w[lo:hi, 0, :] = 0.0
        s[lo:hi, 0, :] = s0
        if store_y:
            y[lo:hi, 0, :, :] = 0.0
        for m, (dt, sig, drift) in enumerate(seg):
            z = stream_normals(seed, m, block_id, (nb, d))
            dw = (brownian_scale * np.sqrt(dt)) * z
            wb += dw
            log_sb += drift + dw @ sig.T
            if store_y:
                yb += sig[None, :, :] * dw[:, None, :]
            w[lo:hi, m + 1, :] = wb
            k = ex_pos.get(m + 1)
            if k is not None:
                s[lo:hi, k, :] = np.exp(log_sb)
                if store_y:
                    y[lo:hi, k, :, :] = yb

    bounds = block_bounds(n_paths)
    if n_workers <= 1 or len(bounds) == 1:
        for b, (lo, hi) in enumerate(bounds):
            fill_block(lo, hi, b)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(fill_block, lo, hi, b) for b, (lo, hi) in enumerate(bounds)]
            for f in futures:
                f.result()

    return AssetPaths(
        vol=vol, grid=grid, s0=s0, rate=float(r), seed=int(seed),
        union=union, exercise_idx=ex_idx, w=w, s=s, y=y,
    )
