"""American/Bermudan pricing by backward stopping-time dynamic programming.

The continuation value at each exercise date is a quotient of Monte Carlo
means over the same path population (square Monte Carlo): every in-the-money
path queries an estimator built from all paths.  Estimator variants:

  * conditioning on:  numerator averages cashflow * prod_k h_k(x_k, W_t^k)
    with the closed-form kernels; denominator is closed form (P1) or the
    kernel mean (P2).
  * conditioning off: weighted indicator cashflow * 1_{S_s >= x} * Gamma / prod S_s.
  * P2eq uses equal numerator/denominator counts; P2opt calibrates the
    optimal split per date (pooled over query points).

Exercise is allowed at t_1..t_n; the date-0 value is the maximum of the
immediate payoff and the mean discounted cashflow.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np
from scipy.stats import norm

from .errors import DimensionMismatchError, NotDiagonalError, RegressionSingularError
from .kernels import (
    DiagonalKernelParams,
    denominator_closed_form,
    denominator_factors,
    kernel_second_moment,
    query_features,
    sample_features,
)
from .market_model import AssetPaths, TimeGrid, build_vol, simulate_paths
from .ratio import QuotientPlan, pooled_plan
from .rng import replication_seed
from .weights import path_weights

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    def threadpool_limits(limits=None):
        return nullcontext()

MCM_METHODS = ("P1", "P2eq", "P2opt")
PILOT_QUERIES = 512
PILOT_SAMPLES = 4096
QUERY_BLOCK = 1024


# ---------------------------------------------------------------------------
# Payoffs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Payoff:
    """Contract payoff: geometric-average put, put on minimum, call on maximum."""

    kind: str
    dim: int
    strike: float

    def __post_init__(self):
        if self.kind not in ("geometric_put", "min_put", "max_call"):
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.kind in ("min_put", "max_call") and self.dim != 2:
            raise DimensionMismatchError(f"{self.kind} requires dim=2, got {self.dim}")
        if self.dim < 1:
            raise DimensionMismatchError(f"dim must be >= 1, got {self.dim}")
        if self.strike <= 0.0:
            raise ValueError("strike must be positive")

    def __call__(self, s: np.ndarray) -> np.ndarray:
        return evaluate_payoff(self, s)


def evaluate_payoff(payoff: Payoff, s: np.ndarray) -> np.ndarray:
    """Payoff value for asset vectors of shape (..., d)."""
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != payoff.dim:
        raise DimensionMismatchError(f"expected {payoff.dim} assets, got {s.shape[-1]}")
    k = payoff.strike
    if payoff.kind == "geometric_put":
        geo = np.exp(np.mean(np.log(s), axis=-1))
        return np.maximum(k - geo, 0.0)
    if payoff.kind == "min_put":
        return np.maximum(k - np.min(s, axis=-1), 0.0)
    return np.maximum(np.max(s, axis=-1) - k, 0.0)


@dataclass(frozen=True)
class PriceEstimate:
    """Replicated price with its spread and diagnostics."""

    price: float
    std: float
    values: tuple[float, ...]
    fallbacks: int
    runtime_s: float


# ---------------------------------------------------------------------------
# Continuation estimators over one date (vectorised over query paths)
# ---------------------------------------------------------------------------

def _pilot_moments(kmat: np.ndarray, cf: np.ndarray, scale: np.ndarray | None = None):
    """Per-query first/second moments of X = cf*K and Y = K over the columns.

    Rows are rescaled to unit kernel mean first (the split plan is invariant
    under joint rescaling of X and Y); kernel products can sit at 1e-30 in
    high dimension, far below any absolute floor.
    """
    m = kmat.shape[1]
    if scale is None:
        # abs-mean keeps the scaling positive for signed raw weights
        scale = np.mean(np.abs(kmat), axis=1)
    good = scale > 0.0
    kn = np.where(good[:, None], kmat / np.where(good, scale, 1.0)[:, None], 0.0)
    rhs = np.stack([cf, np.ones(m), cf * cf], axis=1)
    first = kn @ rhs / m                       # E[X], E[Y], -
    ksq = kn * kn
    second = ksq @ rhs / m                     # E[XY], E[Y^2], E[X^2]
    a = first[:, 0]
    b = np.where(good, first[:, 1], 0.0)
    var_x = np.maximum(second[:, 2] - a * a, 0.0)
    var_y = np.maximum(second[:, 1] - b * b, 0.0)
    cov = second[:, 0] - a * b
    s1 = np.sqrt(var_x)
    s2 = np.sqrt(var_y)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = cov / (s1 * s2)
    return a, b, s1, s2, rho


def _date_plan(
    u: np.ndarray,
    v: np.ndarray,
    cf: np.ndarray,
    calibration: str,
    m2_eps: float,
    closed_b: np.ndarray | None,
    closed_s2: np.ndarray | None,
) -> QuotientPlan:
    """Pooled sample-split plan for one exercise date (P2opt only).

    The pilot kernel rows are normalised to unit denominator mean (closed form
    when available, otherwise the simulated mean); the split plan is invariant
    under that joint rescaling and the statistics stay at sane magnitudes.
    """
    n = v.shape[0]
    uq = u[:PILOT_QUERIES]
    m = min(PILOT_SAMPLES, n)
    kmat = np.exp(uq @ v[:m].T)
    closed = calibration == "closed" and closed_b is not None
    scale = closed_b[: len(uq)].copy() if closed else kmat.mean(axis=1)
    good = scale > 0.0
    kmat = np.where(good[:, None], kmat / np.where(good, scale, 1.0)[:, None], 0.0)
    unit = np.ones(len(uq))
    a, b, s1, s2, rho = _pilot_moments(kmat, cf[:m], scale=unit)
    if closed:
        b = np.where(good, 1.0, 0.0)
        s2 = np.where(good, closed_s2[: len(uq)] / np.where(good, scale, 1.0), 0.0)
        return pooled_plan(a, b, s1, s2, rho, n, b_closed_form=True)
    if calibration == "M2":
        plan = pooled_plan(a, b, s1, s2, rho, n)
        lam = plan.lam
        for _ in range(50):
            msub = max(2, round(lam * m))
            if plan.regime == "case1":
                a = kmat[:, :msub] @ cf[:msub] / msub
            else:
                b = kmat[:, :msub].mean(axis=1)
            new = pooled_plan(a, b, s1, s2, rho, n)
            if abs(new.lam - lam) < m2_eps:
                return new
            lam = new.lam
            plan = new
        return plan
    return pooled_plan(a, b, s1, s2, rho, n)


def _mcm_sweep(
    paths: AssetPaths,
    payoff: Payoff,
    method: str,
    conditioning: bool,
    calibration: str = "M1",
    m2_eps: float = 1e-3,
) -> tuple[float, int]:
    """One backward induction pass; returns (price, degenerate-denominator count)."""
    if method not in MCM_METHODS:
        raise ValueError(f"method must be one of {MCM_METHODS}, got {method!r}")
    if conditioning or method == "P1":
        if not (paths.vol.is_diagonal and paths.vol.is_constant):
            if method == "P1":
                raise NotDiagonalError("P1 needs the closed-form denominator (diagonal constant vol)")
            conditioning = False
    n = paths.n_paths
    r = paths.rate
    dates = paths.grid.dates
    n_steps = paths.grid.n_steps

    cf = np.exp(-r * dates[-1]) * payoff(paths.s[:, -1, :])
    fallbacks = 0
    buf = np.empty((QUERY_BLOCK, n))

    for k in range(n_steps - 1, 0, -1):
        s_k = paths.s[:, k, :]
        intrinsic = payoff(s_k)
        itm = np.flatnonzero(intrinsic > 0.0)
        if itm.size == 0:
            continue
        x_itm = s_k[itm]
        grow = float(np.exp(r * dates[k]))

        if conditioning:
            params = DiagonalKernelParams.from_model(
                paths.vol, float(dates[k]), float(dates[k + 1]), r, paths.s0
            )
            v = sample_features(params, paths.w_at_date(k + 1))
            u = query_features(params, x_itm)
            closed_b = closed_s2 = None
            if method == "P1" or calibration == "closed":
                closed_b = denominator_closed_form(params, x_itm)
                if calibration == "closed":
                    e2 = kernel_second_moment(params, x_itm)
                    closed_s2 = np.sqrt(np.maximum(e2 - closed_b**2, 0.0))
            n_num, n_den = n, n
            if method == "P2opt":
                plan = _date_plan(u, v, cf, calibration, m2_eps, closed_b, closed_s2)
                n_num, n_den = plan.n_prime, plan.n
            rhs = np.zeros((n, 2))
            rhs[:n_num, 0] = cf[:n_num] / n_num
            if method != "P1":
                rhs[:n_den, 1] = 1.0 / n_den
            vt = np.ascontiguousarray(v.T)
            num = np.empty(itm.size)
            den = np.empty(itm.size)
            for lo in range(0, itm.size, QUERY_BLOCK):
                hi = min(lo + QUERY_BLOCK, itm.size)
                kblk = buf[: hi - lo]
                np.matmul(u[lo:hi], vt, out=kblk)
                np.exp(kblk, out=kblk)
                nd = kblk @ rhs
                num[lo:hi] = nd[:, 0]
                den[lo:hi] = nd[:, 1]
            if method == "P1":
                den = closed_b
            bad = ~(den > 1e-300)
        else:
            w = path_weights(paths, k, k + 1)
            floor = 1e-12 * float(np.mean(np.abs(w)))
            n_num, n_den = n, n
            if method == "P2opt":
                plan = _raw_date_plan(paths, s_k, x_itm, cf, w, n)
                n_num, n_den = plan.n_prime, plan.n
            closed_d = None
            if method == "P1":
                params = DiagonalKernelParams.from_model(
                    paths.vol, float(dates[k]), float(dates[k + 1]), r, paths.s0
                )
                scale = params.sigma * params.s * (params.t - params.s)
                closed_d = np.prod(denominator_factors(params, x_itm) / scale, axis=-1)
            rhs = np.zeros((n, 2))
            rhs[:n_num, 0] = (cf[:n_num] * w[:n_num]) / n_num
            if method != "P1":
                rhs[:n_den, 1] = w[:n_den] / n_den
            num = np.empty(itm.size)
            den = np.empty(itm.size)
            for lo in range(0, itm.size, QUERY_BLOCK):
                hi = min(lo + QUERY_BLOCK, itm.size)
                kblk = buf[: hi - lo]
                _indicator_block(s_k, x_itm[lo:hi], out=kblk)
                nd = kblk @ rhs
                num[lo:hi] = nd[:, 0]
                den[lo:hi] = nd[:, 1]
            if method == "P1":
                den = closed_d
            bad = ~(den > floor)

        fallbacks += int(np.count_nonzero(bad))
        with np.errstate(divide="ignore", invalid="ignore"):
            cont = grow * num / den
        cont[bad] = np.inf
        exercised = itm[intrinsic[itm] > cont]
        cf[exercised] = np.exp(-r * dates[k]) * intrinsic[exercised]

    return max(float(payoff(paths.s0[None, :])[0]), float(np.mean(cf))), fallbacks


def _indicator_block(s_k: np.ndarray, x_blk: np.ndarray, out: np.ndarray) -> None:
    """out[q, p] = 1.0 if S_s^p >= x_q componentwise."""
    nb = len(x_blk)
    acc = s_k[None, :, 0] >= x_blk[:, 0][:, None]
    for j in range(1, s_k.shape[1]):
        acc &= s_k[None, :, j] >= x_blk[:, j][:, None]
    out[:nb] = acc


def _raw_date_plan(paths, s_k, x_itm, cf, w, n) -> QuotientPlan:
    sub_q = x_itm[:PILOT_QUERIES]
    m = min(PILOT_SAMPLES, n)
    ind = np.empty((len(sub_q), m))
    _indicator_block(s_k[:m], sub_q, out=ind)
    kmat = ind * w[:m]
    a, b, s1, s2, rho = _pilot_moments(kmat, cf[:m])
    return pooled_plan(a, b, s1, s2, rho, n)


# ---------------------------------------------------------------------------
# Longstaff-Schwartz baseline
# ---------------------------------------------------------------------------

def _ls_basis(s: np.ndarray, strike: float, basis: str) -> np.ndarray:
    u = s / strike
    if basis == "monomials3":
        if s.shape[-1] != 1:
            raise ValueError("monomials3 basis is for the one-dimensional contract")
        z = u[:, 0]
        return np.stack([np.ones_like(z), z, z * z, z**3], axis=1)
    if basis == "linear":
        return np.concatenate([np.ones((len(u), 1)), u], axis=1)
    raise ValueError(f"unknown basis {basis!r}")


def _ls_sweep(paths: AssetPaths, payoff: Payoff, basis: str) -> tuple[float, int]:
    """Regression-based backward induction on in-the-money paths."""
    r = paths.rate
    dates = paths.grid.dates
    cf = np.exp(-r * dates[-1]) * payoff(paths.s[:, -1, :])
    for k in range(paths.grid.n_steps - 1, 0, -1):
        s_k = paths.s[:, k, :]
        intrinsic = payoff(s_k)
        itm = np.flatnonzero(intrinsic > 0.0)
        if itm.size == 0:
            continue
        bmat = _ls_basis(s_k[itm], payoff.strike, basis)
        target = np.exp(r * dates[k]) * cf[itm]
        gram = bmat.T @ bmat
        try:
            coef = np.linalg.solve(gram, bmat.T @ target)
        except np.linalg.LinAlgError:
            # rank-deficient normal equations: ridge fallback
            try:
                coef = np.linalg.solve(gram + 1e-10 * np.eye(gram.shape[0]), bmat.T @ target)
            except np.linalg.LinAlgError as exc:
                raise RegressionSingularError(f"normal equations singular at date {k}") from exc
        cont = bmat @ coef
        exercised = itm[intrinsic[itm] > cont]
        cf[exercised] = np.exp(-r * dates[k]) * intrinsic[exercised]
    return max(float(payoff(paths.s0[None, :])[0]), float(np.mean(cf))), 0


# ---------------------------------------------------------------------------
# Replicated entry points
# ---------------------------------------------------------------------------

def _one_replication(args) -> tuple[float, int]:
    (
        kind, dim, strike, vol_spec, maturity, n_steps, s0, r,
        n_paths, seed, rep, method, conditioning, calibration, m2_eps, basis,
    ) = args
    payoff = Payoff(kind=kind, dim=dim, strike=strike)
    vol = build_vol(dim, vol_spec, rate=r)
    grid = TimeGrid(maturity, n_steps)
    with threadpool_limits(limits=1):
        paths = simulate_paths(vol, grid, s0, r, n_paths, replication_seed(seed, rep))
        if method == "LS":
            return _ls_sweep(paths, payoff, basis)
        return _mcm_sweep(paths, payoff, method, conditioning, calibration, m2_eps)


def _run_replications(args_list, n_workers: int) -> list[tuple[float, int]]:
    if n_workers <= 1 or len(args_list) == 1:
        return [_one_replication(a) for a in args_list]
    ctx = get_context("spawn")
    with ProcessPoolExecutor(max_workers=n_workers, mp_context=ctx) as pool:
        return list(pool.map(_one_replication, args_list))


def price_mcm(
    payoff: Payoff,
    vol_spec,
    maturity: float,
    n_steps: int,
    s0,
    r: float,
    n_paths: int,
    seed: int,
    method: str = "P2opt",
    conditioning: bool = True,
    replications: int = 16,
    n_workers: int = 1,
    calibration: str = "closed",
    m2_eps: float = 1e-3,
) -> PriceEstimate:
    """Replicated Malliavin-weight Monte Carlo price.

    Each replication simulates its own paths from a derived seed and runs the
    backward induction with the chosen continuation estimator.  Results are a
    pure function of (seed, parameters), independent of n_workers.
    """
    if method == "LS":
        raise ValueError("use price_ls for the regression baseline")
    t0 = time.perf_counter()
    args = [
        (payoff.kind, payoff.dim, payoff.strike, vol_spec, maturity, n_steps, s0, r,
         n_paths, seed, i, method, conditioning, calibration, m2_eps, None)
        for i in range(replications)
    ]
    out = _run_replications(args, n_workers)
    values = tuple(v for v, _ in out)
    fallbacks = sum(f for _, f in out)
    std = float(np.std(values)) if len(values) > 1 else 0.0
    return PriceEstimate(float(np.mean(values)), std, values, fallbacks, time.perf_counter() - t0)


def price_ls(
    payoff: Payoff,
    vol_spec,
    maturity: float,
    n_steps: int,
    s0,
    r: float,
    n_paths: int,
    seed: int,
    basis: str | None = None,
    replications: int = 16,
    n_workers: int = 1,
) -> PriceEstimate:
    """Replicated Longstaff-Schwartz price.

    Default basis: cubic monomials for d = 1, linear in the assets otherwise.
    """
    if basis is None:
        basis = "monomials3" if payoff.dim == 1 else "linear"
    t0 = time.perf_counter()
    args = [
        (payoff.kind, payoff.dim, payoff.strike, vol_spec, maturity, n_steps, s0, r,
         n_paths, seed, i, "LS", False, "M1", 1e-3, basis)
        for i in range(replications)
    ]
    out = _run_replications(args, n_workers)
    values = tuple(v for v, _ in out)
    std = float(np.std(values)) if len(values) > 1 else 0.0
    return PriceEstimate(float(np.mean(values)), std, values, 0, time.perf_counter() - t0)


def european_value(paths: AssetPaths, payoff: Payoff) -> float:
    """Exercise-at-maturity value on the same paths (monotonicity reference)."""
    return float(np.mean(np.exp(-paths.rate * paths.grid.maturity) * payoff(paths.s[:, -1, :])))


# ---------------------------------------------------------------------------
# Binomial-tree oracle (1D equivalence of the geometric basket)
# ---------------------------------------------------------------------------

def geometric_equivalent_1d(dim: int, sigma: float) -> tuple[float, float]:
    """(vol, continuous yield) of the 1D lognormal carrying the geometric mean.

    The geometric mean of d independent assets with equal vol sigma is
    lognormal with vol sigma/sqrt(d) and drift shortfall (sigma^2 - vol^2)/2,
    absorbed as a dividend-like yield.
    """
    sig_g = sigma / np.sqrt(dim)
    q = 0.5 * (sigma**2 - sig_g**2)
    return float(sig_g), float(q)


def tree_american_put(
    s0: float, strike: float, r: float, q: float, sigma: float, maturity: float, n_tree_steps: int
) -> float:
    """CRR binomial value of an American put with a continuous yield."""
    dt = maturity / n_tree_steps
    up = np.exp(sigma * np.sqrt(dt))
    dn = 1.0 / up
    p = (np.exp((r - q) * dt) - dn) / (up - dn)
    if not 0.0 < p < 1.0:
        raise ValueError(f"tree step too coarse: risk-neutral p={p:.4f} outside (0,1)")
    disc = np.exp(-r * dt)
    j = np.arange(n_tree_steps + 1)
    vals = np.maximum(strike - s0 * up ** (n_tree_steps - j) * dn**j, 0.0)
    for i in range(n_tree_steps - 1, -1, -1):
        st = s0 * up ** (i - np.arange(i + 1)) * dn ** np.arange(i + 1)
        vals = disc * (p * vals[:-1] + (1.0 - p) * vals[1:])
        np.maximum(vals, strike - st, out=vals)
    return float(vals[0])


def price_tree_1d(
    dim: int, strike: float, s0: float, r: float, sigma: float, maturity: float, n_tree_steps: int = 5000
) -> float:
    """Tree value of the d-dimensional geometric-average American put."""
    sig_g, q = geometric_equivalent_1d(dim, sigma)
    return tree_american_put(s0, strike, r, q, sig_g, maturity, n_tree_steps)


def tree_converged(dim: int, strike: float, s0: float, r: float, sigma: float, maturity: float,
                   n_tree_steps: int = 5000, tol: float = 5e-3) -> bool:
    """True when doubling the tree steps moves the value by less than tol."""
    a = price_tree_1d(dim, strike, s0, r, sigma, maturity, n_tree_steps)
    b = price_tree_1d(dim, strike, s0, r, sigma, maturity, 2 * n_tree_steps)
    return abs(a - b) < tol


# ---------------------------------------------------------------------------
# Single-date conditional expectation check (1D oracle)
# ---------------------------------------------------------------------------

def lognormal_conditional_put(x: float, strike: float, r: float, sigma: float, dt: float) -> float:
    """Exact E[(K - S_t)_+ | S_s = x] for the 1D lognormal with drift r."""
    d1 = (np.log(x / strike) + (r + 0.5 * sigma**2) * dt) / (sigma * np.sqrt(dt))
    d2 = d1 - sigma * np.sqrt(dt)
    return float(strike * norm.cdf(-d2) - x * np.exp(r * dt) * norm.cdf(-d1))


def conditional_expectation_check(
    x: float,
    n_paths: int = 2**18,
    seed: int = 20260808,
    s: float = 0.5,
    t: float = 1.0,
    strike: float = 100.0,
    s0: float = 100.0,
    sigma: float = 0.2,
    r: float = float(np.log(1.1)),
    conditioning: bool = True,
) -> tuple[float, float]:
    """Single-date continuation quotient against the exact conditional law.

    Returns (mcm estimate, oracle value) for g = (K - S_t)_+ conditioned on
    S_s = x, with shared numerator/denominator paths (equal counts).
    """
    n_steps = round(t / (t - s))
    grid = TimeGrid(t, n_steps)
    if not np.any(np.isclose(grid.dates, s)):
        raise ValueError(f"s={s} must sit on the regular grid of t={t}")
    s_index = int(np.argmin(np.abs(grid.dates - s)))
    vol = build_vol(1, sigma, rate=r)
    paths = simulate_paths(vol, grid, s0, r, n_paths, seed)
    g = np.maximum(strike - paths.s[:, -1, 0], 0.0)
    if conditioning:
        from .kernels import conditioned_continuation
        num, den = conditioned_continuation(paths, s_index, n_steps, x, g, procedure="P2")
    else:
        from .weights import raw_continuation
        num, den = raw_continuation(paths, s_index, n_steps, x, g)
    return num / den, lognormal_conditional_put(x, strike, r, sigma, t - s)
