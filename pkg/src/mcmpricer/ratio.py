"""Optimal numerator/denominator sample split for quotient estimators.

A continuation value is a quotient Q = mean(X) / mean(Y).  Splitting the
sample budget between the two means changes the delta-method asymptotic
variance; with A = E(X), B = E(Y), sigma_i the standard deviations and rho
the correlation, the two regimes are

    case 1 (N' = lambda N):  Sigma_1(l) = [ (2l^2-2l+1)(A/B)^2 s2^2 + s1^2 - 2l(A/B) s1 s2 rho ] / B^2
    case 2 (N  = lambda N'): Sigma_2(l) = [ (2l^2-2l+1) s1^2 + (A/B)^2 s2^2 - 2l(A/B) s1 s2 rho ] / B^2

minimised at lambda = 1/2 + (B s1 rho)/(2 A s2) and 1/2 + (A s2 rho)/(2 B s1)
respectively; the regime is picked by the sign of A^2 s2^2 - B^2 s1^2.  Even
at rho = 0 the optimal split is one half.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DenominatorMeanNearZeroError, DenominatorSampleNearZeroError

SQRT13_THRESHOLD = (np.sqrt(13.0) - 3.0) / 2.0
M2_MAX_ITER = 50


@dataclass(frozen=True)
class QuotientStats:
    """Moments of the numerator/denominator samples of a quotient."""

    a: float
    b: float
    sigma1: float
    sigma2: float
    rho: float
    provenance: tuple[str, ...] = ("pilot-MC",) * 5

    def __post_init__(self):
        if self.sigma1 < 0.0 or self.sigma2 < 0.0:
            raise ValueError("standard deviations must be nonnegative")
        rho = self.rho
        if not np.isfinite(rho):
            object.__setattr__(self, "rho", 0.0)
        elif abs(rho) > 1.0:
            object.__setattr__(self, "rho", float(np.clip(rho, -1.0, 1.0)))

    @property
    def eps_b(self) -> float:
        return 1e-10 * (1.0 + abs(self.a))


@dataclass(frozen=True)
class QuotientPlan:
    """Resolved sample-split plan for one quotient estimation."""

    regime: str                 # "case1" (N' = lambda N) or "case2" (N = lambda N')
    lam: float
    sigma: float                # predicted asymptotic variance at lam
    procedure: str              # "P1" (closed denominator) or "P2" (simulated)
    n: int                      # denominator sample count
    n_prime: int                # numerator sample count
    stats: QuotientStats
    converged: bool = True

    @property
    def n_eff(self) -> int:
        """Shared pair count carrying the asymptotic rate."""
        return min(self.n, self.n_prime)


def stats_from_samples(xs: np.ndarray, ys: np.ndarray, provenance: str = "pilot-MC") -> QuotientStats:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    s1 = float(np.std(xs))
    s2 = float(np.std(ys))
    if s1 > 0.0 and s2 > 0.0:
        rho = float(np.mean((xs - xs.mean()) * (ys - ys.mean())) / (s1 * s2))
    else:
        rho = 0.0
    return QuotientStats(float(np.mean(xs)), float(np.mean(ys)), s1, s2, rho, (provenance,) * 5)


def sigma1_of_lambda(stats: QuotientStats, lam: float) -> float:
    """Case-1 asymptotic variance of the normalised quotient."""
    _check_b(stats)
    a, b, s1, s2, rho = stats.a, stats.b, stats.sigma1, stats.sigma2, stats.rho
    quad = 2.0 * lam * lam - 2.0 * lam + 1.0
    return (quad * (a / b) ** 2 * s2**2 + s1**2 - 2.0 * lam * (a / b) * s1 * s2 * rho) / b**2


def sigma2_of_lambda(stats: QuotientStats, lam: float) -> float:
    """Case-2 asymptotic variance of the normalised quotient."""
    _check_b(stats)
    a, b, s1, s2, rho = stats.a, stats.b, stats.sigma1, stats.sigma2, stats.rho
    quad = 2.0 * lam * lam - 2.0 * lam + 1.0
    return (quad * s1**2 + (a / b) ** 2 * s2**2 - 2.0 * lam * (a / b) * s1 * s2 * rho) / b**2


def _check_b(stats: QuotientStats) -> None:
    if abs(stats.b) < stats.eps_b:
        raise DenominatorMeanNearZeroError(f"|E(Y)| = {abs(stats.b):.3e} below floor {stats.eps_b:.3e}")


def prefers_case1(stats: QuotientStats) -> bool:
    return stats.a**2 * stats.sigma2**2 >= stats.b**2 * stats.sigma1**2


def lambda_min(stats: QuotientStats, case1: bool) -> float:
    """Unclamped variance-minimising split ratio for the given regime."""
    a, b, s1, s2, rho = stats.a, stats.b, stats.sigma1, stats.sigma2, stats.rho
    if case1:
        corr = b * s1 * rho / (2.0 * a * s2) if a * s2 != 0.0 else 0.0
    else:
        corr = a * s2 * rho / (2.0 * b * s1) if b * s1 != 0.0 else 0.0
    return 0.5 + corr


def p2_preferred(stats: QuotientStats, case1: bool, exact: bool = True) -> bool:
    """Correlation condition under which the all-simulated quotient beats
    the closed-denominator estimator.

    With q = A sigma2 / (B sigma1), the split-optimal variance drops below
    sigma1^2 / B^2 exactly when rho > q (sqrt(2) - 1) in case 1 and
    rho > sqrt(2) - 1/q in case 2 (solve B^2 Sigma(lambda_min) - sigma1^2 < 0
    as a quadratic in rho).  ``exact=False`` switches to the looser reference
    constants ((sqrt(13) - 3) / 2 form), which overstate the preference for
    the simulated denominator near the boundary.  Either threshold can exceed
    1, making the condition unsatisfiable.
    """
    a, b, s1, s2, rho = stats.a, stats.b, stats.sigma1, stats.sigma2, stats.rho
    if b == 0.0 or s1 == 0.0 or a == 0.0 or s2 == 0.0:
        return False
    if exact:
        # direct comparison; robust to signed means, where the closed-form
        # correlation thresholds above assume positive A and B
        lam = float(np.clip(lambda_min(stats, case1), 0.0, 1.0))
        sig = sigma1_of_lambda(stats, lam) if case1 else sigma2_of_lambda(stats, lam)
        return b * b * sig - s1 * s1 < 0.0
    q = abs(a * s2 / (b * s1))
    if case1:
        thr = q * SQRT13_THRESHOLD
    else:
        thr = (1.0 / q) * (np.sqrt(1.25 + 2.0 * q * q) - 1.5)
    return thr < rho <= 1.0


def optimal_plan(stats: QuotientStats, n_max: int, b_closed_form: bool = False) -> QuotientPlan:
    """Regime, clamped optimal lambda and procedure choice for one quotient.

    The regime compares A^2 sigma2^2 with B^2 sigma1^2; lambda is clamped to
    [1/n_max, 1] and resolved against n_max.  The procedure is "P2" whenever
    the correlation condition holds, otherwise "P1" when the denominator mean
    is available in closed form, otherwise "P2" regardless.
    """
    _check_b(stats)
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    case1 = prefers_case1(stats)
    lam = float(np.clip(lambda_min(stats, case1), 1.0 / n_max, 1.0))
    sigma = sigma1_of_lambda(stats, lam) if case1 else sigma2_of_lambda(stats, lam)
    if case1:
        n = n_max
        n_prime = max(1, round(lam * n_max))
    else:
        n_prime = n_max
        n = max(1, round(lam * n_max))
    procedure = "P2" if p2_preferred(stats, case1) else ("P1" if b_closed_form else "P2")
    return QuotientPlan(
        regime="case1" if case1 else "case2",
        lam=lam, sigma=float(sigma), procedure=procedure,
        n=n, n_prime=n_prime, stats=stats,
    )


def quotient_estimate(xs: np.ndarray, ys: np.ndarray, plan: QuotientPlan) -> tuple[float, float]:
    """Quotient of prefix means per the plan, with its delta-method std error.

    The numerator averages the first n' samples of xs and the denominator the
    first n samples of ys; xs and ys are paired on shared indices.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < plan.n_prime or len(ys) < plan.n:
        raise ValueError(f"plan needs {plan.n_prime} numerator and {plan.n} denominator samples")
    num = float(np.mean(xs[: plan.n_prime]))
    den = float(np.mean(ys[: plan.n]))
    if abs(den) < plan.stats.eps_b:
        raise DenominatorSampleNearZeroError(f"sample denominator {den:.3e} below floor")
    stderr = float(np.sqrt(max(plan.sigma, 0.0) / plan.n_eff))
    return num / den, stderr


def calibrate_m1(sampler, n_max: int, b_closed_form: bool = False) -> QuotientPlan:
    """One pilot pass over n_max sampled pairs, then the optimal plan."""
    xs, ys = sampler(n_max)
    return optimal_plan(stats_from_samples(xs, ys), n_max, b_closed_form)


def calibrate_m2(sampler, n_max: int, eps: float, b_closed_form: bool = False) -> QuotientPlan:
    """Fixed-point calibration: re-simulate the lambda-dependent statistic.

    Keeps every statistic from the full pilot pass except the one whose
    estimate depends on the split (A in case 1, B in case 2), which is
    re-sampled with lambda * n_max pairs each iteration until the fixed-point
    residual |lambda - 1/2 - correction| drops below eps.  Hitting the
    iteration cap returns the last iterate flagged converged=False.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    xs, ys = sampler(n_max)
    stats = stats_from_samples(xs, ys)
    _check_b(stats)
    case1 = prefers_case1(stats)
    lam = float(np.clip(lambda_min(stats, case1), 1.0 / n_max, 1.0))
    converged = False
    for _ in range(M2_MAX_ITER):
        n_sub = max(2, round(lam * n_max))
        xs_i, ys_i = sampler(n_sub)
        if case1:
            stats = replace(stats, a=float(np.mean(xs_i)))
        else:
            stats = replace(stats, b=float(np.mean(ys_i)))
        _check_b(stats)
        target = lambda_min(stats, case1)
        if abs(lam - target) < eps:
            converged = True
            break
        lam = float(np.clip(target, 1.0 / n_max, 1.0))
    plan = optimal_plan(stats, n_max, b_closed_form)
    lam = float(np.clip(lam, 1.0 / n_max, 1.0))
    sigma = sigma1_of_lambda(stats, lam) if case1 else sigma2_of_lambda(stats, lam)
    if case1:
        n, n_prime = n_max, max(1, round(lam * n_max))
    else:
        n, n_prime = max(1, round(lam * n_max)), n_max
    return replace(plan, lam=lam, sigma=float(sigma), n=n, n_prime=n_prime, converged=converged)


def pooled_plan(
    a: np.ndarray,
    b: np.ndarray,
    sigma1: np.ndarray,
    sigma2: np.ndarray,
    rho: np.ndarray,
    n_max: int,
    b_closed_form: bool = False,
) -> QuotientPlan:
    """One plan pooled over many query points.

    Each query contributes its own regime vote and unclamped lambda; the
    pooled plan takes the majority regime and the median lambda of the
    queries voting for it.  Degenerate queries (tiny |B| or zero variances)
    are dropped; with nothing left the plan degrades to lambda = 1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    sigma1 = np.asarray(sigma1, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    rho = np.where(np.isfinite(rho), rho, 0.0).clip(-1.0, 1.0)
    ok = (np.abs(b) > 1e-10 * (1.0 + np.abs(a))) & (sigma1 > 0.0) & (sigma2 > 0.0)
    if not np.any(ok):
        stats = QuotientStats(1.0, 1.0, 0.0, 0.0, 0.0)
        return QuotientPlan("case1", 1.0, 0.0, "P2", n_max, n_max, stats)
    a, b, sigma1, sigma2, rho = (v[ok] for v in (a, b, sigma1, sigma2, rho))
    case1 = a**2 * sigma2**2 >= b**2 * sigma1**2
    majority_case1 = np.count_nonzero(case1) * 2 >= len(case1)
    sel = case1 if majority_case1 else ~case1
    if majority_case1:
        lam_all = 0.5 + b[sel] * sigma1[sel] * rho[sel] / (2.0 * a[sel] * sigma2[sel])
    else:
        lam_all = 0.5 + a[sel] * sigma2[sel] * rho[sel] / (2.0 * b[sel] * sigma1[sel])
    lam = float(np.clip(np.median(lam_all), 1.0 / n_max, 1.0))
    med = QuotientStats(
        float(np.median(a[sel])), float(np.median(b[sel])),
        float(np.median(sigma1[sel])), float(np.median(sigma2[sel])), float(np.median(rho[sel])),
    )
    sigma = sigma1_of_lambda(med, lam) if majority_case1 else sigma2_of_lambda(med, lam)
    if majority_case1:
        n, n_prime = n_max, max(1, round(lam * n_max))
    else:
        n, n_prime = max(1, round(lam * n_max)), n_max
    procedure = "P2" if p2_preferred(med, majority_case1) else ("P1" if b_closed_form else "P2")
    return QuotientPlan(
        regime="case1" if majority_case1 else "case2",
        lam=lam, sigma=float(sigma), procedure=procedure,
        n=n, n_prime=n_prime, stats=med,
    )
