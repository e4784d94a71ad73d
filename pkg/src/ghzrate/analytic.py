"""Closed-form and approximate rate formulas, bounds and moment recurrences."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ghzrate.chain import RateEstimate

EULER_GAMMA = 0.5772156649015329
# Above this the exact alternating sum gets slow; the positive series takes over.
ALT_EXACT_MAX_N = 60


@dataclass(frozen=True)
class BoundsPair:
    lower: float
    upper: float
    kind: str

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= value <= self.upper + slack


@dataclass(frozen=True)
class Moments:
    mu: float
    sigma2: float


def _check_np(n: int, p: float) -> None:
    if n < 1:
        raise ValueError(f"n<1: n={n}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p outside [0,1]: p={p}")


def rate_no_multiplexing(n: int, p: float, eps: float = 1e-14) -> RateEstimate:
    """Single-memory ``<L1>`` from the positive-term series over rounds.

    The series ``sum_j 1 - (1 - (1-p)^j)^n`` is cut at the first ``J`` whose
    tail bound ``n (1-p)^(J+1) / p`` drops below ``eps``.
    """
    _check_np(n, p)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if p == 0.0:
        return RateEstimate.from_L(0.0, 1, "analytic-m1", error="p=0: waiting time diverges")
    q = 1.0 - p
    total = 1.0
    j = 0
    qj = 1.0
    tail = math.inf
    while True:
        j += 1
        qj *= q
        # -expm1(n log1p(-x)) = 1 - (1-x)^n without cancellation at small x.
        total += -math.expm1(n * math.log1p(-qj)) if qj < 1.0 else 1.0
        tail = n * qj * q / p
        if tail < eps:
            break
    L = 1.0 / total
    # d(1/S) <= tail / S^2
    return RateEstimate.from_L(L, 1, "analytic-m1", error=f"truncation<={tail * L * L:.1e}", terms=j)


def rate_no_multiplexing_alt(n: int, p: float) -> RateEstimate:
    """``<L1>`` as the inverse expected maximum of ``n`` geometric waiting times.

    The alternating binomial sum is evaluated in exact rational arithmetic
    (``p`` as a binary float is rational), so there is no cancellation.
    """
    _check_np(n, p)
    if p == 0.0:
        raise ValueError("p=0: expected waiting time is infinite")
    if n > ALT_EXACT_MAX_N:
        return RateEstimate.from_L(rate_no_multiplexing(n, p).L_mean, 1, "analytic-m1-alt")
    q = 1 - Fraction(p)
    wait = sum(
        Fraction((-1) ** (k + 1) * math.comb(n, k)) / (1 - q**k) for k in range(1, n + 1)
    )
    return RateEstimate.from_L(float(1 / wait), 1, "analytic-m1-alt")


def harmonic(n: int) -> float:
    return math.fsum(1.0 / k for k in range(1, n + 1))


def waiting_time_bounds(n: int, p: float) -> BoundsPair:
    """Rate bracket from ``H_n / ln(1/(1-p)) <= E[max] <= 1 + H_n / ln(1/(1-p))``."""
    _check_np(n, p)
    if p <= 0.0 or p >= 1.0:
        raise ValueError(f"waiting-time bounds are degenerate at p={p}")
    c = -math.log1p(-p)
    h = harmonic(n)
    return BoundsPair(lower=1.0 / (1.0 + h / c), upper=c / h, kind="waiting_time")


def _bipartite_sum(m: int) -> float:
    """``sum_{k=1}^m m^(1-k) (m-1)!/(m-k)!`` as a running product."""
    total = 0.0
    term = 1.0
    for k in range(1, m + 1):
        if k > 1:
            term *= (m - k + 1) / m
        total += term
    return total


def bipartite_L_small_p(m: int, p: float) -> RateEstimate:
    if m < 1:
        raise ValueError(f"m<1: m={m}")
    _check_np(2, p)
    s = _bipartite_sum(m)
    L = p * m * (1.0 - 1.0 / (1.0 + 2.0 * s))
    return RateEstimate.from_L(L, m, "smallp-bipartite", error="first order in p (lower approximation)")


def bipartite_rate_small_p(m: int, p: float) -> RateEstimate:
    return bipartite_L_small_p(m, p)


def bipartite_rate_large_m(m: int, p: float) -> RateEstimate:
    if m < 1:
        raise ValueError(f"m<1: m={m}")
    rate = p * (1.0 - 1.0 / (1.0 + math.sqrt(2.0 * math.pi * m)))
    return RateEstimate(L_mean=rate * m, rate=rate, method="large-m", error="Poisson CDF ~ 1/2")


def multiplexing_bounds(n: int, m: int, p: float) -> BoundsPair:
    """``m <L1> <= <L> <= p m``."""
    _check_np(n, p)
    if m < 1:
        raise ValueError(f"m<1: m={m}")
    if p == 0.0:
        return BoundsPair(0.0, 0.0, "multiplexing")
    if n == 1:
        return BoundsPair(p * m, p * m, "multiplexing")
    lower = m * rate_no_multiplexing_alt(n, p).L_mean
    return BoundsPair(lower=lower, upper=p * m, kind="multiplexing")


def alpha(n: int) -> float:
    """Extreme-value factor in ``E[min of n normals] ~ mu - alpha sigma sqrt(ln n)``."""
    if n < 2:
        raise ValueError("alpha is undefined for n<2 (ln ln n)")
    ln = math.log(n)
    return math.sqrt(2.0) * (1.0 - (math.log(4.0 * math.pi * ln) - 2.0 * EULER_GAMMA) / (4.0 * ln))


def _alpha_for(n: int, alpha_mode: str) -> float:
    if alpha_mode == "paper":
        return alpha(n)
    if alpha_mode == "one":
        return 1.0
    raise ValueError(f"alpha_mode must be 'paper' or 'one', got {alpha_mode!r}")


def beta(p: float) -> float:
    return (1.0 - p) / (2.0 - p)


def general_L_approx(n: int, m: int, p: float, alpha_mode: str = "paper") -> RateEstimate:
    """Largest fixed per-round subtraction keeping the expected minimum occupation at zero."""
    _check_np(n, p)
    if m < 1:
        raise ValueError(f"m<1: m={m}")
    if n == 1:
        return RateEstimate.from_L(p * m, m, "approx", error="exact for n=1")
    a = _alpha_for(n, alpha_mode)
    A = a * a * beta(p) * math.log(n) / (4.0 * m)
    # (sqrt(A+1) - sqrt(A))^2 == 1 / (sqrt(A+1) + sqrt(A))^2, stable for large A.
    factor = 1.0 / (math.sqrt(A + 1.0) + math.sqrt(A)) ** 2
    return RateEstimate.from_L(p * m * factor, m, "approx", error="normal/extreme-value approximation", A=A, alpha=a)


def general_L_large_n(n: int, m: int, p: float, alpha_mode: str = "paper") -> RateEstimate:
    _check_np(n, p)
    if n < 2:
        raise ValueError("large-n form needs n>=2 (divides by ln n)")
    if p == 1.0:
        raise ValueError("large-n form is singular at p=1 (beta=0)")
    a = _alpha_for(n, alpha_mode)
    L = p * m * m / (a * a * beta(p) * math.log(n))
    return RateEstimate.from_L(L, m, "large-n", error="n -> infinity asymptote")


def saturation_rate(n: int, m: int, p: float, alpha_mode: str = "paper") -> RateEstimate:
    _check_np(n, p)
    if m < 1:
        raise ValueError(f"m<1: m={m}")
    if n == 1:
        return RateEstimate(L_mean=p * m, rate=p, method="saturation")
    a = _alpha_for(n, alpha_mode)
    rate = p * (1.0 - math.sqrt(a * a * beta(p) * math.log(n) / (4.0 * m)))
    return RateEstimate(L_mean=rate * m, rate=rate, method="saturation", error="large-m asymptote")


def saturation_memory(n: int, p: float, threshold: float = 1e-4, m_max: int = 10_000) -> int | None:
    """Smallest ``m`` whose approx-rate gain from ``m`` to ``m+1`` is below ``threshold``."""
    prev = general_L_approx(n, 1, p).rate
    for m in range(1, m_max):
        nxt = general_L_approx(n, m + 1, p).rate
        if nxt - prev < threshold:
            return m
        prev = nxt
    return None


def moments_step(mom: Moments, m: int, p: float, l: float) -> Moments:
    """One round of the decoupled model: mean and variance of the occupation."""
    q = 1.0 - p
    return Moments(
        mu=p * m + q * mom.mu - l,
        sigma2=q * q * mom.sigma2 + p * q * (m - mom.mu),
    )


def simplified_stationary_moments(m: int, p: float, l: float) -> Moments:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"stationary moments need 0<p<=1, got p={p}")
    if l < 0:
        raise ValueError("l must be non-negative")
    return Moments(mu=m - l / p, sigma2=beta(p) * l / p)


def moments_trajectory(m: int, p: float, l: float, steps: int, start: Moments | None = None) -> list[Moments]:
    """``[M_0, M_1, ..., M_steps]`` starting from an empty memory by default."""
    mom = start or Moments(0.0, 0.0)
    out = [mom]
    for _ in range(steps):
        mom = moments_step(mom, m, p, l)
        out.append(mom)
    return out


def expected_min_normals(mu: float, sigma: float, n: int) -> float:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if n < 2:
        return mu
    return mu - alpha(n) * sigma * math.sqrt(math.log(n))


def c1_series(n: int, p: float, J: int) -> float:
    """Partial sum ``sum_{j<=J} c1^(j)`` of the round-expansion prefactors.

    ``c1^(1) = 1`` and ``c1^(i) = sum_{l<i} c1^(l) (P_{i-l} - 1)`` with
    ``P_s = (1 - (1-p)^s)^n``.
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    s = np.arange(1, J, dtype=float)
    # P_s - 1 = -(1 - (1 - (1-p)^s)^n), kept accurate near zero.
    decay = -np.expm1(n * np.log1p(-np.power(1.0 - p, s))) if p > 0 else np.ones_like(s)
    shifted = -decay  # shifted[t-1] = P_t - 1
    c = np.zeros(J)
    c[0] = 1.0
    for i in range(1, J):
        # c[i] = sum_{l=0}^{i-1} c[l] * (P_{i-l} - 1)
        c[i] = np.dot(c[:i], shifted[i - 1 :: -1][:i])
    return float(c.sum())
