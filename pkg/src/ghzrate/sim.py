"""Seeded Monte Carlo simulation of the repeater rounds.

``run_full`` simulates the coupled model: every party refills its empty
memories with ``Binomial(m - X, p)`` and ``min_i Z_i`` GHZ measurements are
performed.  ``run_simplified`` decouples the parties by subtracting a fixed
``l`` per round, allowing negative occupations.

Replica ``r`` is seeded with the first 32-bit word of
``numpy.random.SeedSequence(seed).spawn(replicas)[r]``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from ghzrate.core import NetworkParams, validate

DIVERGENCE_FACTOR = 50.0


@dataclass(frozen=True)
class SimConfig:
    rounds: int = 100_000
    burn_in: int = 1_000
    replicas: int = 32
    seed: int | None = None
    workers: int | None = None

    def __post_init__(self) -> None:
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if not 0 <= self.burn_in < self.rounds:
            raise ValueError("need 0 <= burn_in < rounds")

    def resolved(self) -> SimConfig:
        """Copy with a concrete seed (fresh OS entropy when unset)."""
        if self.seed is not None:
            return self
        seed = int(np.random.SeedSequence().entropy % (2**63))
        return SimConfig(self.rounds, self.burn_in, self.replicas, seed, self.workers)


@dataclass
class SimResult:
    L_mean: float
    rate: float
    stderr: float
    ci_half_width: float
    occupancy_mean: np.ndarray
    min_occupancy_mean: float
    histogram: np.ndarray
    seed: int
    replica_means: np.ndarray = field(repr=False)
    # decoupled-model statistics (None for the full model)
    occupancy_var: float | None = None
    mu_stderr: float | None = None
    sigma2_stderr: float | None = None
    min_stderr: float | None = None
    diverged: bool = False


def replica_seeds(seed: int, replicas: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(replicas)
    return [int(c.generate_state(1, np.uint32)[0]) for c in children]


@numba.njit(cache=True, nogil=True)
def _draw(trials, p):
    if trials <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return trials
    return np.random.binomial(trials, p)


ROUNDING_MODES = {"matched": 0, "stochastic": 1, "nearest": 2}


@numba.njit(cache=True, nogil=True)
def _matched_mixture(t, p):
    """Weight ``w`` of ``ceil(t)`` trials and success probability ``r``.

    The mixture ``(1-w) Bin(floor t, r) + w Bin(ceil t, r)`` has mean ``p t``
    and variance ``p (1-p) t``.
    """
    f = t - np.floor(t)
    w = ((t - f) - np.sqrt((t - f) * t * (1.0 - f))) / (t - 1.0)
    r = p * t / (t - f + w)
    return w, min(r, 1.0)


@numba.njit(cache=True, nogil=True)
def _draw_real(t, p, mode):
    """Refills for a possibly fractional number ``t`` of empty memories."""
    base = np.floor(t)
    f = t - base
    if mode == 2:
        return _draw(np.int64(np.floor(t + 0.5)), p)
    if f == 0.0:
        return _draw(np.int64(base), p)
    if mode == 1 or t < 1.0:
        trials = np.int64(base)
        if np.random.random() < f:
            trials += 1
        return _draw(trials, p)
    w, r = _matched_mixture(t, p)
    trials = np.int64(base)
    if np.random.random() < w:
        trials += 1
    return _draw(trials, r)


@numba.njit(cache=True, nogil=True)
def _full_kernel(n, m, p, rounds, burn_in, seed):
    np.random.seed(seed)
    x = np.zeros(n, np.int64)
    z = np.zeros(n, np.int64)
    hist = np.zeros(m + 1, np.int64)
    occ = np.zeros(n, np.float64)
    occ_min = 0.0
    total = 0.0
    for k in range(rounds):
        low = m
        for i in range(n):
            z[i] = x[i] + _draw(m - x[i], p)
            if z[i] < low:
                low = z[i]
        least = m
        for i in range(n):
            x[i] = z[i] - low
            if x[i] < least:
                least = x[i]
        if k >= burn_in:
            total += low
            hist[low] += 1
            occ_min += least
            for i in range(n):
                occ[i] += x[i]
    counted = rounds - burn_in
    return total / counted, hist, occ / counted, occ_min / counted


@numba.njit(cache=True, nogil=True)
def _simplified_kernel(n, m, p, l, rounds, burn_in, seed, mode, floor_level):
    np.random.seed(seed)
    x = np.zeros(n, np.float64)
    s1 = 0.0
    s2 = 0.0
    smin = 0.0
    occ = np.zeros(n, np.float64)
    diverged = False
    counted = 0
    for k in range(rounds):
        least = np.inf
        level = 0.0
        for i in range(n):
            x[i] = x[i] + _draw_real(m - x[i], p, mode) - l
            level += x[i]
            if x[i] < least:
                least = x[i]
        if level / n < floor_level:
            diverged = True
            break
        if k >= burn_in:
            counted += 1
            smin += least
            for i in range(n):
                s1 += x[i]
                s2 += x[i] * x[i]
                occ[i] += x[i]
    if counted == 0:
        counted = 1
    mean = s1 / (counted * n)
    var = s2 / (counted * n) - mean * mean
    return mean, var, smin / counted, occ / counted, diverged


def _pool_map(fn, seeds, workers):
    workers = workers or min(len(seeds), int(os.environ.get("GHZRATE_THREADS", os.cpu_count() or 1)))
    if workers <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map preserves replica order, so the reduction is deterministic.
        return list(pool.map(fn, seeds))


def _stderr(values: np.ndarray) -> float:
    if values.size < 2:
        return float("nan")
    return float(values.std(ddof=1) / np.sqrt(values.size))


def run_full(params: NetworkParams, config: SimConfig | None = None) -> SimResult:
    """Estimate the stationary ``<L>`` of the coupled model."""
    validate(params)
    config = (config or SimConfig()).resolved()
    n, m, p = params.n, params.m, float(params.p)
    seeds = replica_seeds(config.seed, config.replicas)
    outs = _pool_map(
        lambda s: _full_kernel(n, m, p, config.rounds, config.burn_in, s), seeds, config.workers
    )
    means = np.array([o[0] for o in outs])
    hist = np.sum([o[1] for o in outs], axis=0).astype(float)
    hist /= hist.sum()
    occ = np.mean([o[2] for o in outs], axis=0)
    L = float(means.mean())
    se = _stderr(means)
    return SimResult(
        L_mean=L,
        rate=L / m,
        stderr=se,
        ci_half_width=1.96 * se,
        occupancy_mean=occ,
        min_occupancy_mean=float(np.mean([o[3] for o in outs])),
        histogram=hist,
        seed=config.seed,
        replica_means=means,
    )


def run_simplified(
    params: NetworkParams,
    l: float,
    config: SimConfig | None = None,
    rounding: str = "matched",
) -> SimResult:
    """Estimate stationary moments of the decoupled model with fixed subtraction ``l``.

    With fractional ``l`` the number of empty memories ``t = m - X`` is not an
    integer.  ``rounding`` selects how refills are drawn then:

    * ``"matched"``: two-point binomial mixture with ``E[Y|X] = p t`` and
      ``Var[Y|X] = p (1-p) t``, so the moment recurrences hold exactly;
    * ``"stochastic"``: ``Bin(floor(t) + Bernoulli(frac t), p)``, exact mean only;
    * ``"nearest"``: ``Bin(round(t), p)``, biased.

    All three coincide with ``Bin(t, p)`` for integer ``t``.
    """
    validate(params)
    if l < 0:
        raise ValueError("l must be non-negative")
    if rounding not in ROUNDING_MODES:
        raise ValueError(f"unknown rounding {rounding!r}")
    config = (config or SimConfig()).resolved()
    n, m, p = params.n, params.m, float(params.p)
    seeds = replica_seeds(config.seed, config.replicas)
    mode = ROUNDING_MODES[rounding]
    floor_level = -DIVERGENCE_FACTOR * m
    outs = _pool_map(
        lambda s: _simplified_kernel(
            n, m, p, float(l), config.rounds, config.burn_in, s, mode, floor_level
        ),
        seeds,
        config.workers,
    )
    mus = np.array([o[0] for o in outs])
    variances = np.array([o[1] for o in outs])
    mins = np.array([o[2] for o in outs])
    diverged = any(o[4] for o in outs)
    return SimResult(
        L_mean=float(l),
        rate=float(l) / m,
        stderr=0.0,
        ci_half_width=0.0,
        occupancy_mean=np.mean([o[3] for o in outs], axis=0),
        min_occupancy_mean=float(mins.mean()),
        histogram=np.array([1.0]),
        seed=config.seed,
        replica_means=mus,
        occupancy_var=float(variances.mean()),
        mu_stderr=_stderr(mus),
        sigma2_stderr=_stderr(variances),
        min_stderr=_stderr(mins),
        diverged=diverged,
    )


def simplified_trajectories(
    m: int,
    p: float,
    l: float,
    steps: int,
    paths: int,
    seed: int,
    rounding: str = "matched",
) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble mean and variance of one party's occupation after each round.

    Returns arrays of length ``steps + 1`` (index 0 is the empty start).
    """
    if rounding not in ROUNDING_MODES:
        raise ValueError(f"unknown rounding {rounding!r}")
    x = _trajectory_kernel(m, float(p), float(l), steps, paths, replica_seeds(seed, 1)[0], ROUNDING_MODES[rounding])
    means = np.concatenate([[0.0], x.mean(axis=1)])
    variances = np.concatenate([[0.0], x.var(axis=1, ddof=1)])
    return means, variances


@numba.njit(cache=True, nogil=True)
def _trajectory_kernel(m, p, l, steps, paths, seed, mode):
    np.random.seed(seed)
    out = np.empty((steps, paths))
    for j in range(paths):
        x = 0.0
        for k in range(steps):
            x = x + _draw_real(m - x, p, mode) - l
            out[k, j] = x
    return out
