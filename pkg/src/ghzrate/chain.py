"""Exact reduced Markov chain of the repeater and its stationary solution.

States are occupation tuples ``k`` (filled memories per party), indexed by
:func:`ghzrate.core.encode`.  One round is storage followed by measurement,
``T = mu @ sigma``; matrices are column-stochastic (column = current state).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ghzrate.core import (
    DEFAULT_DIRECT_CAP,
    NetworkParams,
    ParameterError,
    check_state_cap,
    occupation_table,
    validate,
)

STOCHASTIC_ATOL = 1e-12
FULL_BINARY_MAX_CELLS = 12


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class TransitionMatrix:
    """Sparse column-stochastic matrix; ``kind`` is storage, measurement or round."""

    matrix: sp.csc_matrix
    kind: str
    params: NetworkParams

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def is_stochastic(self, atol: float = STOCHASTIC_ATOL) -> bool:
        data = self.matrix.data
        if data.size and (data.min() < 0 or data.max() > 1 + atol):
            return False
        return bool(np.all(np.abs(self.column_sums() - 1.0) <= atol))


@dataclass(frozen=True)
class Distribution:
    probs: np.ndarray
    residual: float
    iterations: int | str

    @property
    def dim(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class RateEstimate:
    """``L_mean`` GHZ measurements per round and the per-memory rate ``L_mean / m``."""

    L_mean: float
    rate: float
    method: str
    error: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_L(cls, L_mean: float, m: int, method: str, error: str = "", **extra) -> RateEstimate:
        return cls(L_mean=float(L_mean), rate=float(L_mean) / m, method=method, error=error, extra=extra)


class LinearOperator(Protocol):
    dim: int

    def apply(self, v: np.ndarray) -> np.ndarray: ...


def single_party_storage(m: int, p: float) -> np.ndarray:
    """``(m+1) x (m+1)`` storage matrix for one party: ``[k', k] = C(m-k, k'-k) p^(k'-k) (1-p)^(m-k')``."""
    s = np.zeros((m + 1, m + 1))
    q = 1.0 - p
    for k in range(m + 1):
        free = m - k
        for j in range(free + 1):
            s[k + j, k] = math.comb(free, j) * p**j * q ** (free - j)
    return s


def _measured_index(params: NetworkParams) -> tuple[np.ndarray, np.ndarray]:
    """Target index of every state under the measurement map, and ``min(k)``."""
    occ = occupation_table(params)
    low = occ.min(axis=1)
    after = occ - low[:, None]
    weights = params.radix ** np.arange(params.n - 1, -1, -1, dtype=np.int64)
    return after @ weights, low


def build_storage_reduced(params: NetworkParams, cap: int | None = None) -> TransitionMatrix:
    validate(params)
    check_state_cap(params, cap)
    single = sp.csc_matrix(single_party_storage(params.m, params.p))
    single.eliminate_zeros()
    sigma = single
    # kron(A, B) puts A on the most significant digit, matching the codec.
    for _ in range(params.n - 1):
        sigma = sp.kron(single, sigma, format="csc")
    return TransitionMatrix(sp.csc_matrix(sigma), "storage", params)


def build_measurement_reduced(params: NetworkParams, cap: int | None = None) -> TransitionMatrix:
    validate(params)
    size = check_state_cap(params, cap)
    target, _ = _measured_index(params)
    mu = sp.csc_matrix((np.ones(size), (target, np.arange(size))), shape=(size, size))
    return TransitionMatrix(mu, "measurement", params)


def build_transition(params: NetworkParams, cap: int | None = None) -> TransitionMatrix:
    sigma = build_storage_reduced(params, cap)
    mu = build_measurement_reduced(params, cap)
    return TransitionMatrix(sp.csc_matrix(mu.matrix @ sigma.matrix), "round", params)


class RoundOperator:
    """Matrix-free round map for power iteration on large state spaces.

    Storage acts as the single-party matrix along every tensor axis; the
    measurement step is a scatter-add onto ``k - min(k)``.
    """

    def __init__(self, params: NetworkParams, cap: int | None = None):
        validate(params)
        self.params = params
        self.dim = check_state_cap(params, cap)
        self.kind = "round"
        self._single = single_party_storage(params.m, params.p)
        self._target, self.min_k = _measured_index(params)

    def storage(self, v: np.ndarray) -> np.ndarray:
        n, r = self.params.n, self.params.radix
        t = v.reshape((r,) * n)
        for axis in range(n):
            t = np.moveaxis(np.tensordot(self._single, t, axes=([1], [axis])), 0, axis)
        return t.reshape(-1)

    def measurement(self, v: np.ndarray) -> np.ndarray:
        return np.bincount(self._target, weights=v, minlength=self.dim)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.measurement(self.storage(v))


def all_empty(dim: int) -> np.ndarray:
    v = np.zeros(dim)
    v[0] = 1.0
    return v


def stationary_power(
    T: LinearOperator,
    init: np.ndarray | Distribution | None = None,
    tol: float = 1e-12,
    max_iter: int = 1_000_000,
) -> Distribution:
    """Iterate ``pi <- T pi`` until ``||T pi - pi||_1 <= tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if init is None:
        pi = all_empty(T.dim)
    else:
        pi = np.array(init.probs if isinstance(init, Distribution) else init, dtype=float)
        if pi.shape != (T.dim,):
            raise ParameterError(f"initial distribution has shape {pi.shape}, expected ({T.dim},)")
        pi /= pi.sum()
    residual = math.inf
    for it in range(1, max_iter + 1):
        nxt = T.apply(pi)
        nxt /= nxt.sum()
        residual = float(np.abs(nxt - pi).sum())
        pi = nxt
        if residual <= tol:
            return Distribution(pi, residual, it)
    raise ConvergenceError(
        f"power iteration did not reach tol={tol:g} in {max_iter} iterations (residual {residual:.3e})",
        residual,
    )


def stationary_linear(T: TransitionMatrix, cap: int | None = None) -> Distribution:
    """Solve ``(T - I) pi = 0`` with one equation replaced by ``sum(pi) = 1``."""
    cap = DEFAULT_DIRECT_CAP if cap is None else cap
    dim = T.dim
    if dim > cap:
        raise ParameterError(f"direct solve refused: {dim} states exceeds cap {cap}")
    A = sp.lil_matrix(T.matrix - sp.identity(dim, format="csc"))
    A[0, :] = np.ones(dim)
    b = np.zeros(dim)
    b[0] = 1.0
    pi = spla.spsolve(sp.csc_matrix(A), b)
    if not np.all(np.isfinite(pi)):
        raise ConvergenceError("singular system: chain is numerically reducible", math.inf)
    pi = np.where(pi < 0, np.where(pi > -1e-13, 0.0, pi), pi)
    pi /= pi.sum()
    residual = float(np.abs(T.apply(pi) - pi).sum())
    if residual > 1e-8 or pi.min() < 0:
        raise ConvergenceError(f"direct solve inaccurate (residual {residual:.3e})", residual)
    return Distribution(pi, residual, "direct")


def expected_measurements(
    params: NetworkParams,
    stationary: Distribution,
    method: str = "exact",
) -> RateEstimate:
    """``<L> = sum_k (sigma pi*)_k min(k)`` and ``R = <L>/m``."""
    validate(params)
    if stationary.dim != params.num_states:
        raise ParameterError(
            f"distribution has {stationary.dim} entries, chain has {params.num_states} states"
        )
    op = RoundOperator(params, cap=max(params.num_states, 1))
    after_storage = op.storage(stationary.probs)
    L = float(after_storage @ op.min_k)
    it = stationary.iterations
    return RateEstimate.from_L(
        L,
        params.m,
        method,
        error=f"residual={stationary.residual:.2e}",
        iterations=it,
    )


def exact_rate(
    params: NetworkParams,
    solver: str = "auto",
    tol: float = 1e-12,
    max_iter: int = 1_000_000,
    cap: int | None = None,
) -> RateEstimate:
    """Stationary ``<L>`` of the reduced chain; ``solver`` is auto, power or linear."""
    validate(params)
    check_state_cap(params, cap)
    if params.p == 0.0:
        return RateEstimate.from_L(0.0, params.m, "exact", error="p=0")
    if solver == "auto":
        solver = "power"
    if solver == "linear":
        dist = stationary_linear(build_transition(params, cap))
    elif solver == "power":
        dist = stationary_power(RoundOperator(params, cap), tol=tol, max_iter=max_iter)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return expected_measurements(params, dist, method="exact")


# -- validation oracle on the unreduced 2^(nm) configuration space -----------


def _binary_layout(params: NetworkParams) -> np.ndarray:
    """Bits of every configuration as a ``(2^(nm), n, m)`` array.

    Bit ``(i, j)`` is memory ``j`` of party ``i``; party 1 / memory 1 is the
    most significant bit.
    """
    n, m = params.n, params.m
    cells = n * m
    idx = np.arange(2**cells, dtype=np.int64)
    shifts = np.arange(cells - 1, -1, -1, dtype=np.int64)
    bits = (idx[:, None] >> shifts[None, :]) & 1
    return bits.reshape(-1, n, m)


def build_transition_full_binary(params: NetworkParams) -> TransitionMatrix:
    """Round transition over binary memory configurations (validation only)."""
    validate(params)
    n, m = params.n, params.m
    cells = n * m
    if cells > FULL_BINARY_MAX_CELLS:
        raise ParameterError(f"full binary chain needs nm <= {FULL_BINARY_MAX_CELLS}, got {cells}")
    q = 1.0 - params.p
    bit = sp.csc_matrix(np.array([[q, 0.0], [params.p, 1.0]]))
    bit.eliminate_zeros()
    sigma = bit
    for _ in range(cells - 1):
        sigma = sp.kron(bit, sigma, format="csc")

    bits = _binary_layout(params)
    size = bits.shape[0]
    weight = bits.sum(axis=2)
    low = weight.min(axis=1)
    emptied = bits.copy()
    for a in range(size):
        l = low[a]
        if l == 0:
            continue
        for i in range(n):
            # Higher memory indices are emptied first.
            filled = np.flatnonzero(emptied[a, i])[::-1][:l]
            emptied[a, i, filled] = 0
    flat = emptied.reshape(size, cells)
    target = flat @ (1 << np.arange(cells - 1, -1, -1, dtype=np.int64))
    mu = sp.csc_matrix((np.ones(size), (target, np.arange(size))), shape=(size, size))
    return TransitionMatrix(sp.csc_matrix(mu @ sigma), "round", params)


def aggregation_matrix(params: NetworkParams) -> sp.csr_matrix:
    """0/1 matrix mapping binary configurations onto their occupation tuple."""
    bits = _binary_layout(params)
    weight = bits.sum(axis=2)
    weights = params.radix ** np.arange(params.n - 1, -1, -1, dtype=np.int64)
    reduced = weight @ weights
    size = bits.shape[0]
    return sp.csr_matrix(
        (np.ones(size), (reduced, np.arange(size))), shape=(params.num_states, size)
    )
