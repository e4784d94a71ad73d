"""Model parameters and the occupation-tuple <-> flat index codec."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

#: Largest reduced state space the chain builders will materialize.
DEFAULT_STATE_CAP = int(os.environ.get("GHZRATE_STATE_CAP", 2_000_000))
#: Largest state space handed to the direct (sparse LU) solver.
DEFAULT_DIRECT_CAP = int(os.environ.get("GHZRATE_DIRECT_CAP", 20_000))


class ParameterError(ValueError):
    """Raised when model parameters or occupations are out of range."""


@dataclass(frozen=True)
class NetworkParams:
    n: int
    m: int
    p: float

    @property
    def radix(self) -> int:
        return self.m + 1

    @property
    def num_states(self) -> int:
        # Python ints do not overflow; callers compare against a cap.
        return self.radix**self.n


def validate(params: NetworkParams) -> NetworkParams:
    """Return ``params`` unchanged, or raise naming the violated bound."""
    if not isinstance(params.n, (int, np.integer)) or params.n < 1:
        raise ParameterError(f"n<1: n={params.n!r}")
    if not isinstance(params.m, (int, np.integer)) or params.m < 1:
        raise ParameterError(f"m<1: m={params.m!r}")
    p = params.p
    if not (0.0 <= p <= 1.0):  # also rejects NaN
        raise ParameterError(f"p outside [0,1]: p={p!r}")
    return params


def check_state_cap(params: NetworkParams, cap: int | None = None) -> int:
    cap = DEFAULT_STATE_CAP if cap is None else cap
    size = params.num_states
    if size > cap:
        raise ParameterError(
            f"state space (m+1)^n = {size} exceeds cap {cap} (n={params.n}, m={params.m})"
        )
    return size


def encode(k: Sequence[int], params: NetworkParams) -> int:
    """Mixed-radix index of occupation ``k``; party 1 is the most significant digit."""
    if len(k) != params.n:
        raise ParameterError(f"occupation has {len(k)} entries, expected n={params.n}")
    idx = 0
    for ki in k:
        if not 0 <= ki <= params.m:
            raise ParameterError(f"occupation entry {ki} outside 0..{params.m}")
        idx = idx * params.radix + int(ki)
    return idx


def decode(idx: int, params: NetworkParams) -> tuple[int, ...]:
    if not 0 <= idx < params.num_states:
        raise ParameterError(f"index {idx} outside [0, {params.num_states})")
    digits = []
    for _ in range(params.n):
        idx, r = divmod(idx, params.radix)
        digits.append(r)
    return tuple(reversed(digits))


def occupation_table(params: NetworkParams) -> np.ndarray:
    """All occupations as a ``(num_states, n)`` array, row ``i`` = ``decode(i)``."""
    size = params.num_states
    idx = np.arange(size)
    out = np.empty((size, params.n), dtype=np.int64)
    for col in range(params.n - 1, -1, -1):
        out[:, col] = idx % params.radix
        idx = idx // params.radix
    return out


def parse_occupation(text: str) -> tuple[int, ...]:
    """Parse ``"2,2,0"`` or ``"(2, 2, 0)"`` into a tuple."""
    body = text.strip().strip("()[]")
    try:
        return tuple(int(tok) for tok in body.split(",") if tok.strip())
    except ValueError as exc:
        raise ParameterError(f"cannot parse occupation {text!r}") from exc
