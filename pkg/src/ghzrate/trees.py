"""Small-p transition digraphs and arborescence computations.

To first order in ``p`` at most one memory is filled per round, so each edge
carries an integer coefficient of ``p`` and stationary distributions follow
from the Markov chain tree theorem with ``p`` cancelling.  Determinants are
computed exactly with Bareiss fraction-free elimination.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, TextIO

from ghzrate.core import DEFAULT_STATE_CAP, ParameterError

Occupation = tuple[int, ...]


class GraphError(ValueError):
    pass


@dataclass
class WeightedDigraph:
    """Directed graph over occupation tuples; self-loops are never stored."""

    vertices: list[Occupation]
    edges: dict[tuple[int, int], Fraction] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.index = {v: i for i, v in enumerate(self.vertices)}

    def __len__(self) -> int:
        return len(self.vertices)

    def add_edge(self, src: int, dst: int, weight) -> None:
        if src == dst:
            return
        w = Fraction(weight)
        if w <= 0:
            raise GraphError(f"edge weight must be positive, got {w}")
        self.edges[src, dst] = self.edges.get((src, dst), Fraction(0)) + w

    def out_edges(self, src: int) -> list[tuple[int, Fraction]]:
        return [(j, w) for (i, j), w in self.edges.items() if i == src]

    def scaled(self, factor) -> WeightedDigraph:
        factor = Fraction(factor)
        return WeightedDigraph(list(self.vertices), {e: w * factor for e, w in self.edges.items()})

    def is_strongly_connected(self) -> bool:
        if not self.vertices:
            return False
        fwd: dict[int, list[int]] = {i: [] for i in range(len(self))}
        rev: dict[int, list[int]] = {i: [] for i in range(len(self))}
        for i, j in self.edges:
            fwd[i].append(j)
            rev[j].append(i)
        return _reaches_all(fwd, len(self)) and _reaches_all(rev, len(self))

    def write_edge_list(self, fh: TextIO) -> None:
        """One line per edge: ``from to numerator denominator``."""
        for (i, j), w in sorted(self.edges.items()):
            fh.write(f"{i} {j} {w.numerator} {w.denominator}\n")


def _reaches_all(adj: dict[int, list[int]], size: int) -> bool:
    seen = {0}
    stack = [0]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == size


@dataclass(frozen=True)
class ArborescenceResult:
    root: Occupation
    count: int
    weight_sum: Fraction


def _measure(k: Sequence[int]) -> Occupation:
    low = min(k)
    return tuple(x - low for x in k)


def build_small_p_graph(n: int, m: int, cap: int | None = None, ordered: bool = False) -> WeightedDigraph:
    """First-order-in-``p`` round graph over post-measurement occupations.

    From ``k``, party ``i`` with ``k_i < m`` fills one memory with probability
    ``(m - k_i) p``; the result then passes through the measurement map.
    With ``ordered=True`` states differing by a party permutation are merged
    (vertices in decreasing order), which is far sparser in arborescences.
    """
    if n < 1 or m < 1:
        raise ParameterError(f"need n>=1 and m>=1, got n={n}, m={m}")
    cap = DEFAULT_STATE_CAP if cap is None else cap
    if (m + 1) ** n > cap:
        raise ParameterError(f"state space (m+1)^n = {(m + 1) ** n} exceeds cap {cap}")
    vertices = [k for k in itertools.product(range(m + 1), repeat=n) if min(k) == 0]
    g = WeightedDigraph(vertices)
    for src, k in enumerate(vertices):
        for i in range(n):
            if k[i] == m:
                continue
            filled = list(k)
            filled[i] += 1
            g.add_edge(src, g.index[_measure(filled)], m - k[i])
    return merge_party_permutations(g) if ordered else g


def merge_party_permutations(g: WeightedDigraph) -> WeightedDigraph:
    """Lump states that differ by a permutation of parties (decreasing order)."""
    orbits = sorted({tuple(sorted(v, reverse=True)) for v in g.vertices}, key=lambda v: (sum(v), v))
    merged = WeightedDigraph(orbits)
    reps: dict[Occupation, int] = {}
    for i, v in enumerate(g.vertices):
        reps.setdefault(tuple(sorted(v, reverse=True)), i)
    for orbit, rep in reps.items():
        src = merged.index[orbit]
        for j, w in g.out_edges(rep):
            merged.add_edge(src, merged.index[tuple(sorted(g.vertices[j], reverse=True))], w)
    return merged


def bareiss_determinant(matrix: Sequence[Sequence]) -> int | Fraction:
    """Exact determinant by fraction-free elimination.

    Entries may be ints (all divisions are exact) or Fractions.
    """
    a = [list(row) for row in matrix]
    size = len(a)
    if size == 0:
        return 1
    if any(len(row) != size for row in a):
        raise ValueError("matrix must be square")
    integral = all(isinstance(x, int) for row in a for x in row)
    sign = 1
    prev = 1
    for k in range(size - 1):
        if a[k][k] == 0:
            for r in range(k + 1, size):
                if a[r][k] != 0:
                    a[k], a[r] = a[r], a[k]
                    sign = -sign
                    break
            else:
                return 0
        pivot = a[k][k]
        row_k = a[k]
        for i in range(k + 1, size):
            row_i = a[i]
            lead = row_i[k]
            if integral:
                for j in range(k + 1, size):
                    row_i[j] = (row_i[j] * pivot - lead * row_k[j]) // prev
            else:
                for j in range(k + 1, size):
                    row_i[j] = (row_i[j] * pivot - lead * row_k[j]) / prev
            row_i[k] = 0
        prev = pivot
    return sign * a[-1][-1]


def _laplacian_minor(size: int, edges: dict[tuple[int, int], object], root: int) -> list[list]:
    """Out-degree Laplacian ``D_out - W`` with the root row and column removed."""
    keep = [v for v in range(size) if v != root]
    pos = {v: r for r, v in enumerate(keep)}
    zero = 0
    mat = [[zero] * len(keep) for _ in keep]
    for (i, j), w in edges.items():
        if i == root:
            continue
        r = pos[i]
        mat[r][r] += w
        if j != root:
            mat[r][pos[j]] -= w
    return mat


def _integral_edges(g: WeightedDigraph) -> tuple[dict[tuple[int, int], int], int]:
    """Edge weights scaled to integers, and the scale factor applied."""
    scale = math.lcm(*(w.denominator for w in g.edges.values()))
    return {e: int(w * scale) for e, w in g.edges.items()}, scale


def root_weight(g: WeightedDigraph, root: int) -> Fraction:
    """Total weight of arborescences directed to ``root`` (``p`` factored out)."""
    edges, scale = _integral_edges(g)
    det = bareiss_determinant(_laplacian_minor(len(g), edges, root))
    return Fraction(det, scale ** (len(g) - 1))


def stationary_via_mctt(g: WeightedDigraph) -> dict[Occupation, Fraction]:
    """Exact stationary distribution ``pi_k = ||A_k|| / ||A||``."""
    if len(g) == 1:
        return {g.vertices[0]: Fraction(1)}
    if not g.is_strongly_connected():
        raise GraphError("graph is not strongly connected")
    weights = [root_weight(g, r) for r in range(len(g))]
    total = sum(weights)
    return {v: w / total for v, w in zip(g.vertices, weights)}


def arborescence_results(g: WeightedDigraph) -> list[ArborescenceResult]:
    unit = {e: 1 for e in g.edges}
    out = []
    for r, v in enumerate(g.vertices):
        count = bareiss_determinant(_laplacian_minor(len(g), unit, r))
        out.append(ArborescenceResult(v, int(count), root_weight(g, r)))
    return out


def count_arborescences(g: WeightedDigraph, root: Sequence[int]) -> ArborescenceResult:
    """Number of spanning arborescences directed towards ``root`` (unit edge weights)."""
    root = tuple(root)
    if root not in g.index:
        raise GraphError(f"root {root} is not a vertex of the graph")
    r = g.index[root]
    unit = {e: 1 for e in g.edges}
    count = bareiss_determinant(_laplacian_minor(len(g), unit, r))
    return ArborescenceResult(root, int(count), root_weight(g, r))


def enumerate_arborescences(g: WeightedDigraph, root: int) -> list[dict[int, int]]:
    """Brute-force list of arborescences as ``{vertex: successor}`` maps.

    Only meant for graphs of at most a dozen vertices.
    """
    if len(g) > 12:
        raise GraphError("enumeration is limited to 12 vertices")
    choices = []
    others = [v for v in range(len(g)) if v != root]
    for v in others:
        choices.append([j for (i, j) in g.edges if i == v])
    found = []
    for pick in itertools.product(*choices):
        succ = dict(zip(others, pick))
        if all(_reaches_root(v, succ, root) for v in others):
            found.append(succ)
    return found


def _reaches_root(v: int, succ: dict[int, int], root: int) -> bool:
    seen = set()
    while v != root:
        if v in seen:
            return False
        seen.add(v)
        v = succ[v]
    return True


def arborescence_weights_bipartite(m: int) -> list[ArborescenceResult]:
    """Closed-form root weights of the ordered two-party chain, ``p^m`` factored out.

    Roots are ``(0,0), (1,0), ..., (m,0)``; every root has one arborescence.
    """
    if m < 1:
        raise ParameterError(f"m<1: m={m}")
    out = [ArborescenceResult((0, 0), 1, Fraction(m**m))]
    falling = 1  # (m-1)! / (m-k)!
    for k in range(1, m + 1):
        if k > 1:
            falling *= m - k + 1
        out.append(ArborescenceResult((k, 0), 1, Fraction(2 * m ** (m - k + 1) * falling)))
    return out


def smallp_expected_L(n: int, m: int, cap: int | None = None) -> Fraction:
    """Coefficient ``c`` with ``<L> ~ c p`` for small ``p``.

    At first order a measurement happens only when exactly one party sits at
    zero and fills a memory (probability ``m p``).
    """
    g = build_small_p_graph(n, m, cap)
    pi = stationary_via_mctt(g)
    one_zero = sum((w for k, w in pi.items() if sum(1 for x in k if x == 0) == 1), Fraction(0))
    return m * one_zero


def stationary_by_exact_solve(g: WeightedDigraph) -> dict[Occupation, Fraction]:
    """Stationary distribution of the small-p chain by rational Gaussian elimination.

    Independent of the tree theorem; used to cross-check it.
    """
    size = len(g)
    # Balance equations: sum_i pi_i W[i,j] = pi_j out(j); replace the last with normalization.
    out = [Fraction(0)] * size
    for (i, _), w in g.edges.items():
        out[i] += w
    rows = [[Fraction(0)] * size + [Fraction(0)] for _ in range(size)]
    for (i, j), w in g.edges.items():
        rows[j][i] += w
    for j in range(size):
        rows[j][j] -= out[j]
    rows[-1] = [Fraction(1)] * size + [Fraction(1)]
    for c in range(size):
        piv = next(r for r in range(c, size) if rows[r][c] != 0)
        rows[c], rows[piv] = rows[piv], rows[c]
        inv = 1 / rows[c][c]
        rows[c] = [x * inv for x in rows[c]]
        for r in range(size):
            if r != c and rows[r][c] != 0:
                f = rows[r][c]
                rows[r] = [x - f * y for x, y in zip(rows[r], rows[c])]
    return {v: rows[i][-1] for i, v in enumerate(g.vertices)}
