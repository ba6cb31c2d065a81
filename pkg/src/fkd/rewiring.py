"""Balanced Forman curvature and stochastic discrete Ricci flow (SDRF) rewiring.

Both follow Topping et al., "Understanding over-squashing and bottlenecks on
graphs via curvature" (ICLR 2022).
"""
import csv
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ._random import substream


class GraphSaturatedError(RuntimeError):
    """No non-edge is available around the most negatively curved edge."""


def _bool_adjacency(g):
    A = np.zeros((g.n, g.n), dtype=bool)
    if g.n_edges:
        A[g.edges[:, 0], g.edges[:, 1]] = True
        A[g.edges[:, 1], g.edges[:, 0]] = True
    return A


def _square_side(A, a, b):
    """4-cycles a-k-w-b-a without diagonals, seen from ``a``.

    Returns (number of k with at least one such w, max number of w over k).
    """
    Na, Nb = A[a], A[b]
    ks = np.flatnonzero(Na & ~Nb)
    ks = ks[ks != b]
    if ks.size == 0:
        return 0, 0
    w_ok = Nb & ~Na
    w_ok[a] = False
    counts = A[np.ix_(ks, np.flatnonzero(w_ok))].sum(axis=1)
    if counts.size == 0:
        return 0, 0
    return int(np.count_nonzero(counts)), int(counts.max())


def _curvature(A, deg, i, j):
    di, dj = int(deg[i]), int(deg[j])
    if min(di, dj) <= 1:
        return 0.0
    hi, lo = max(di, dj), min(di, dj)
    tri = int(np.count_nonzero(A[i] & A[j]))
    sq_i, g_i = _square_side(A, i, j)
    sq_j, g_j = _square_side(A, j, i)
    gamma = max(g_i, g_j)
    # every term is a ratio of integer counts; exact arithmetic keeps zero-curvature edges at 0.0
    val = Fraction(2, di) + Fraction(2, dj) - 2 + Fraction(2 * tri, hi) + Fraction(tri, lo)
    if gamma > 0:
        val += Fraction(sq_i + sq_j, gamma * hi)
    return float(val)


def balanced_forman_curvature(g, edge):
    """Balanced Forman curvature of the undirected edge ``(i, j)`` of ``g``."""
    i, j = int(edge[0]), int(edge[1])
    A = _bool_adjacency(g)
    if i == j or not A[i, j]:
        raise ValueError(f"({i}, {j}) is not an edge")
    return _curvature(A, A.sum(axis=1), i, j)


@dataclass
class CurvatureReport:
    edges: np.ndarray
    values: np.ndarray

    @property
    def min(self):
        return float(self.values.min()) if self.values.size else float("nan")

    @property
    def max(self):
        return float(self.values.max()) if self.values.size else float("nan")

    @property
    def fraction_negative(self):
        return float(np.mean(self.values < 0)) if self.values.size else 0.0


def _all_curvatures(A, edges):
    deg = A.sum(axis=1)
    return np.array([_curvature(A, deg, i, j) for i, j in edges], dtype=np.float64)


def curvature_report(g):
    return CurvatureReport(np.array(g.edges), _all_curvatures(_bool_adjacency(g), g.edges))


@dataclass
class RewireResult:
    graph: object
    added: list
    removed: list
    log: list = field(default_factory=list)  # (iteration, action, i, j, min_curvature, max_curvature)

    @property
    def delta_edges(self):
        return len(self.added) - len(self.removed)


def _edge_list(A):
    i, j = np.nonzero(np.triu(A, 1))
    return np.stack([i, j], axis=1)


def sdrf_rewire(g, max_iters=10, temperature=5.0, removal_threshold=float("inf"), seed=0,
                stop_above=None):
    """Stochastic discrete Ricci flow.

    Each iteration takes the most negatively curved edge (i, j), scores every
    non-edge (k, l) with k in N(i) ∪ {i}, l in N(j) ∪ {j} by how much adding it
    raises the curvature of (i, j), samples one with softmax(temperature *
    improvement) and adds it. The most positively curved edge is then removed
    when its curvature exceeds ``removal_threshold`` (never the edge just
    added). Stops early when the minimum curvature exceeds ``stop_above``.

    With no candidate around (i, j) the addition is skipped and only the
    removal step runs; GraphSaturatedError is raised when neither step can act.
    """
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")
    rng = substream(seed, "rewire")
    A = _bool_adjacency(g)
    added, removed, log = [], [], []
    for it in range(max_iters):
        edges = _edge_list(A)
        if edges.size == 0:
            raise GraphSaturatedError("graph has no edges")
        curv = _all_curvatures(A, edges)
        idx = int(np.argmin(curv))
        i, j = (int(v) for v in edges[idx])
        base = curv[idx]
        if stop_above is not None and base > stop_above:
            break
        src = np.append(np.flatnonzero(A[i]), i)
        dst = np.append(np.flatnonzero(A[j]), j)
        cands = sorted({(int(min(k, l)), int(max(k, l))) for k in src for l in dst if k != l and not A[k, l]})
        new_edge = None
        if cands:
            gains = np.empty(len(cands))
            for c, (k, l) in enumerate(cands):
                A[k, l] = A[l, k] = True
                gains[c] = _curvature(A, A.sum(axis=1), i, j) - base
                A[k, l] = A[l, k] = False
            z = temperature * gains
            p = np.exp(z - z.max())
            p /= p.sum()
            new_edge = cands[int(rng.choice(len(cands), p=p))]
            k, l = new_edge
            A[k, l] = A[l, k] = True
            added.append(new_edge)
            edges = _edge_list(A)
            curv = _all_curvatures(A, edges)
            log.append((it, "add", k, l, float(curv.min()), float(curv.max())))
        dropped = False
        for e in np.argsort(-curv, kind="stable"):
            if curv[e] <= removal_threshold:
                break
            a, b = (int(v) for v in edges[e])
            if (a, b) == new_edge:
                continue
            A[a, b] = A[b, a] = False
            removed.append((a, b))
            rest = np.delete(np.arange(len(curv)), e)
            log.append((it, "remove", a, b, float(curv[rest].min()), float(curv[rest].max())))
            dropped = True
            break
        if new_edge is None and not dropped:
            raise GraphSaturatedError(f"no candidate edge around ({i}, {j}) and nothing above the removal threshold")
    return RewireResult(g.with_edges(_edge_list(A)), added, removed, log)


def write_rewire_log(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "action", "i", "j", "min_curvature", "max_curvature"])
        for row in result.log:
            w.writerow(list(row[:4]) + [repr(row[4]), repr(row[5])])


__all__ = [
    "CurvatureReport",
    "GraphSaturatedError",
    "RewireResult",
    "balanced_forman_curvature",
    "curvature_report",
    "sdrf_rewire",
    "write_rewire_log",
]
