"""Undirected attributed graphs: file IO, normalized operators, homophily,
the controllable-homophily generator and train/val/test splits."""
import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from ._random import substream


class GraphFormatError(ValueError):
    """Raised when a graph input file cannot be parsed or is inconsistent."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


def _canonical_edges(pairs, n):
    """Symmetrize, drop self-loops and duplicates; rows are (i, j) with i < j, sorted."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise ValueError(f"edge endpoint out of range for n={n}")
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keep = lo != hi
    uniq = np.unique(np.stack([lo[keep], hi[keep]], axis=1), axis=0)
    return uniq.reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph with node features and integer labels.

    ``edges`` stores every undirected edge once as ``(i, j)`` with ``i < j``.
    """

    n: int
    edges: np.ndarray
    X: np.ndarray
    y: np.ndarray
    c: int = field(default=None)

    def __post_init__(self):
        n = int(self.n)
        edges = _canonical_edges(self.edges, n)
        X = np.array(self.X, dtype=np.float64, copy=True)
        if X.ndim == 1:
            X = X[:, None]
        y = np.array(self.y, dtype=np.int64, copy=True).reshape(-1)
        if X.shape[0] != n or y.shape[0] != n:
            raise ValueError(f"X has {X.shape[0]} rows and y has {y.shape[0]} entries, expected n={n}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite entries")
        c = int(y.max()) + 1 if self.c is None and n else int(self.c or 0)
        if n and (y.min() < 0 or y.max() >= c):
            raise ValueError(f"labels must lie in [0, {c})")
        for arr in (edges, X, y):
            arr.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "c", c)

    @property
    def n_edges(self):
        return len(self.edges)

    def adjacency(self):
        """Dense 0/1 adjacency matrix without self-loops."""
        A = np.zeros((self.n, self.n))
        if self.n_edges:
            A[self.edges[:, 0], self.edges[:, 1]] = 1.0
            A[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return A

    def with_edges(self, edges):
        """Same nodes, features and labels with a different edge set."""
        return Graph(self.n, edges, self.X, self.y, self.c)

    def permuted(self, perm):
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Graph(self.n, inv[self.edges], self.X[perm], self.y[perm], self.c)

    def structure_hash(self):
        """SHA-256 over node count and canonical edge list."""
        h = hashlib.sha256()
        h.update(np.int64(self.n).tobytes())
        h.update(np.ascontiguousarray(self.edges, dtype=np.int64).tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class Operators:
    A_hat: np.ndarray
    L_hat: np.ndarray
    degrees: np.ndarray

    @property
    def n(self):
        return self.A_hat.shape[0]


@dataclass(frozen=True, eq=False)
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


# --------------------------------------------------------------------------- IO


def _read_lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise GraphFormatError(path, None, f"cannot read file ({exc.strerror})") from exc


def load_graph(edge_list_path, features_path, labels_path):
    """Read a graph from an edge list, a feature CSV and a label file.

    Node order is the row order of the features file. Self-loops are dropped
    and ``"0 1"`` / ``"1 0"`` collapse to a single edge.
    """
    rows = []
    for lineno, line in enumerate(_read_lines(features_path), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(v) for v in next(csv.reader([line]))])
        except ValueError as exc:
            raise GraphFormatError(features_path, lineno, f"bad feature value ({exc})") from exc
        if rows[-1] and len(rows[-1]) != len(rows[0]):
            raise GraphFormatError(features_path, lineno, f"expected {len(rows[0])} columns, got {len(rows[-1])}")
        if not np.all(np.isfinite(rows[-1])):
            raise GraphFormatError(features_path, lineno, "non-finite feature value")
    n = len(rows)

    labels = []
    for lineno, line in enumerate(_read_lines(labels_path), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        try:
            labels.append(int(s))
        except ValueError as exc:
            raise GraphFormatError(labels_path, lineno, f"bad label {s!r}") from exc
        if labels[-1] < 0:
            raise GraphFormatError(labels_path, lineno, "labels must be non-negative")
    if len(labels) != n:
        raise GraphFormatError(labels_path, None, f"{len(labels)} labels but {n} feature rows in {features_path}")

    pairs = []
    for lineno, line in enumerate(_read_lines(edge_list_path), start=1):
        s = line.split("#", 1)[0].split()
        if not s:
            continue
        if len(s) != 2:
            raise GraphFormatError(edge_list_path, lineno, f"expected two node ids, got {len(s)} fields")
        try:
            i, j = int(s[0]), int(s[1])
        except ValueError as exc:
            raise GraphFormatError(edge_list_path, lineno, f"bad node id in {line.strip()!r}") from exc
        for v in (i, j):
            if not 0 <= v < n:
                raise GraphFormatError(edge_list_path, lineno, f"node {v} out of range [0, {n})")
        pairs.append((i, j))

    X = np.array(rows, dtype=np.float64).reshape(n, -1)
    return Graph(n, np.array(pairs, dtype=np.int64).reshape(-1, 2), X, np.array(labels, dtype=np.int64))


def save_graph(g, edge_list_path, features_path, labels_path):
    """Write ``g`` in the formats read by :func:`load_graph` (lossless for float64)."""
    with open(edge_list_path, "w", encoding="utf-8") as fh:
        fh.write(f"# n={g.n} edges={g.n_edges}\n")
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")
    with open(features_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for row in g.X:
            writer.writerow([repr(float(v)) for v in row])
    with open(labels_path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{int(v)}\n" for v in g.y)


# -------------------------------------------------------------------- operators


def normalized_operators(g):
    """Â = D^{-1/2}(A + I)D^{-1/2} and L̂ = I - Â, with D the row sums of A + I."""
    A = g.adjacency() + np.eye(g.n)
    deg = A.sum(axis=1)
    s = 1.0 / np.sqrt(deg)
    A_hat = s[:, None] * A * s[None, :]
    A_hat = 0.5 * (A_hat + A_hat.T)
    L_hat = np.eye(g.n) - A_hat
    return Operators(A_hat, L_hat, deg)


def edge_homophily(g):
    """Fraction of undirected edges whose endpoints share a label."""
    if g.n_edges == 0:
        raise ValueError("edge homophily is undefined for a graph without edges")
    return float(np.mean(g.y[g.edges[:, 0]] == g.y[g.edges[:, 1]]))


# -------------------------------------------------------------------- synthetic


def _sample_edges(y, c, n_edges, target_h, rng):
    n = len(y)
    by_class = [np.flatnonzero(y == k) for k in range(c)]
    others = [np.flatnonzero(y != k) for k in range(c)]
    seen = set()
    edges = []
    max_tries = 200 * n_edges + 1000
    tries = 0
    while len(edges) < n_edges:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("edge sampling stalled; requested degree too high for the class sizes")
        u = int(rng.integers(n))
        pool = by_class[y[u]] if rng.random() < target_h else others[y[u]]
        if len(pool) == 0:
            continue
        v = int(pool[rng.integers(len(pool))])
        if u == v:
            continue
        key = (u, v) if u < v else (v, u)
        if key in seen:
            continue
        seen.add(key)
        edges.append(key)
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def generate_synthetic(n, c, d0, avg_degree, target_h, feature_scale, seed, *, max_attempts=20, tol=0.03):
    """Random graph with ``c`` balanced-in-expectation classes and a controllable edge homophily.

    Features are Gaussian around a random class mean (length ``feature_scale``,
    unit per-coordinate noise). Edges are placed one at a time: pick a source
    uniformly, then with probability ``target_h`` a target from the same class,
    otherwise from a different class. For ``n >= 500`` the draw is repeated
    until the measured homophily is within ``tol`` of the target.
    """
    if c < 1 or n < 2 * c:
        raise ValueError(f"need n >= 2c (n={n}, c={c})")
    if avg_degree < 1:
        raise ValueError("avg_degree must be >= 1")
    if not 0.0 <= target_h <= 1.0:
        raise ValueError("target_h must lie in [0, 1]")
    n_edges = int(n * avg_degree // 2)
    if n_edges > n * (n - 1) // 2:
        raise ValueError(f"{n_edges} edges requested but only {n * (n - 1) // 2} node pairs exist")

    rng = substream(seed, "generation")
    y = rng.integers(c, size=n)
    means = rng.normal(size=(c, d0))
    means *= feature_scale / np.linalg.norm(means, axis=1, keepdims=True)
    X = means[y] + rng.normal(size=(n, d0))

    # capacity checks so rejection sampling can terminate
    counts = np.bincount(y, minlength=c)
    if target_h == 1.0 and n_edges > int(np.sum(counts * (counts - 1) // 2)):
        raise ValueError("not enough same-class pairs for target_h = 1")
    if target_h == 0.0 and n_edges > (n * n - int(np.sum(counts**2))) // 2:
        raise ValueError("not enough cross-class pairs for target_h = 0")

    for _ in range(max_attempts):
        edges = _sample_edges(y, c, n_edges, target_h, rng)
        g = Graph(n, edges, X, y, c)
        if n < 500 or abs(edge_homophily(g) - target_h) <= tol:
            return g
    raise RuntimeError(f"could not reach homophily {target_h}±{tol} in {max_attempts} attempts")


# ----------------------------------------------------------------------- splits


def split_masks(g, mode="ratio", *, ratios=(0.2, 0.2, 0.6), k_train=20, n_val=500, n_test=1000, seed=0):
    """Deterministic train/val/test masks.

    ``mode="ratio"`` samples ``ratios`` of every class (the per-class 20/20/60
    convention); ``mode="per_class"`` takes ``k_train`` nodes of each class
    for training then ``n_val`` and ``n_test`` nodes from the remainder
    (Planetoid style, the union need not cover every node).
    """
    rng = substream(seed, "split")
    train = np.zeros(g.n, dtype=bool)
    val = np.zeros(g.n, dtype=bool)
    test = np.zeros(g.n, dtype=bool)
    if mode == "ratio":
        r_tr, r_va, r_te = ratios
        if min(ratios) < 0 or r_tr + r_va + r_te > 1 + 1e-9:
            raise ValueError(f"invalid split ratios {ratios}")
        for k in range(g.c):
            idx = rng.permutation(np.flatnonzero(g.y == k))
            m = len(idx)
            a = int(round(r_tr * m))
            b = a + int(round(r_va * m))
            e = b + int(round(r_te * m)) if r_tr + r_va + r_te < 1 - 1e-9 else m
            train[idx[:a]] = True
            val[idx[a:b]] = True
            test[idx[b:min(e, m)]] = True
    elif mode in ("per_class", "per-class-count"):
        for k in range(g.c):
            idx = np.flatnonzero(g.y == k)
            if len(idx) < k_train:
                raise ValueError(f"class {k} has {len(idx)} nodes, fewer than k_train={k_train}")
            train[rng.choice(idx, size=k_train, replace=False)] = True
        rest = rng.permutation(np.flatnonzero(~train))
        if n_val + n_test > len(rest):
            raise ValueError(f"n_val + n_test = {n_val + n_test} exceeds the {len(rest)} remaining nodes")
        val[rest[:n_val]] = True
        test[rest[n_val:n_val + n_test]] = True
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    return SplitMasks(train, val, test)
