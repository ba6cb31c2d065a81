"""Undecimated graph framelet transforms (exact and Chebyshev) and band adjacencies."""
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from sklearn.base import BaseEstimator, TransformerMixin

from .linalg import symmetric_eig


@dataclass(frozen=True)
class FilterBank:
    """Low-pass ``a_hat`` and high-pass ``b_hat[r]`` filters on [0, π]."""

    a_hat: Callable
    b_hat: tuple
    J: int
    m: int = 0
    name: str = "custom"

    @property
    def L(self):
        return len(self.b_hat)

    def index_set(self):
        """[(0, J)] followed by (r, j) for r = 1..L, j = 0..J."""
        return [(0, self.J)] + [(r, j) for r in range(1, self.L + 1) for j in range(self.J + 1)]

    def resolution_residual(self, n_grid=1001):
        xi = np.linspace(0.0, np.pi, n_grid)
        total = self.a_hat(xi) ** 2 + sum(b(xi) ** 2 for b in self.b_hat)
        return float(np.max(np.abs(total - 1.0)))


def coarsest_scale(lambda_max):
    """Smallest integer m >= 0 with 2^{-m} * lambda_max <= π."""
    m = 0
    while lambda_max / 2.0**m > np.pi:
        m += 1
    return m


def _haar_low(xi):
    return np.cos(np.asarray(xi) / 2.0)


def _haar_high(xi):
    return np.sin(np.asarray(xi) / 2.0)


def haar_filter_bank(L=1, J=1, lambda_max=2.0):
    if L != 1:
        raise ValueError("the Haar-type bank has exactly one high-pass filter (L=1)")
    if J < 1:
        raise ValueError("J must be >= 1")
    return FilterBank(_haar_low, (_haar_high,), J=J, m=coarsest_scale(lambda_max), name="haar")


# ------------------------------------------------------------------ Chebyshev


def chebyshev_coefficients(f, degree):
    """Chebyshev interpolant coefficients of ``f`` on [0, π], in the variable t = 2ξ/π - 1."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    return npcheb.chebinterpolate(lambda t: f(np.pi * (np.asarray(t) + 1.0) / 2.0), degree)


def chebyshev_eval(coef, xi):
    return npcheb.chebval(2.0 * np.asarray(xi) / np.pi - 1.0, coef)


def clenshaw_matrix(coef, M):
    """Evaluate Σ c_k T_k(2M/π - I) by the Clenshaw recurrence (M symmetric, spectrum in [0, π])."""
    n = M.shape[0]
    I = np.eye(n)
    T = (2.0 / np.pi) * M - I
    b1 = np.zeros_like(M)
    b2 = np.zeros_like(M)
    for c in coef[:0:-1]:
        b1, b2 = 2.0 * (T @ b1) - b2 + c * I, b1
    return T @ b1 - b2 + coef[0] * I


# ----------------------------------------------------------- framelet system


@dataclass(frozen=True, eq=False)
class FrameletSystem:
    index_set: list
    W: dict
    mode: str
    degree: int = 0
    J: int = 1
    multipliers: dict = field(default=None)  # exact mode only: spectral multiplier per band
    spectrum: object = None  # exact mode only: SpectralDecomposition of L̂

    @property
    def low(self):
        return self.index_set[0]

    @property
    def high(self):
        return self.index_set[1:]

    @property
    def n(self):
        return self.W[self.low].shape[0]


def _band_multiplier(fb, key, lam):
    """Spectral multiplier of band ``key`` evaluated at eigenvalues ``lam``."""
    r, j = key
    m = fb.m
    if r == 0:
        out = np.ones_like(lam)
        for s in range(m, m + fb.J + 1):
            out = out * fb.a_hat(lam / 2.0**s)
        return out
    out = fb.b_hat[r - 1](lam / 2.0 ** (m + j))
    for s in range(m, m + j):
        out = out * fb.a_hat(lam / 2.0**s)
    return out


def exact_framelet_matrices(ops, fb, eig_method="auto"):
    """W_{r,j} = f_{r,j}(L̂) from the eigendecomposition of L̂.

    Low pass composes ``a_hat`` over scales m..m+J; band (r, j) is
    ``b_hat_r`` at scale m+j times ``a_hat`` over scales m..m+j-1.
    """
    spec = symmetric_eig(ops.L_hat, method=eig_method)
    W, mult = {}, {}
    for key in fb.index_set():
        mult[key] = _band_multiplier(fb, key, spec.lam)
        W[key] = spec.apply(mult[key])
    return FrameletSystem(fb.index_set(), W, "exact", 0, fb.J, mult, spec)


def quasi_framelet_matrices(ops, fb, degree=10):
    """Chebyshev (quasi-framelet) approximation of every W_{r,j}; no eigendecomposition."""
    if degree < 4:
        raise ValueError("degree must be >= 4")
    L = ops.L_hat
    m = fb.m
    a_coef = chebyshev_coefficients(fb.a_hat, degree)
    b_coef = [chebyshev_coefficients(b, degree) for b in fb.b_hat]
    # low-pass prefix products T0(L/2^m) ... T0(L/2^{m+s-1}), shared by every band
    T0 = [clenshaw_matrix(a_coef, L / 2.0**s) for s in range(m, m + fb.J + 1)]
    prefix = [np.eye(L.shape[0])]
    for t in T0:
        prefix.append(t @ prefix[-1])
    W = {}
    for key in fb.index_set():
        r, j = key
        if r == 0:
            W[key] = prefix[fb.J + 1]
        else:
            W[key] = clenshaw_matrix(b_coef[r - 1], L / 2.0 ** (m + j)) @ prefix[j]
    return FrameletSystem(fb.index_set(), W, "chebyshev", degree, fb.J)


def build_framelet(ops, J=1, mode="chebyshev", degree=10, eig_method="auto"):
    fb = haar_filter_bank(1, J)
    if mode == "exact":
        return exact_framelet_matrices(ops, fb, eig_method=eig_method)
    if mode == "chebyshev":
        return quasi_framelet_matrices(ops, fb, degree)
    raise ValueError(f"unknown framelet mode {mode!r}")


def tightness_residual(fs):
    """max-norm of Σ W^T W - I."""
    S = sum(W.T @ W for W in fs.W.values())
    return float(np.max(np.abs(S - np.eye(S.shape[0]))))


# --------------------------------------------------------- band adjacencies


@dataclass(frozen=True, eq=False)
class BandAdjacencies:
    A_band: dict
    powers: dict  # powers[key][l] for l = 1..l_max
    gram: dict = None  # W^T W per band, used to shift Â by a multiple of I
    shift: dict = None  # per-band shift s in W^T (Â + s I) W, None when unshifted

    @property
    def keys(self):
        return list(self.A_band)

    @property
    def l_max(self):
        return min(len(p) for p in self.powers.values()) - 1

    def power(self, key, l):
        try:
            return self.powers[key][l]
        except (KeyError, IndexError):
            raise ValueError(f"power {l} of band {key} not available (l_max={self.l_max})") from None


def _sym(M):
    return 0.5 * (M + M.T)


def band_adjacencies(fs, ops, l_max=2, shift=None):
    """A_{r,j} = W^T Â W per band, plus matrix powers 1..l_max.

    ``shift`` optionally maps band key -> scalar s so that the band uses
    W^T (Â + s I) W instead.
    """
    if l_max < 1:
        raise ValueError("l_max must be >= 1")
    A_band, gram = {}, {}
    for key in fs.index_set:
        W = fs.W[key]
        gram[key] = _sym(W.T @ W)
        A_band[key] = _sym(W.T @ ops.A_hat @ W)
        if shift and shift.get(key):
            A_band[key] = A_band[key] + shift[key] * gram[key]
    return BandAdjacencies(A_band, _powers(A_band, l_max), gram, dict(shift) if shift else None)


def _powers(A_band, l_max):
    powers = {}
    for key, Ab in A_band.items():
        p = [None, Ab]
        for _ in range(2, l_max + 1):
            p.append(_sym(p[-1] @ Ab))
        powers[key] = p
    return powers


def shifted_bands(ba, shift, l_max=None):
    """Rebuild ``ba`` with W^T (Â + s_b I) W for the per-band shifts ``s_b``
    (relative to the unshifted bands), recomputing powers."""
    if ba.gram is None:
        raise ValueError("band adjacencies were built without Gram matrices")
    base = ba.shift or {}
    A_band = {}
    for key, Ab in ba.A_band.items():
        delta = shift.get(key, 0.0) - base.get(key, 0.0)
        A_band[key] = Ab + delta * ba.gram[key] if delta else Ab
    return BandAdjacencies(A_band, _powers(A_band, l_max or ba.l_max), ba.gram, dict(shift))


# ------------------------------------------------------------- binary cache

_MAGIC = b"FRMW1"
_HEADER = struct.Struct("<5sIIBI32s")  # magic, n, bands, mode, degree, sha256(graph)
_MODES = {"exact": 0, "chebyshev": 1}


class CacheMismatchError(ValueError):
    pass


def save_framelet_cache(fs, path, graph_hash):
    """Header ``FRMW1 | n | bands | mode | degree | sha256`` then (r, j) int32
    pairs for each band, then each band's W as row-major float64."""
    digest = bytes.fromhex(graph_hash)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, fs.n, len(fs.index_set), _MODES[fs.mode], fs.degree, digest))
        for r, j in fs.index_set:
            fh.write(struct.pack("<ii", r, j))
        for key in fs.index_set:
            fh.write(np.ascontiguousarray(fs.W[key], dtype="<f8").tobytes())


def load_framelet_cache(path, graph_hash, n=None):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size or raw[:5] != _MAGIC:
        raise CacheMismatchError(f"{path}: not a framelet cache (bad magic)")
    magic, nn, bands, mode, degree, digest = _HEADER.unpack_from(raw, 0)
    if digest.hex() != graph_hash:
        raise CacheMismatchError(f"{path}: cache was built for a different graph")
    if n is not None and nn != n:
        raise CacheMismatchError(f"{path}: cache has n={nn}, expected {n}")
    off = _HEADER.size
    keys = []
    for _ in range(bands):
        keys.append(struct.unpack_from("<ii", raw, off))
        off += 8
    expected = off + bands * nn * nn * 8
    if len(raw) != expected:
        raise CacheMismatchError(f"{path}: truncated or oversized payload ({len(raw)} != {expected} bytes)")
    W = {}
    for key in keys:
        W[key] = np.frombuffer(raw, dtype="<f8", count=nn * nn, offset=off).reshape(nn, nn).copy()
        off += nn * nn * 8
    mode_name = {v: k for k, v in _MODES.items()}[mode]
    J = max(j for _, j in keys)
    return FrameletSystem(keys, W, mode_name, degree, J)


# ------------------------------------------------------------------ estimator


class FrameletTransform(TransformerMixin, BaseEstimator):
    """Fit on a :class:`~fkd.graph.Graph`; ``transform(H)`` returns the band
    coefficients ``W_{r,j} H`` stacked along a new leading axis.

    ``inverse_transform`` applies ``Σ W^T`` and recovers ``H`` up to the
    tightness tolerance of the chosen mode.
    """

    def __init__(self, J=1, mode="exact", degree=10):
        self.J = J
        self.mode = mode
        self.degree = degree

    def fit(self, graph, y=None):
        from .graph import normalized_operators

        self.operators_ = normalized_operators(graph)
        self.system_ = build_framelet(self.operators_, self.J, self.mode, self.degree)
        self.index_set_ = list(self.system_.index_set)
        self.n_nodes_ = graph.n
        return self

    def _check(self, H):
        from sklearn.utils.validation import check_array, check_is_fitted

        check_is_fitted(self, "system_")
        H = check_array(H, ensure_2d=False, dtype=np.float64)
        if H.shape[0] != self.n_nodes_:
            raise ValueError(f"H has {H.shape[0]} rows, transform was fitted on {self.n_nodes_} nodes")
        return H

    def transform(self, H):
        H = self._check(H)
        return np.stack([self.system_.W[k] @ H for k in self.index_set_])

    def inverse_transform(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        return sum(self.system_.W[k].T @ c for k, c in zip(self.index_set_, coeffs))

    def tightness_residual(self):
        return tightness_residual(self.system_)


def band_label(key, fs_or_low):
    """'low' for the low-pass key, 'high_r{r}_j{j}' otherwise."""
    low = fs_or_low.low if hasattr(fs_or_low, "low") else fs_or_low
    return "low" if tuple(key) == tuple(low) else f"high_r{key[0]}_j{key[1]}"


__all__ = [
    "BandAdjacencies",
    "FilterBank",
    "FrameletSystem",
    "FrameletTransform",
    "band_adjacencies",
    "build_framelet",
    "chebyshev_coefficients",
    "clenshaw_matrix",
    "coarsest_scale",
    "exact_framelet_matrices",
    "haar_filter_bank",
    "load_framelet_cache",
    "quasi_framelet_matrices",
    "save_framelet_cache",
    "tightness_residual",
]
