"""Affine maps, activations, losses, Adam and the parameter checkpoint format."""
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, relu, sigmoid, softmax_rows

PROB_FLOOR = 1e-12

__all__ = [
    "AdamState",
    "DenseMap",
    "ParamSet",
    "adam_step",
    "cross_entropy",
    "dense_forward",
    "glorot_uniform",
    "kl_divergence",
    "load_checkpoint",
    "relu",
    "save_checkpoint",
    "sigmoid",
    "softmax_rows",
]


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class DenseMap:
    """``X @ W + b``; ``b`` may be None."""

    W: np.ndarray
    b: np.ndarray = None

    @classmethod
    def init(cls, rng, in_dim, out_dim, bias=True):
        return cls(glorot_uniform(rng, in_dim, out_dim), np.zeros(out_dim) if bias else None)

    @property
    def in_dim(self):
        return self.W.shape[0]

    @property
    def out_dim(self):
        return self.W.shape[1]


def dense_forward(m, X):
    """Apply a :class:`DenseMap`; works on arrays and on tape tensors alike."""
    in_dim = m.W.shape[0]
    xs = X.shape if isinstance(X, Tensor) else np.shape(X)
    if xs[-1] != in_dim:
        raise ValueError(f"input has {xs[-1]} columns, map expects {in_dim}")
    if isinstance(X, Tensor) or isinstance(m.W, Tensor) or isinstance(m.b, Tensor):
        out = ad.matmul(X, m.W)
        return out if m.b is None else ad.add(out, m.b)
    out = np.asarray(X) @ m.W
    return out if m.b is None else out + m.b


# ---------------------------------------------------------------------- losses


def _loss_result(t, tensor_in):
    return t if tensor_in else float(t.value)


def _check_mask(mask, n):
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape[0] != n:
        raise ValueError(f"mask has length {mask.shape[0]}, expected {n}")
    if not mask.any():
        raise ValueError("mask selects no nodes")
    return np.flatnonzero(mask)


def cross_entropy(probs, y, mask):
    """Mean over masked nodes of ``-log max(probs[i, y_i], 1e-12)``."""
    tensor_in = isinstance(probs, Tensor)
    p = ad.lift(probs)
    idx = _check_mask(mask, p.shape[0])
    y = np.asarray(y)
    picked = ad.gather(p, idx, y[idx])
    return _loss_result(ad.mul(ad.mean(ad.log_floor(picked, PROB_FLOOR)), -1.0), tensor_in)


def kl_divergence(teacher_probs, student_probs, mask):
    """Mean over masked nodes of KL(teacher || student), both floored at 1e-12."""
    tensor_in = isinstance(teacher_probs, Tensor) or isinstance(student_probs, Tensor)
    t = ad.lift(teacher_probs)
    s = ad.lift(student_probs)
    idx = _check_mask(mask, t.shape[0])
    t = ad.take_rows(t, idx)
    s = ad.take_rows(s, idx)
    diff = ad.sub(ad.log_floor(t, PROB_FLOOR), ad.log_floor(s, PROB_FLOOR))
    return _loss_result(ad.mean(ad.sum_rows(ad.mul(t, diff))), tensor_in)


# ----------------------------------------------------------------- parameters


class ParamSet(dict):
    """Ordered name -> ndarray mapping used for optimization and checkpoints."""

    def copy(self):
        return ParamSet({k: v.copy() for k, v in self.items()})

    def as_variables(self):
        return {k: ad.variable(v) for k, v in self.items()}

    def as_constants(self):
        return {k: Tensor(v) for k, v in self.items()}

    def n_params(self):
        return int(sum(v.size for v in self.values()))

    def dense(self, prefix):
        return DenseMap(self[prefix + ".W"], self.get(prefix + ".b"))


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One bias-corrected Adam update with decoupled weight decay.

    Updates ``params`` and ``state`` in place and returns both.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ----------------------------------------------------------------- checkpoint

_CKPT_MAGIC = b"FKDP1"


def save_checkpoint(params, path):
    """``FKDP1``, tensor count, then per tensor: name length, UTF-8 name, rank,
    dims (uint64) and row-major float64 data. Integers are little-endian."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:5] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not an FKDP1 checkpoint")
    off = 5
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    out = ParamSet()
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + ln].decode("utf-8")
        off += ln
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", raw, off)
        off += 8 * rank
        size = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(dims).copy()
        off += 8 * size
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return out
