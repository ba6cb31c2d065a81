"""Framelet teacher models: spatial, simplified (linearized) and spectral.

Every forward pass accepts plain arrays or tape tensors as parameter values and
returns ``(logits, probs)``; with arrays the result is plain numpy.
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from ._random import substream
from .framelet import shifted_bands
from .nn import ParamSet, cross_entropy, glorot_uniform, save_checkpoint
from .training import fit_params

KINDS = ("spatial", "simplified", "spectral")


def band_name(key):
    return f"r{key[0]}j{key[1]}"


@dataclass(frozen=True)
class EnergyPerturbation:
    epsilon: float = 0.0
    epsilon_s: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and np.isfinite(self.epsilon_s)):
            raise ValueError("perturbation magnitudes must be finite")


def perturbation_shift(keys, eps):
    """Per-band shift of Â: +eps on the low pass (first key), -eps on every high pass."""
    return {k: (eps if i == 0 else -eps) for i, k in enumerate(keys)}


def perturbed_band_adjacencies(ba, fs=None, ops=None, eps=0.0):
    """Bands rebuilt from W^T (Â ± eps I) W with powers recomputed.

    ``fs`` and ``ops`` are accepted for interface symmetry; the Gram matrices
    stored on ``ba`` are enough to apply the shift.
    """
    if not eps:
        return ba
    return shifted_bands(ba, perturbation_shift(ba.keys, eps))


# --------------------------------------------------------------- parameters


@dataclass
class SpatialTeacherParams:
    params: ParamSet
    dims: list
    bands: list

    @property
    def n_layers(self):
        return len(self.dims) - 1

    @classmethod
    def init(cls, rng, dims, bands):
        p = ParamSet()
        for layer in range(len(dims) - 1):
            for key in bands:
                pre = f"layer{layer}.{band_name(key)}"
                p[pre + ".W"] = glorot_uniform(rng, dims[layer], dims[layer + 1])
                p[pre + ".b"] = np.zeros(dims[layer + 1])
        return cls(p, list(dims), list(bands))


@dataclass
class SimplifiedTeacherParams:
    params: ParamSet
    power: int
    bands: list

    @classmethod
    def init(cls, rng, d0, c, bands, power):
        p = ParamSet()
        for key in bands:
            p[band_name(key) + ".W"] = glorot_uniform(rng, d0, c)
            p[band_name(key) + ".b"] = np.zeros(c)
        return cls(p, int(power), list(bands))


@dataclass
class SpectralTeacherParams:
    params: ParamSet
    dims: list
    bands: list

    @property
    def n_layers(self):
        return len(self.dims) - 1

    @classmethod
    def init(cls, rng, n, dims, bands):
        p = ParamSet()
        for layer in range(len(dims) - 1):
            for key in bands:
                p[f"layer{layer}.{band_name(key)}.theta"] = np.ones(n)
            p[f"layer{layer}.shared.W"] = glorot_uniform(rng, dims[layer], dims[layer + 1])
            p[f"layer{layer}.shared.b"] = np.zeros(dims[layer + 1])
        return cls(p, list(dims), list(bands))


# ------------------------------------------------------------------ forward


def _finish(logits):
    probs = ad.softmax_rows(logits)
    if isinstance(logits, ad.Tensor) and logits.requires_grad:
        return logits, probs
    return logits.value, probs.value


def _dropout(H, rate, rng):
    if not rate or rng is None:
        return H
    keep = (rng.random(H.shape) >= rate) / (1.0 - rate)
    return ad.mul(H, keep)


def _check_rows(X, n, d):
    if X.shape[0] != n:
        raise ValueError(f"X has {X.shape[0]} rows, graph has {n} nodes")
    if X.shape[1] != d:
        raise ValueError(f"X has {X.shape[1]} columns, model expects {d}")


def _spatial_logits(V, dims, bands, A_band, X, dropout=0.0, rng=None, linear=False):
    H = X
    for layer in range(len(dims) - 1):
        out = None
        for key in bands:
            pre = f"layer{layer}.{band_name(key)}"
            Z = ad.add(ad.matmul(H, V[pre + ".W"]), V[pre + ".b"])
            term = ad.matmul(A_band[key], Z)
            out = term if out is None else ad.add(out, term)
        if layer < len(dims) - 2 and not linear:
            out = _dropout(ad.relu(out), dropout, rng)
        H = out
    return H


def spatial_teacher_forward(p, ba, X, pert=None, *, values=None, linear=False):
    """Σ_band A_band (H W + b) per layer, ReLU between layers, softmax at the end.

    ``linear=True`` drops the ReLU (used for exact sensitivity analysis).
    """
    X = np.asarray(X, dtype=np.float64)
    _check_rows(X, ba.A_band[p.bands[0]].shape[0], p.dims[0])
    if pert is not None and pert.epsilon:
        ba = perturbed_band_adjacencies(ba, eps=pert.epsilon)
    V = p.params if values is None else values
    return _finish(ad.lift(_spatial_logits(V, p.dims, p.bands, ba.A_band, X, linear=linear)))


def simplified_inputs(ba, X, power):
    """Precomputed (A_band^power X, A_band^power 1) per band."""
    out = {}
    ones = np.ones((X.shape[0], 1))
    for key in ba.keys:
        Ap = ba.power(key, power)
        out[key] = (Ap @ X, Ap @ ones)
    return out


def _simplified_logits(V, bands, pre):
    out = None
    for key in bands:
        AX, A1 = pre[key]
        name = band_name(key)
        term = ad.add(ad.matmul(AX, V[name + ".W"]), ad.mul(A1, V[name + ".b"]))
        out = term if out is None else ad.add(out, term)
    return out


def simplified_teacher_forward(p, ba, X, pert=None, *, values=None):
    """Σ_band A_band^ℓ (X W + b) with no intermediate activation."""
    X = np.asarray(X, dtype=np.float64)
    W0 = p.params[band_name(p.bands[0]) + ".W"]
    _check_rows(X, ba.A_band[p.bands[0]].shape[0], W0.shape[0])
    if pert is not None and pert.epsilon_s:
        ba = shifted_bands(ba, perturbation_shift(ba.keys, pert.epsilon_s), l_max=max(p.power, ba.l_max))
    pre = simplified_inputs(ba, X, p.power)
    V = p.params if values is None else values
    return _finish(ad.lift(_simplified_logits(V, p.bands, pre)))


def _spectral_logits(V, dims, bands, W, X, dropout=0.0, rng=None):
    H = X
    for layer in range(len(dims) - 1):
        Z = ad.add(ad.matmul(H, V[f"layer{layer}.shared.W"]), V[f"layer{layer}.shared.b"])
        out = None
        for key in bands:
            theta = ad.column(V[f"layer{layer}.{band_name(key)}.theta"])
            term = ad.matmul(W[key].T, ad.mul(theta, ad.matmul(W[key], Z)))
            out = term if out is None else ad.add(out, term)
        if layer < len(dims) - 2:
            out = _dropout(ad.relu(out), dropout, rng)
        H = out
    return H


def spectral_teacher_forward(p, fs, X, *, values=None):
    """Σ_band W^T diag(θ_band) W · (H W_shared + b) per layer."""
    X = np.asarray(X, dtype=np.float64)
    _check_rows(X, fs.n, p.dims[0])
    for key in p.bands:
        th = p.params[f"layer0.{band_name(key)}.theta"]
        if th.shape != (fs.n,):
            raise ValueError(f"theta has shape {th.shape}, expected ({fs.n},)")
    V = p.params if values is None else values
    return _finish(ad.lift(_spectral_logits(V, p.dims, p.bands, fs.W, X)))


# ----------------------------------------------------------------- training


@dataclass
class TeacherConfig:
    kind: str = "spatial"
    depth: int = 2  # layers (spatial / spectral) or power ℓ (simplified)
    hidden: int = 64
    lr: float = 0.01
    weight_decay: float = 0.01
    epochs: int = 200
    seed: int = 0
    dropout: float = 0.0
    eps: float = 0.0
    eps_s: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown teacher kind {self.kind!r}; expected one of {KINDS}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class TeacherResult:
    kind: str
    model: object  # one of the *TeacherParams types, holding the best parameters
    history: list
    best_epoch: int
    probs: np.ndarray
    val_acc: float
    test_acc: float
    config: TeacherConfig = field(default=None)


def teacher_predict(kind, model, ctx, X, pert=None):
    if kind == "spatial":
        return spatial_teacher_forward(model, ctx.ba, X, pert)[1]
    if kind == "simplified":
        return simplified_teacher_forward(model, ctx.ba, X, pert)[1]
    return spectral_teacher_forward(model, ctx.fs, X)[1]


def train_teacher(ctx, masks, config, y=None, X=None):
    """Full-batch cross-entropy training on the train mask with best-val selection."""
    g = ctx.graph
    y = g.y if y is None else np.asarray(y)
    X = g.X if X is None else np.asarray(X, dtype=np.float64)
    c = int(g.c or (y.max() + 1))
    bands = ctx.ba.keys
    rng = substream(config.seed, f"init.teacher.{config.kind}")
    drop_rng = substream(config.seed, f"dropout.teacher.{config.kind}")
    train = masks.train
    dims = [X.shape[1]] + [config.hidden] * (config.depth - 1) + [c]

    if config.kind == "spatial":
        model = SpatialTeacherParams.init(rng, dims, bands)
        ba = perturbed_band_adjacencies(ctx.ba, eps=config.eps)

        def logits_of(V, training):
            return _spatial_logits(V, dims, bands, ba.A_band, X,
                                   config.dropout if training else 0.0, drop_rng if training else None)
    elif config.kind == "simplified":
        model = SimplifiedTeacherParams.init(rng, X.shape[1], c, bands, config.depth)
        ba = ctx.ba
        if config.eps_s or ba.l_max < config.depth:
            ba = shifted_bands(ba, perturbation_shift(bands, config.eps_s), l_max=max(config.depth, ba.l_max))
        pre = simplified_inputs(ba, X, config.depth)

        def logits_of(V, training):
            return _simplified_logits(V, bands, pre)
    else:
        model = SpectralTeacherParams.init(rng, g.n, dims, bands)
        W = ctx.fs.W

        def logits_of(V, training):
            return _spectral_logits(V, dims, bands, W, X,
                                    config.dropout if training else 0.0, drop_rng if training else None)

    def objective(V):
        probs = ad.softmax_rows(logits_of(V, True))
        return cross_entropy(probs, y, train), probs.value

    def predict(params):
        return ad.softmax_rows(logits_of(params, False)).value

    stochastic = bool(config.dropout) and config.kind != "simplified"
    fit = fit_params(model.params, objective, predict, y, masks, epochs=config.epochs, lr=config.lr,
                     weight_decay=config.weight_decay, stochastic=stochastic, label=f"{config.kind} teacher")
    model.params = fit.params
    test_acc = float(np.mean(np.argmax(fit.probs[masks.test], 1) == y[masks.test])) if masks.test.any() else float("nan")
    return TeacherResult(config.kind, model, fit.history, fit.best_epoch, fit.probs, fit.best_val_acc, test_acc, config)


def save_teacher(result, path, *, config_hash=None):
    """FKDP1 checkpoint at ``path`` plus a JSON manifest at ``path + '.json'``."""
    save_checkpoint(result.model.params, path)
    m = result.model
    manifest = {
        "kind": result.kind,
        "dims": getattr(m, "dims", None),
        "power": getattr(m, "power", None),
        "bands": [list(k) for k in m.bands],
        "eps": result.config.eps if result.config else 0.0,
        "eps_s": result.config.eps_s if result.config else 0.0,
        "seed": result.config.seed if result.config else None,
        "config": asdict(result.config) if result.config else None,
        "config_hash": config_hash,
        "best_epoch": result.best_epoch,
        "val_acc": result.val_acc,
        "test_acc": result.test_acc,
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest
