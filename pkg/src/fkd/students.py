"""FMLP students: gated encode / score / decode over band adjacencies.

FMLP-O runs ``rounds`` encoding rounds. Round k encodes the k-th power of every
band adjacency (each row of the n x n matrix is one node's input) next to the
current node features, then gates the two per node with a sigmoid score. The
last round decodes both paths to class logits before gating. FMLP-S is a
single last-style round on ``A_band^l`` and the raw features.
"""
import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from ._random import substream
from .framelet import band_label
from .nn import ParamSet, cross_entropy, glorot_uniform, kl_divergence, save_checkpoint
from .teachers import band_name
from .training import accuracy, fit_params

VARIANTS = ("O", "S")


def _dense(p, name, rng, fan_in, fan_out):
    p[name + ".W"] = glorot_uniform(rng, fan_in, fan_out)
    p[name + ".b"] = np.zeros(fan_out)


def _score(p, name, rng, d_enc):
    p[name + ".P"] = glorot_uniform(rng, 2 * d_enc, 1)
    p[name + ".b"] = np.zeros(1)


@dataclass
class StudentParams:
    """Parameters of either variant.

    Names: ``{round}.enc.{band}`` (n -> d_enc), ``{round}.enc.x`` (features ->
    d_enc), ``{round}.score.{band}`` (P: 2*d_enc x 1, scalar b) and in the last
    round ``{round}.dec.{band}`` / ``{round}.dec.x`` (d_enc -> c).
    """

    params: ParamSet
    variant: str
    bands: list
    rounds: int
    d_enc: int
    power: int = 2  # FMLP-S band power

    def prefixes(self):
        if self.variant == "S":
            return ["s"]
        return [f"round{k}" for k in range(1, self.rounds + 1)]

    @classmethod
    def init(cls, rng, variant, n, d0, c, bands, d_enc=64, rounds=2, power=2):
        if variant not in VARIANTS:
            raise ValueError(f"unknown student variant {variant!r}")
        if variant == "O" and rounds < 1:
            raise ValueError("rounds must be >= 1")
        p = ParamSet()
        prefixes = ["s"] if variant == "S" else [f"round{k}" for k in range(1, rounds + 1)]
        for k, pre in enumerate(prefixes):
            for key in bands:
                _dense(p, f"{pre}.enc.{band_name(key)}", rng, n, d_enc)
            _dense(p, f"{pre}.enc.x", rng, d0 if k == 0 else d_enc, d_enc)
            for key in bands:
                _score(p, f"{pre}.score.{band_name(key)}", rng, d_enc)
        last = prefixes[-1]
        for key in bands:
            _dense(p, f"{last}.dec.{band_name(key)}", rng, d_enc, c)
        _dense(p, f"{last}.dec.x", rng, d_enc, c)
        return cls(p, variant, list(bands), 1 if variant == "S" else rounds, d_enc, power)


@dataclass
class ScoreVectors:
    """alpha[round][band] -> length-n vector in (0, 1); rounds are 1-based."""

    alpha: dict = field(default_factory=dict)

    def low(self, rnd):
        return self.alpha[rnd][next(iter(self.alpha[rnd]))]

    def means(self):
        return {(rnd, key): float(np.mean(v)) for rnd, d in self.alpha.items() for key, v in d.items()}


def _affine(V, name, X):
    return ad.add(ad.matmul(X, V[name + ".W"]), V[name + ".b"])


def _encode_round(V, pre, bands, band_inputs, H_in):
    """Encoders and score gates of one round -> (Q per band, H, alpha tensors)."""
    H = _affine(V, f"{pre}.enc.x", H_in)
    Q, alpha = {}, {}
    for key in bands:
        name = band_name(key)
        Q[key] = _affine(V, f"{pre}.enc.{name}", band_inputs[key])
        s = ad.matmul(ad.concat_cols(Q[key], H), V[f"{pre}.score.{name}.P"])
        alpha[key] = ad.sigmoid(ad.add(s, V[f"{pre}.score.{name}.b"]))
    return Q, H, alpha


def _gate(alpha, feat, graph):
    """alpha * feat + (1 - alpha) * graph with alpha an (n, 1) column."""
    return ad.add(ad.mul(alpha, feat), ad.mul(ad.sub(1.0, alpha), graph))


def _gated_sum(bands, alpha, feat, graph):
    out = None
    for key in bands:
        term = _gate(alpha[key], feat, graph[key])
        out = term if out is None else ad.add(out, term)
    return out


def _final_round(V, pre, bands, band_inputs, H_in):
    Q, H, alpha = _encode_round(V, pre, bands, band_inputs, H_in)
    ZX = _affine(V, f"{pre}.dec.x", H)
    Z = {key: _affine(V, f"{pre}.dec.{band_name(key)}", Q[key]) for key in bands}
    return _gated_sum(bands, alpha, ZX, Z), alpha


def _values(d):
    return {k: (v.value if isinstance(v, ad.Tensor) else v) for k, v in d.items()}


def _check(p, ba, X, powers):
    X = np.asarray(X, dtype=np.float64)
    n = ba.A_band[p.bands[0]].shape[0]
    if X.ndim != 2 or X.shape[0] != n:
        raise ValueError(f"X must have {n} rows, got shape {X.shape}")
    for key in p.bands:
        for l in powers:
            ba.power(key, l)
    return X


def _fmlp_o(V, p, ba, X):
    bands = p.bands
    H = X
    alphas = {}
    Y1 = None
    for k, pre in enumerate(p.prefixes(), start=1):
        inputs = {key: ba.power(key, k) for key in bands}
        if k == p.rounds:
            logits, alpha = _final_round(V, pre, bands, inputs, H)
        else:
            Q, Hk, alpha = _encode_round(V, pre, bands, inputs, H)
            H = _gated_sum(bands, alpha, Hk, Q)
            if k == 1:
                Y1 = H
        alphas[k] = alpha
    return logits, Y1, alphas


def fmlp_o_forward(p, ba, X, *, values=None):
    """Returns ``(probs, Y1, ScoreVectors)``; Y1 is the first-round output (None if rounds == 1)."""
    X = _check(p, ba, X, range(1, p.rounds + 1))
    V = p.params if values is None else values
    logits, Y1, alphas = _fmlp_o(V, p, ba, X)
    probs = ad.softmax_rows(logits)
    scores = ScoreVectors({r: {k: a.value.ravel() for k, a in d.items()} for r, d in alphas.items()})
    return probs.value, (None if Y1 is None else ad.lift(Y1).value), scores


def _fmlp_s(V, p, ba, X, l):
    inputs = {key: ba.power(key, l) for key in p.bands}
    logits, alpha = _final_round(V, "s", p.bands, inputs, X)
    return logits, {1: alpha}


def fmlp_s_forward(p, ba, X, l=None, *, values=None):
    """Returns ``(probs, ScoreVectors)`` for a single round on ``A_band^l`` and ``X``."""
    l = p.power if l is None else l
    X = _check(p, ba, X, [l])
    V = p.params if values is None else values
    logits, alphas = _fmlp_s(V, p, ba, X, l)
    scores = ScoreVectors({r: {k: a.value.ravel() for k, a in d.items()} for r, d in alphas.items()})
    return ad.softmax_rows(logits).value, scores


def distill_loss(student_probs, teacher_probs, y, mask, lam=0.5):
    """lam * CE(student, y) on ``mask`` + (1 - lam) * KL(teacher || student) over all nodes."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    n = np.shape(teacher_probs)[0]
    ce = cross_entropy(student_probs, y, mask)
    kl = kl_divergence(teacher_probs, student_probs, np.ones(n, dtype=bool))
    if isinstance(ce, ad.Tensor):
        return ad.add(ad.mul(ce, lam), ad.mul(kl, 1.0 - lam))
    return lam * ce + (1.0 - lam) * kl


# ----------------------------------------------------------------- training


@dataclass
class StudentConfig:
    variant: str = "O"
    d_enc: int = 64
    lam: float = 0.5
    lr: float = 0.01
    weight_decay: float = 0.01
    epochs: int = 200
    seed: int = 0
    rounds: int = 2  # FMLP-O
    power: int = 2  # FMLP-S

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown student variant {self.variant!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")


@dataclass
class StudentResult:
    model: StudentParams
    history: list
    best_epoch: int
    probs: np.ndarray
    val_acc: float
    test_acc: float
    scores: ScoreVectors
    alpha_summary: list  # rows (band, round, mean, std)
    config: StudentConfig = None


def alpha_summary(scores, fs_or_low):
    rows = []
    for rnd in sorted(scores.alpha):
        for key, v in scores.alpha[rnd].items():
            rows.append((band_label(key, fs_or_low), rnd, float(np.mean(v)), float(np.std(v))))
    return rows


def train_student(ctx, masks, teacher_probs, config, y=None, X=None):
    """Minimize the distillation objective; with ``teacher_probs=None`` only lam=1 is allowed."""
    g = ctx.graph
    y = g.y if y is None else np.asarray(y)
    X = g.X if X is None else np.asarray(X, dtype=np.float64)
    c = int(g.c or (y.max() + 1))
    if teacher_probs is None and config.lam != 1.0:
        raise ValueError("teacher probabilities are required unless lam == 1")
    teacher = None if teacher_probs is None else np.asarray(teacher_probs, dtype=np.float64)
    if teacher is not None and teacher.shape != (g.n, c):
        raise ValueError(f"teacher probs have shape {teacher.shape}, expected {(g.n, c)}")
    rng = substream(config.seed, f"init.student.{config.variant}")
    bands = ctx.ba.keys
    model = StudentParams.init(rng, config.variant, g.n, X.shape[1], c, bands, config.d_enc,
                               config.rounds, config.power)
    ba = ctx.ba
    needed = config.rounds if config.variant == "O" else config.power
    if ba.l_max < needed:
        from .framelet import shifted_bands

        ba = shifted_bands(ba, ba.shift or {}, l_max=needed)

    if config.variant == "O":
        def logits_of(V):
            return _fmlp_o(V, model, ba, X)[0]
    else:
        def logits_of(V):
            return _fmlp_s(V, model, ba, X, config.power)[0]

    def objective(V):
        probs = ad.softmax_rows(logits_of(V))
        if teacher is None:
            return cross_entropy(probs, y, masks.train), probs.value
        return distill_loss(probs, teacher, y, masks.train, config.lam), probs.value

    def predict(params):
        return ad.softmax_rows(logits_of(params)).value

    fit = fit_params(model.params, objective, predict, y, masks, epochs=config.epochs, lr=config.lr,
                     weight_decay=config.weight_decay, label=f"FMLP-{config.variant}")
    model.params = fit.params
    if config.variant == "O":
        _, _, scores = fmlp_o_forward(model, ba, X)
    else:
        _, scores = fmlp_s_forward(model, ba, X, config.power)
    return StudentResult(model, fit.history, fit.best_epoch, fit.probs, fit.best_val_acc,
                         accuracy(fit.probs, y, masks.test), scores,
                         alpha_summary(scores, bands[0]), config)


def write_alpha_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["band", "round", "mean", "std"])
        for band, rnd, m, s in rows:
            w.writerow([band, rnd, f"{m:.6f}", f"{s:.6f}"])


def save_student(result, path, *, config_hash=None):
    save_checkpoint(result.model.params, path)
    m = result.model
    manifest = {
        "kind": f"FMLP-{m.variant}",
        "bands": [list(k) for k in m.bands],
        "rounds": m.rounds,
        "d_enc": m.d_enc,
        "power": m.power,
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
