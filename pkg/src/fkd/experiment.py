"""Experiment orchestration: data -> rewire -> framelet -> teacher -> student -> analysis."""
import csv
import itertools
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import band_energies, write_energy_csv
from .config import GRID_ORDER, config_hash, load_config, normalize_config
from .context import GraphContext
from .framelet import band_adjacencies, build_framelet, tightness_residual
from .graph import edge_homophily, generate_synthetic, load_graph, normalized_operators, split_masks
from .rewiring import sdrf_rewire
from .students import StudentConfig, train_student
from .teachers import TeacherConfig, train_teacher
from .training import TrainingDivergedError

METRIC_FIELDS = ["run_id", "config_hash", "seed", "target_h", "model", "role", "lr", "weight_decay",
                 "hidden", "dropout", "d_enc", "best_epoch", "val_acc", "test_acc", "alpha_low", "alpha_high"]
HISTORY_FIELDS = ["run_id", "config_hash", "seed", "target_h", "model", "epoch", "train_loss", "val_loss",
                  "train_acc", "val_acc"]
ALPHA_FIELDS = ["run_id", "config_hash", "seed", "target_h", "model", "band", "round", "mean", "std"]
SUMMARY_FIELDS = ["config_hash", "target_h", "model", "role", "n_seeds", "val_acc_mean", "test_acc_mean",
                  "test_acc_std", "alpha_low_mean", "alpha_high_mean"]


class StageError(RuntimeError):
    def __init__(self, stage, run_id, cause):
        super().__init__(f"{run_id}: stage {stage!r} failed: {cause}")
        self.stage = stage
        self.run_id = run_id
        self.cause = cause


STUDENT_NAMES = {"O": "FMLP-O", "S": "FMLP-S"}


def _fmt(x):
    return "nan" if x is None or (isinstance(x, float) and not np.isfinite(x)) else f"{x:.6f}"


@dataclass
class RunRecord:
    """One (target_h, seed, grid point, model) result."""

    run_id: str
    seed: int
    target_h: object
    model: str
    role: str
    point: dict
    best_epoch: int = -1
    val_acc: float = float("nan")
    test_acc: float = float("nan")
    alpha_low: float = float("nan")
    alpha_high: float = float("nan")
    history: list = field(default_factory=list)
    alpha_rows: list = field(default_factory=list)
    status: str = "ok"


def build_graph(cfg, target_h, seed):
    ds = cfg["dataset"]
    if ds["kind"] == "synthetic":
        return generate_synthetic(ds["n"], ds["c"], ds["d0"], ds["avg_degree"], target_h,
                                  ds["feature_scale"], seed)
    return load_graph(ds["edges"], ds["features"], ds["labels"])


def build_masks(cfg, g, seed):
    sp = cfg["split"]
    if sp["mode"] == "ratio":
        return split_masks(g, "ratio", ratios=tuple(sp["ratios"]), seed=seed)
    return split_masks(g, sp["mode"], k_train=sp["k_train"], n_val=sp["n_val"], n_test=sp["n_test"], seed=seed)


def build_context(cfg, g):
    fr = cfg["framelet"]
    ops = normalized_operators(g)
    fs = build_framelet(ops, J=fr["J"], mode=fr["mode"], degree=fr["degree"])
    return GraphContext(g, ops, fs, band_adjacencies(fs, ops, l_max=max(2, int(cfg["depth"]))))


def grid_points(cfg):
    """Grid points sorted ascending by the tie-break priority (lr, wd, hidden, dropout, d_enc)."""
    axes = [sorted(cfg["grid"][k]) for k in GRID_ORDER]
    return [dict(zip(GRID_ORDER, combo)) for combo in itertools.product(*axes)]


def _h_values(cfg):
    return cfg["dataset"]["target_h"] if cfg["dataset"]["kind"] == "synthetic" else [None]


def _train_pair(cfg, ctx, masks, pair, point, seed, run_id, tag_h):
    depth = int(cfg["depth"])
    out = []
    tcfg = TeacherConfig(kind=pair["teacher"], depth=depth, hidden=point["hidden"], lr=point["lr"],
                         weight_decay=point["weight_decay"], epochs=int(cfg["epochs"]), seed=seed,
                         dropout=point["dropout"], eps=float(cfg["eps"]), eps_s=float(cfg["eps_s"]))
    teacher = train_teacher(ctx, masks, tcfg)
    rec = RunRecord(run_id, seed, tag_h, pair["teacher"], "teacher", point, teacher.best_epoch,
                    teacher.val_acc, teacher.test_acc, history=teacher.history)
    out.append(rec)
    variant = pair.get("student")
    if variant:
        scfg = StudentConfig(variant=variant, d_enc=point["d_enc"], lam=float(cfg["lam"]), lr=point["lr"],
                             weight_decay=point["weight_decay"], epochs=int(cfg["epochs"]), seed=seed,
                             rounds=depth, power=depth)
        student = train_student(ctx, masks, teacher.probs, scfg)
        rows = [r for r in student.alpha_summary if r[1] == 1]
        low = [r[2] for r in rows if r[0] == "low"]
        high = [r[2] for r in rows if r[0] != "low"]
        out.append(RunRecord(run_id, seed, tag_h, STUDENT_NAMES[variant], "student", point, student.best_epoch,
                             student.val_acc, student.test_acc,
                             float(np.mean(low)) if low else float("nan"),
                             float(np.mean(high)) if high else float("nan"),
                             student.history, student.alpha_summary))
    return out


class _Writer:
    """Append-only CSV writers for one output directory."""

    def __init__(self, out_dir, chash):
        os.makedirs(out_dir, exist_ok=True)
        self.dir = out_dir
        self.chash = chash
        self._files = {}

    def _w(self, name, header):
        if name not in self._files:
            fh = open(os.path.join(self.dir, name), "w", newline="")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            self._files[name] = (fh, w)
        return self._files[name][1]

    def flush(self):
        for fh, _ in self._files.values():
            fh.flush()

    def close(self):
        for fh, _ in self._files.values():
            fh.close()
        self._files.clear()

    def record(self, rec):
        h = "" if rec.target_h is None else f"{rec.target_h:g}"
        p = rec.point
        self._w("metrics.csv", METRIC_FIELDS).writerow([
            rec.run_id, self.chash, rec.seed, h, rec.model, rec.role, p["lr"], p["weight_decay"], p["hidden"],
            p["dropout"], p["d_enc"], rec.best_epoch, _fmt(rec.val_acc), _fmt(rec.test_acc),
            _fmt(rec.alpha_low), _fmt(rec.alpha_high)])
        hw = self._w("history.csv", HISTORY_FIELDS)
        for e in rec.history:
            hw.writerow([rec.run_id, self.chash, rec.seed, h, rec.model, e.epoch, _fmt(e.train_loss),
                         _fmt(e.val_loss), _fmt(e.train_acc), _fmt(e.val_acc)])
        if rec.alpha_rows:
            aw = self._w("alpha.csv", ALPHA_FIELDS)
            for band, rnd, m, s in rec.alpha_rows:
                aw.writerow([rec.run_id, self.chash, rec.seed, h, rec.model, band, rnd, _fmt(m), _fmt(s)])

    def timing(self, run_id, stage, seconds):
        self._w("timings.csv", ["run_id", "stage", "seconds"]).writerow([run_id, stage, f"{seconds:.3f}"])

    def failure(self, run_id, stage, message):
        self._w("failures.csv", ["run_id", "config_hash", "stage", "error"]).writerow(
            [run_id, self.chash, stage, message])


def summarize(records):
    """Mean/std over seeds per (target_h, model, grid point)."""
    groups = {}
    for r in records:
        key = (r.target_h, r.model, r.role, tuple(r.point[k] for k in GRID_ORDER))
        groups.setdefault(key, []).append(r)
    out = []
    for (h, model, role, pt), rs in groups.items():
        ok = [r for r in rs if r.status == "ok"]
        test = np.array([r.test_acc for r in ok])
        out.append({
            "target_h": h, "model": model, "role": role, "point": dict(zip(GRID_ORDER, pt)),
            "n_seeds": len(ok), "status": "ok" if len(ok) == len(rs) else "failed",
            "val_acc_mean": float(np.mean([r.val_acc for r in ok])) if ok else float("nan"),
            "test_acc_mean": float(test.mean()) if ok else float("nan"),
            "test_acc_std": float(test.std()) if ok else float("nan"),
            "alpha_low_mean": float(np.mean([r.alpha_low for r in ok])) if ok else float("nan"),
            "alpha_high_mean": float(np.mean([r.alpha_high for r in ok])) if ok else float("nan"),
        })
    return out


def _write_summary(path, chash, rows, extra=()):
    extra = list(extra)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS[:4] + extra + SUMMARY_FIELDS[4:] + (["status"] if extra else []))
        for s in rows:
            h = "" if s["target_h"] is None else f"{s['target_h']:g}"
            w.writerow([chash, h, s["model"], s["role"]] + [s["point"][k] for k in extra]
                       + [s["n_seeds"], _fmt(s["val_acc_mean"]), _fmt(s["test_acc_mean"]), _fmt(s["test_acc_std"]),
                          _fmt(s["alpha_low_mean"]), _fmt(s["alpha_high_mean"])]
                       + ([s["status"]] if extra else []))


def _execute(cfg, points, out_dir, *, tolerate_divergence):
    chash = config_hash(cfg)
    writer = _Writer(out_dir, chash)
    records = []
    energies = {}
    try:
        for h in _h_values(cfg):
            for seed in cfg["seeds"]:
                run_id = f"{cfg['name']}-h{h:g}-s{seed}" if h is not None else f"{cfg['name']}-s{seed}"
                stage = "data"
                try:
                    t0 = time.perf_counter()
                    g = build_graph(cfg, h, seed)
                    stage = "split"
                    masks = build_masks(cfg, g, seed)
                    if cfg["rewire"]["enabled"]:
                        stage = "rewire"
                        rw = cfg["rewire"]
                        thr = rw["removal_threshold"]
                        g = sdrf_rewire(g, int(rw["max_iters"]), float(rw["temperature"]),
                                        float("inf") if thr is None else float(thr), seed).graph
                    stage = "framelet"
                    ctx = build_context(cfg, g)
                    writer.timing(run_id, "prepare", time.perf_counter() - t0)
                    stage = "analyze"
                    energies[run_id] = band_energies(ctx.fs, g.X, ctx.ops,
                                                     eps=[cfg["eps"]] if cfg["eps"] else ())
                except Exception as exc:
                    writer.failure(run_id, stage, str(exc))
                    writer.flush()
                    raise StageError(stage, run_id, exc) from exc
                for point in points:
                    for pair in cfg["models"]:
                        stage = f"train:{pair['teacher']}/{pair.get('student')}"
                        t0 = time.perf_counter()
                        try:
                            recs = _train_pair(cfg, ctx, masks, pair, point, seed, run_id, h)
                        except TrainingDivergedError as exc:
                            writer.failure(run_id, stage, str(exc))
                            writer.flush()
                            if not tolerate_divergence:
                                raise StageError(stage, run_id, exc) from exc
                            recs = [RunRecord(run_id, seed, h, pair["teacher"], "teacher", point, status="diverged")]
                            if pair.get("student"):
                                recs.append(RunRecord(run_id, seed, h, STUDENT_NAMES[pair["student"]], "student",
                                                      point, status="diverged"))
                        except Exception as exc:
                            writer.failure(run_id, stage, str(exc))
                            writer.flush()
                            raise StageError(stage, run_id, exc) from exc
                        writer.timing(run_id, stage, time.perf_counter() - t0)
                        for r in recs:
                            writer.record(r)
                        records.extend(recs)
                        writer.flush()
    finally:
        writer.close()
        if energies:
            write_energy_csv(energies, os.path.join(out_dir, "energy.csv"))
    return records, chash


def _resolve(config, out_dir):
    cfg = load_config(config) if isinstance(config, (str, os.PathLike)) else normalize_config(config)
    return cfg, (out_dir or cfg["output_dir"])


def run_experiment(config, out_dir=None, seeds=None):
    """Run the first point of every grid; writes metrics, history, alpha, energy, summary and timing CSVs."""
    cfg, out_dir = _resolve(config, out_dir)
    if seeds is not None:
        cfg["seeds"] = [int(s) for s in seeds]
    point = {k: cfg["grid"][k][0] for k in GRID_ORDER}
    records, chash = _execute(cfg, [point], out_dir, tolerate_divergence=False)
    summary = summarize(records)
    _write_summary(os.path.join(out_dir, "summary.csv"), chash, summary)
    return records, summary


def select_best(summary):
    """Best grid point per (target_h, model): highest mean val accuracy; ties go to the
    lexicographically smallest (lr, weight_decay, hidden, dropout, d_enc)."""
    best = {}
    for s in summary:
        if s["status"] != "ok" or not np.isfinite(s["val_acc_mean"]):
            continue
        key = (s["target_h"], s["model"])
        rank = (-s["val_acc_mean"], tuple(s["point"][k] for k in GRID_ORDER))
        if key not in best or rank < best[key][0]:
            best[key] = (rank, s)
    return {k: v[1] for k, v in best.items()}


def grid_search(config, out_dir=None, seeds=None):
    """Exhaustive grid; writes the full table (grid.csv) and the winners (best.csv)."""
    cfg, out_dir = _resolve(config, out_dir)
    if seeds is not None:
        cfg["seeds"] = [int(s) for s in seeds]
    records, chash = _execute(cfg, grid_points(cfg), out_dir, tolerate_divergence=True)
    summary = summarize(records)
    _write_summary(os.path.join(out_dir, "grid.csv"), chash, summary, extra=GRID_ORDER)
    best = select_best(summary)
    _write_summary(os.path.join(out_dir, "best.csv"), chash, list(best.values()), extra=GRID_ORDER)
    return best, summary


def framelet_tightness(cfg, seed=0):
    h = _h_values(cfg)[0]
    g = build_graph(cfg, h, seed)
    fr = cfg["framelet"]
    fs = build_framelet(normalized_operators(g), J=fr["J"], mode=fr["mode"], degree=fr["degree"])
    return tightness_residual(fs), edge_homophily(g) if g.n_edges else float("nan")
