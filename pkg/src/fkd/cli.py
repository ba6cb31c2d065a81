"""Command line entry point: ``fkd <subcommand> --config <path> [--seed N] [--out DIR]``."""
import argparse
import os
import sys

import numpy as np

from .config import ConfigError, load_config

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _graph(cfg, seed):
    from .experiment import build_graph

    h = cfg["dataset"]["target_h"][0] if cfg["dataset"]["kind"] == "synthetic" else None
    return build_graph(cfg, h, seed)


def _context(cfg, seed):
    from .experiment import build_context, build_masks

    g = _graph(cfg, seed)
    return build_context(cfg, g), build_masks(cfg, g, seed)


def _point(cfg):
    from .config import GRID_ORDER

    return {k: cfg["grid"][k][0] for k in GRID_ORDER}


def _save_probs(probs, path):
    np.savetxt(path, probs, delimiter=",", fmt="%.17g")


def _load_probs(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


# ---------------------------------------------------------------- commands


def cmd_generate(cfg, seed, out):
    from .experiment import build_graph
    from .graph import edge_homophily, save_graph

    if cfg["dataset"]["kind"] != "synthetic":
        raise ConfigError("generate needs a synthetic dataset config")
    hs = cfg["dataset"]["target_h"]
    for h in hs:
        g = build_graph(cfg, h, seed)
        d = out if len(hs) == 1 else os.path.join(out, f"h{h:g}")
        os.makedirs(d, exist_ok=True)
        save_graph(g, os.path.join(d, "edges.txt"), os.path.join(d, "features.csv"), os.path.join(d, "labels.txt"))
        print(f"{d}: n={g.n} edges={g.n_edges} homophily={edge_homophily(g):.4f}")
    return EXIT_OK


def cmd_rewire(cfg, seed, out):
    from .graph import save_graph
    from .rewiring import curvature_report, sdrf_rewire, write_rewire_log

    g = _graph(cfg, seed)
    rw = cfg["rewire"]
    thr = rw["removal_threshold"]
    res = sdrf_rewire(g, int(rw["max_iters"]), float(rw["temperature"]),
                      float("inf") if thr is None else float(thr), seed)
    os.makedirs(out, exist_ok=True)
    save_graph(res.graph, os.path.join(out, "edges.txt"), os.path.join(out, "features.csv"),
               os.path.join(out, "labels.txt"))
    write_rewire_log(res, os.path.join(out, "rewire_log.csv"))
    before, after = curvature_report(g), curvature_report(res.graph)
    print(f"added={len(res.added)} removed={len(res.removed)} delta_edges={res.delta_edges} "
          f"min_curvature {before.min:.4f} -> {after.min:.4f}")
    return EXIT_OK


def _teacher_config(cfg, kind, seed):
    from .teachers import TeacherConfig

    p = _point(cfg)
    return TeacherConfig(kind=kind, depth=int(cfg["depth"]), hidden=p["hidden"], lr=p["lr"],
                         weight_decay=p["weight_decay"], epochs=int(cfg["epochs"]), seed=seed,
                         dropout=p["dropout"], eps=float(cfg["eps"]), eps_s=float(cfg["eps_s"]))


def _train_teacher_to(cfg, ctx, masks, kind, seed, out):
    from .config import config_hash
    from .teachers import save_teacher, train_teacher

    res = train_teacher(ctx, masks, _teacher_config(cfg, kind, seed))
    os.makedirs(out, exist_ok=True)
    save_teacher(res, os.path.join(out, f"teacher_{kind}.fkdp"), config_hash=config_hash(cfg))
    _save_probs(res.probs, os.path.join(out, f"teacher_{kind}_probs.csv"))
    print(f"teacher {kind}: val_acc={res.val_acc:.4f} test_acc={res.test_acc:.4f} best_epoch={res.best_epoch}")
    return res


def cmd_train_teacher(cfg, seed, out):
    ctx, masks = _context(cfg, seed)
    for kind in dict.fromkeys(m["teacher"] for m in cfg["models"]):
        _train_teacher_to(cfg, ctx, masks, kind, seed, out)
    return EXIT_OK


def _students(cfg, seed, out, lam, use_teacher):
    from .config import config_hash
    from .students import StudentConfig, save_student, train_student, write_alpha_csv

    ctx, masks = _context(cfg, seed)
    p = _point(cfg)
    depth = int(cfg["depth"])
    os.makedirs(out, exist_ok=True)
    for pair in cfg["models"]:
        variant = pair.get("student")
        if not variant:
            continue
        teacher = None
        if use_teacher:
            path = os.path.join(out, f"teacher_{pair['teacher']}_probs.csv")
            if os.path.exists(path):
                teacher = _load_probs(path)
            else:
                teacher = _train_teacher_to(cfg, ctx, masks, pair["teacher"], seed, out).probs
        scfg = StudentConfig(variant=variant, d_enc=p["d_enc"], lam=lam, lr=p["lr"], weight_decay=p["weight_decay"],
                             epochs=int(cfg["epochs"]), seed=seed, rounds=depth, power=depth)
        res = train_student(ctx, masks, teacher, scfg)
        save_student(res, os.path.join(out, f"student_{variant}.fkdp"), config_hash=config_hash(cfg))
        _save_probs(res.probs, os.path.join(out, f"student_{variant}_probs.csv"))
        write_alpha_csv(res.alpha_summary, os.path.join(out, f"alpha_{variant}.csv"))
        print(f"FMLP-{variant}: val_acc={res.val_acc:.4f} test_acc={res.test_acc:.4f} best_epoch={res.best_epoch}")
    return EXIT_OK


def cmd_distill(cfg, seed, out, lam=None):
    lam = float(cfg["lam"]) if lam is None else lam
    return _students(cfg, seed, out, lam, use_teacher=lam < 1.0)


def cmd_train_student_supervised(cfg, seed, out):
    return _students(cfg, seed, out, 1.0, use_teacher=False)


def cmd_analyze(cfg, seed, out):
    from .analysis import band_energies, simplified_energy, write_energy_csv
    from .rewiring import curvature_report

    ctx, _ = _context(cfg, seed)
    g = ctx.graph
    eps = [float(cfg["eps"])] if cfg["eps"] else [0.05, 0.1, 0.2]
    rep = band_energies(ctx.fs, g.X, ctx.ops, eps=eps)
    os.makedirs(out, exist_ok=True)
    reports = {"input": rep}
    write_energy_csv(reports, os.path.join(out, "energy.csv"))
    print(f"dirichlet_energy={rep.total:.10g} band_sum={rep.band_sum:.10g}")
    for e, v in rep.perturbed.items():
        print(f"perturbed_energy(eps={e:g})={v:.10g}")
    if ctx.fs.mode == "exact":
        for l in range(1, int(cfg["depth"]) + 1):
            print(f"simplified_energy(l={l})={simplified_energy(ctx.fs, g.X, ctx.ops, l):.10g}")
    if g.n_edges:
        cr = curvature_report(g)
        with open(os.path.join(out, "curvature.csv"), "w") as fh:
            fh.write("i,j,curvature\n")
            for (i, j), v in zip(cr.edges, cr.values):
                fh.write(f"{i},{j},{v!r}\n")
        print(f"curvature min={cr.min:.4f} max={cr.max:.4f} fraction_negative={cr.fraction_negative:.4f}")
    return EXIT_OK


def cmd_check_tightness(cfg, seed, out):
    from .experiment import framelet_tightness

    residual, _ = framelet_tightness(cfg, seed)
    tol = cfg["framelet"].get("tolerance")
    if tol is None:
        tol = 1e-8 if cfg["framelet"]["mode"] == "exact" else 1e-3
    ok = residual <= tol
    print(f"tightness_residual={residual:.3e} tolerance={tol:.1e} {'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_run(cfg, seed, out):
    from .experiment import run_experiment

    _, summary = run_experiment(cfg, out, seeds=None if seed is None else [seed])
    for s in summary:
        h = "" if s["target_h"] is None else f"h={s['target_h']:g} "
        print(f"{h}{s['model']}: test_acc={s['test_acc_mean']:.4f}±{s['test_acc_std']:.4f} (n={s['n_seeds']})")
    return EXIT_OK


def cmd_grid_search(cfg, seed, out):
    from .experiment import grid_search

    best, _ = grid_search(cfg, out, seeds=None if seed is None else [seed])
    for (h, model), s in best.items():
        hs = "" if h is None else f"h={h:g} "
        print(f"{hs}{model}: best {s['point']} val_acc={s['val_acc_mean']:.4f} test_acc={s['test_acc_mean']:.4f}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "rewire": cmd_rewire,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "train-student-supervised": cmd_train_student_supervised,
    "analyze": cmd_analyze,
    "check-tightness": cmd_check_tightness,
    "run": cmd_run,
    "grid-search": cmd_grid_search,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="fkd", description="Framelet teachers distilled into MLP students.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, aliases=["grid"] if name == "grid-search" else [])
        sp.add_argument("--config", required=True, help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed list")
        sp.add_argument("--out", default=None, help="output directory (default: config output_dir)")
        if name == "distill":
            sp.add_argument("--lambda", dest="lam", type=float, default=None,
                            help="weight of the label loss (default: config lam)")
    return parser


def _threads():
    raw = os.environ.get("FKD_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FKD_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"FKD_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        threads = _threads()
        cfg = load_config(args.config)
        if args.command == "distill" and args.lam is not None and not 0.0 <= args.lam <= 1.0:
            raise ConfigError("--lambda must be in [0, 1]")
    except ConfigError as exc:
        print(f"fkd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or cfg["output_dir"]
    seed = args.seed
    cmd = "grid-search" if args.command == "grid" else args.command
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            if cmd in ("run", "grid-search"):
                return COMMANDS[cmd](cfg, seed, out)
            first = cfg["seeds"][0] if seed is None else seed
            if cmd == "distill":
                return cmd_distill(cfg, first, out, args.lam)
            return COMMANDS[cmd](cfg, first, out)
    except ConfigError as exc:
        print(f"fkd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"fkd: {cmd} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
