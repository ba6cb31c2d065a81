import csv
import json

import numpy as np
import pytest

from fkd.cli import main
from fkd.config import ConfigError, config_hash, load_config, normalize_config
from fkd.graph import edge_homophily, load_graph
from fkd.nn import load_checkpoint

SMALL = {
    "name": "t",
    "dataset": {"n": 60, "c": 3, "d0": 8, "avg_degree": 4, "target_h": 0.5},
    "framelet": {"mode": "exact"},
    "grid": {"hidden": 8, "d_enc": 8},
    "epochs": 5,
    "seeds": [0],
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _merge(**kw):
    cfg = json.loads(json.dumps(SMALL))
    cfg.update(kw)
    return cfg


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- config


def test_hash_ignores_key_order_and_output_dir():
    a = normalize_config({"epochs": 3, "lam": 0.2, "output_dir": "x"})
    b = normalize_config({"lam": 0.2, "epochs": 3, "output_dir": "y"})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(normalize_config({"epochs": 4, "lam": 0.2}))


def test_scalars_become_grids():
    cfg = normalize_config({"grid": {"lr": 0.1}, "seeds": 3, "dataset": {"target_h": 0.2}})
    assert cfg["grid"]["lr"] == [0.1] and cfg["seeds"] == [3] and cfg["dataset"]["target_h"] == [0.2]


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"lam": 1.5},
    {"epochs": -1},
    {"depth": 0},
    {"seeds": []},
    {"grid": {"lr": []}},
    {"grid": {"momentum": [0.9]}},
    {"framelet": {"mode": "wavelet"}},
    {"dataset": {"target_h": [1.2]}},
    {"dataset": {"kind": "url"}},
    {"models": [{"teacher": "gat"}]},
    {"dataset": {"kind": "files", "edges": "nope.txt", "features": "f", "labels": "l"}},
    [1, 2],
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        normalize_config(raw)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_file_dataset_paths_relative_to_config(tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    (d / "e.txt").write_text("0 1\n")
    (d / "f.csv").write_text("1,0\n0,1\n")
    (d / "l.txt").write_text("0\n1\n")
    cfg = load_config(_write(tmp_path, {"dataset": {"kind": "files", "edges": "data/e.txt",
                                                    "features": "data/f.csv", "labels": "data/l.txt"}}))
    assert cfg["dataset"]["edges"] == str(d / "e.txt")


# ---------------------------------------------------------------- exit codes


def test_usage_errors_exit_2(tmp_path, monkeypatch, capsys):
    good = _write(tmp_path, SMALL)
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["run", "--config", _write(tmp_path, {"lam": 7}, "bad.json")]) == 2
    assert main(["distill", "--config", good, "--lambda", "1.5", "--out", str(tmp_path / "o")]) == 2
    monkeypatch.setenv("FKD_THREADS", "zero")
    assert main(["run", "--config", good]) == 2
    monkeypatch.setenv("FKD_THREADS", "0")
    assert main(["run", "--config", good]) == 2
    assert "FKD_THREADS" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["nope", "--config", good])
    assert exc.value.code == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_runtime_failure_exits_1(tmp_path, capsys):
    cfg = _merge(grid={"hidden": 8, "d_enc": 8, "lr": 1e300})
    assert main(["run", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 1
    assert "failed" in capsys.readouterr().err
    assert (tmp_path / "o" / "failures.csv").exists()


def test_generate_on_file_dataset_exits_2(tmp_path):
    d = tmp_path
    (d / "e.txt").write_text("0 1\n")
    (d / "f.csv").write_text("1,0\n0,1\n")
    (d / "l.txt").write_text("0\n1\n")
    cfg = _write(tmp_path, {"dataset": {"kind": "files", "edges": "e.txt", "features": "f.csv", "labels": "l.txt"}})
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_check_tightness(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FKD_THREADS", "1")
    assert main(["check-tightness", "--config", _write(tmp_path, SMALL)]) == 0
    assert "ok" in capsys.readouterr().out
    cheb = _merge(framelet={"mode": "chebyshev", "degree": 1, "tolerance": 1e-12})
    assert main(["check-tightness", "--config", _write(tmp_path, cheb, "c.json")]) == 1


# ---------------------------------------------------------------- commands


def test_generate_then_load(tmp_path, capsys):
    out = tmp_path / "g"
    assert main(["generate", "--config", _write(tmp_path, SMALL), "--out", str(out), "--seed", "3"]) == 0
    g = load_graph(out / "edges.txt", out / "features.csv", out / "labels.txt")
    assert g.n == 60 and g.X.shape == (60, 8)
    assert f"homophily={edge_homophily(g):.4f}" in capsys.readouterr().out


def test_generate_many_h(tmp_path):
    cfg = _merge(dataset={"n": 60, "c": 3, "d0": 8, "avg_degree": 4, "target_h": [0.2, 0.8]})
    assert main(["generate", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "g")]) == 0
    assert (tmp_path / "g" / "h0.2" / "edges.txt").exists() and (tmp_path / "g" / "h0.8" / "labels.txt").exists()


def test_analyze_and_rewire(tmp_path):
    cfg = _write(tmp_path, _merge(rewire={"max_iters": 3}))
    assert main(["analyze", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    rows = _rows(tmp_path / "a" / "energy.csv")
    assert rows and (tmp_path / "a" / "curvature.csv").exists()
    assert main(["rewire", "--config", cfg, "--out", str(tmp_path / "r")]) == 0
    log = _rows(tmp_path / "r" / "rewire_log.csv")
    assert len([r for r in log if r["action"] == "add"]) == 3
    g = load_graph(tmp_path / "r" / "edges.txt", tmp_path / "r" / "features.csv", tmp_path / "r" / "labels.txt")
    assert g.n == 60


def test_teacher_then_distill(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "o"
    assert main(["train-teacher", "--config", cfg, "--out", str(out)]) == 0
    params = load_checkpoint(out / "teacher_spatial.fkdp")
    assert params and all(np.all(np.isfinite(v)) for v in params.values())
    manifest = json.loads((out / "teacher_spatial.fkdp.json").read_text())
    assert manifest["config_hash"] == config_hash(load_config(cfg))
    assert main(["distill", "--config", cfg, "--out", str(out)]) == 0
    for v in ("O", "S"):
        assert (out / f"student_{v}.fkdp").exists()
        assert _rows(out / f"alpha_{v}.csv")


def test_distill_lambda_one_matches_supervised(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert main(["distill", "--config", cfg, "--lambda", "1", "--out", str(tmp_path / "d")]) == 0
    assert main(["train-student-supervised", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    for v in ("O", "S"):
        a = (tmp_path / "d" / f"student_{v}_probs.csv").read_bytes()
        assert a == (tmp_path / "s" / f"student_{v}_probs.csv").read_bytes()
        assert (tmp_path / "d" / f"student_{v}.fkdp").read_bytes() == (tmp_path / "s" / f"student_{v}.fkdp").read_bytes()
    assert not (tmp_path / "d" / "teacher_spatial_probs.csv").exists()


def test_run_is_byte_reproducible(tmp_path):
    cfg = _write(tmp_path, _merge(seeds=[0, 1]))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    for name in ("metrics.csv", "history.csv", "alpha.csv", "summary.csv", "energy.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    rows = _rows(tmp_path / "a" / "metrics.csv")
    assert len(rows) == 2 * 4 and {r["seed"] for r in rows} == {"0", "1"}
    timings = _rows(tmp_path / "a" / "timings.csv")
    assert all(float(r["seconds"]) >= 0 for r in timings)


def test_seed_override(tmp_path):
    cfg = _write(tmp_path, _merge(seeds=[0, 1]))
    assert main(["run", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "a")]) == 0
    assert {r["seed"] for r in _rows(tmp_path / "a" / "metrics.csv")} == {"7"}


def test_zero_epoch_run(tmp_path):
    cfg = _write(tmp_path, _merge(epochs=0))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    rows = _rows(tmp_path / "a" / "metrics.csv")
    assert rows and all(r["best_epoch"] == "0" for r in rows)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@pytest.mark.parametrize("alias", ["grid", "grid-search"])
def test_grid_skips_diverging_points(tmp_path, alias):
    cfg = _write(tmp_path, _merge(grid={"lr": [1e300, 0.01], "hidden": 8, "d_enc": [16, 8]}, seeds=[0, 1]))
    assert main([alias, "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    best = _rows(tmp_path / "o" / "best.csv")
    assert {r["model"] for r in best} == {"spatial", "FMLP-O", "simplified", "FMLP-S"}
    assert all(r["lr"] == "0.01" for r in best)
    # d_enc does not touch the teacher, so both teacher points tie; the smaller one wins
    assert all(r["d_enc"] == "8" for r in best if r["role"] == "teacher")
    grid = _rows(tmp_path / "o" / "grid.csv")
    assert any(r["status"] == "failed" for r in grid)
    assert _rows(tmp_path / "o" / "failures.csv")
