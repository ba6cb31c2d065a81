import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fkd import autodiff as ad
from fkd.analysis import dirichlet_energy
from fkd.context import prepare_context
from fkd.framelet import band_adjacencies, build_framelet
from fkd.graph import generate_synthetic, normalized_operators, split_masks
from fkd.nn import ParamSet, load_checkpoint
from fkd.teachers import (
    EnergyPerturbation,
    SimplifiedTeacherParams,
    SpatialTeacherParams,
    SpectralTeacherParams,
    TeacherConfig,
    band_name,
    perturbed_band_adjacencies,
    save_teacher,
    simplified_teacher_forward,
    spatial_teacher_forward,
    spectral_teacher_forward,
    train_teacher,
)

from conftest import random_graph

BANDS = [(0, 1), (1, 0), (1, 1)]


def _ctx(g, mode="exact", l_max=2):
    return prepare_context(g, mode=mode, l_max=l_max)


# ------------------------------------------------------------- perturbation


def test_zero_eps_is_identity(rng):
    ctx = _ctx(random_graph(rng, 6))
    assert perturbed_band_adjacencies(ctx.ba, ctx.fs, ctx.ops, 0.0) is ctx.ba


def test_two_node_perturbation_shifts_by_gram(two_node):
    ctx = _ctx(two_node)
    pb = perturbed_band_adjacencies(ctx.ba, ctx.fs, ctx.ops, 0.1)
    for key in BANDS:
        W = ctx.fs.W[key]
        sign = 1.0 if key == ctx.fs.low else -1.0
        assert np.allclose(pb.A_band[key] - ctx.ba.A_band[key], sign * 0.1 * W.T @ W, atol=1e-14)
        assert np.allclose(pb.powers[key][2], pb.A_band[key] @ pb.A_band[key], atol=1e-14)


def _low_minus_high(lam):
    """2 f_low(λ)^2 - 1 for the Haar J=1 bank: the per-eigenvalue slope of the propagation filter in eps."""
    return 2.0 * (np.cos(lam / 2) * np.cos(lam / 4)) ** 2 - 1.0


def test_perturbed_propagation_is_spectral_filter(rng):
    g = random_graph(rng, 10, 0.3)
    ctx = _ctx(g)
    X = rng.normal(size=(10, 2))
    lam, V = np.linalg.eigh(ctx.ops.L_hat)
    pb = perturbed_band_adjacencies(ctx.ba, eps=0.2)
    expect = V @ np.diag(1.0 - lam + 0.2 * _low_minus_high(lam)) @ V.T @ X
    assert np.allclose(sum(pb.A_band[k] @ X for k in BANDS), expect, atol=1e-12)


CROSSING = 1.4306574998141774  # root of 2 f_low^2 = 1 on [1, 2]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(3, 20), eps=st.floats(0.01, 0.5), seed=st.integers(0, 2**31))
def test_perturbation_raises_energy_off_the_sign_change_window(n, eps, seed):
    """Energy of the propagated signal rises for every signal with no spectral
    mass in (1, CROSSING), where (1 - λ) and 2 f_low^2 - 1 disagree in sign."""
    rng = np.random.default_rng(seed)
    ctx = _ctx(random_graph(rng, n, 0.3))
    lam, V = np.linalg.eigh(ctx.ops.L_hat)
    keep = ((lam <= 1.0) | (lam >= CROSSING)) & (lam > 1e-9)
    if not keep.any():
        return
    X = V[:, keep] @ rng.normal(size=(keep.sum(), 3))
    base = sum(ctx.ba.A_band[k] @ X for k in BANDS)
    pb = perturbed_band_adjacencies(ctx.ba, eps=eps)
    pert = sum(pb.A_band[k] @ X for k in BANDS)
    assert dirichlet_energy(pert, ctx.ops) > dirichlet_energy(base, ctx.ops)


def test_perturbation_can_lower_energy_inside_the_window(rng):
    """The window is real: a signal on eigenvalues in (1, CROSSING) loses energy."""
    for _ in range(200):
        ctx = _ctx(random_graph(rng, 12, 0.4))
        lam, V = np.linalg.eigh(ctx.ops.L_hat)
        inside = (lam > 1.0) & (lam < CROSSING)
        if inside.any():
            break
    X = V[:, inside] @ rng.normal(size=(inside.sum(), 2))
    base = sum(ctx.ba.A_band[k] @ X for k in BANDS)
    pert = sum(perturbed_band_adjacencies(ctx.ba, eps=0.05).A_band[k] @ X for k in BANDS)
    assert dirichlet_energy(pert, ctx.ops) < dirichlet_energy(base, ctx.ops)


def test_perturbation_raises_energy_on_random_inputs():
    rng = np.random.default_rng(2024)
    for _ in range(60):
        n = int(rng.integers(20, 51))
        ctx = _ctx(random_graph(rng, n, rng.uniform(0.1, 0.5)))
        X = rng.normal(size=(n, 3))
        base = sum(ctx.ba.A_band[k] @ X for k in BANDS)
        for eps in (0.05, 0.1, 0.2, 0.5):
            pert = sum(perturbed_band_adjacencies(ctx.ba, eps=eps).A_band[k] @ X for k in BANDS)
            assert dirichlet_energy(pert, ctx.ops) > dirichlet_energy(base, ctx.ops)


def test_nonfinite_perturbation_rejected():
    with pytest.raises(ValueError):
        EnergyPerturbation(np.inf, 0.0)


# ------------------------------------------------------------------ spatial


def _spatial(dims, fill=None, rng=None):
    m = SpatialTeacherParams.init(rng or np.random.default_rng(0), dims, BANDS)
    if fill is not None:
        for k in m.params:
            m.params[k] = fill(k, m.params[k])
    return m


def test_spatial_identity_weights_collapse(rng):
    ctx = _ctx(random_graph(rng, 7, d0=3))
    m = _spatial([3, 3], lambda k, v: np.eye(3) if k.endswith(".W") else v)
    logits, _ = spatial_teacher_forward(m, ctx.ba, ctx.graph.X)
    assert np.allclose(logits, sum(ctx.ba.A_band.values()) @ ctx.graph.X, atol=1e-13)


def test_spatial_zero_weights_uniform(rng):
    ctx = _ctx(random_graph(rng, 5, d0=2))
    m = _spatial([2, 4, 3], lambda k, v: np.zeros_like(v))
    logits, probs = spatial_teacher_forward(m, ctx.ba, ctx.graph.X)
    assert not logits.any() and np.allclose(probs, 1 / 3)


def test_spatial_two_node_hand_unroll(two_node):
    """Band adjacencies written out from the Haar multipliers on the 2-node spectrum."""
    eps = 0.1
    u0 = np.array([1.0, 1.0]) / np.sqrt(2)  # λ = 0, Â eigenvalue 1
    u1 = np.array([1.0, -1.0]) / np.sqrt(2)  # λ = 1, Â eigenvalue 0
    P0, P1 = np.outer(u0, u0), np.outer(u1, u1)
    c, s = np.cos, np.sin
    mult = {(0, 1): (1.0, c(0.5) * c(0.25)), (1, 0): (0.0, s(0.5)), (1, 1): (0.0, s(0.25) * c(0.5))}
    shift = {(0, 1): eps, (1, 0): -eps, (1, 1): -eps}
    A = {k: (1.0 + shift[k]) * m0**2 * P0 + (0.0 + shift[k]) * m1**2 * P1 for k, (m0, m1) in mult.items()}

    w = {"layer0": {(0, 1): 0.7, (1, 0): -1.3, (1, 1): 2.1}, "layer1": {(0, 1): -0.4, (1, 0): 0.9, (1, 1): 1.5}}
    bias = {"layer0": {(0, 1): 0.2, (1, 0): -0.1, (1, 1): 0.05}, "layer1": {(0, 1): 0.0, (1, 0): 0.3, (1, 1): -0.2}}
    X = two_node.X
    h = np.maximum(sum(A[k] @ (X * w["layer0"][k] + bias["layer0"][k]) for k in BANDS), 0.0)
    expect = sum(A[k] @ (h * w["layer1"][k] + bias["layer1"][k]) for k in BANDS)

    def fill(name, v):
        layer, band, kind = name.split(".")
        key = next(k for k in BANDS if band_name(k) == band)
        return np.full_like(v, (w if kind == "W" else bias)[layer][key])

    m = _spatial([1, 1, 1], fill)
    logits, _ = spatial_teacher_forward(m, _ctx(two_node).ba, X, EnergyPerturbation(eps, 0.0))
    assert np.allclose(logits, expect, atol=1e-14)


def test_spatial_dim_mismatch(rng):
    ctx = _ctx(random_graph(rng, 5, d0=2))
    with pytest.raises(ValueError):
        spatial_teacher_forward(_spatial([3, 2]), ctx.ba, ctx.graph.X)


# --------------------------------------------------------------- simplified


def test_simplified_l1_equals_one_layer_spatial(rng):
    ctx = _ctx(random_graph(rng, 9, d0=4))
    simp = SimplifiedTeacherParams.init(rng, 4, 3, BANDS, power=1)
    for k in simp.params:
        simp.params[k] = rng.normal(size=simp.params[k].shape)
    spat = _spatial([4, 3], lambda k, v: simp.params[k.split(".", 1)[1]])
    a, _ = simplified_teacher_forward(simp, ctx.ba, ctx.graph.X)
    b, _ = spatial_teacher_forward(spat, ctx.ba, ctx.graph.X)
    assert np.max(np.abs(a - b)) <= 1e-10


def test_simplified_l2_lacks_cross_band_terms(rng):
    ctx = _ctx(random_graph(rng, 9, d0=3))
    simp = SimplifiedTeacherParams.init(rng, 3, 2, BANDS, power=2)
    spat = _spatial([3, 3, 2], lambda k, v: np.eye(3) if k.startswith("layer0") and k.endswith(".W")
                    else (simp.params[k.split(".", 1)[1]] if k.startswith("layer1") else np.zeros_like(v)))
    a, _ = simplified_teacher_forward(simp, ctx.ba, ctx.graph.X)
    b, _ = spatial_teacher_forward(spat, ctx.ba, ctx.graph.X, linear=True)
    assert np.max(np.abs(a - b)) > 1e-6


def test_simplified_zero_and_missing_power(rng):
    ctx = _ctx(random_graph(rng, 5, d0=2))
    simp = SimplifiedTeacherParams.init(rng, 2, 4, BANDS, power=2)
    for k in simp.params:
        simp.params[k][:] = 0.0
    assert np.allclose(simplified_teacher_forward(simp, ctx.ba, ctx.graph.X)[1], 0.25)
    simp.power = 3
    with pytest.raises(ValueError):
        simplified_teacher_forward(simp, ctx.ba, ctx.graph.X)


def test_simplified_perturbation_matches_manual_shift(rng):
    ctx = _ctx(random_graph(rng, 6, d0=2))
    simp = SimplifiedTeacherParams.init(rng, 2, 3, BANDS, power=2)
    pb = perturbed_band_adjacencies(ctx.ba, eps=0.2)
    a, _ = simplified_teacher_forward(simp, ctx.ba, ctx.graph.X, EnergyPerturbation(0.0, 0.2))
    b, _ = simplified_teacher_forward(simp, pb, ctx.graph.X)
    assert np.allclose(a, b, atol=1e-13)


# ----------------------------------------------------------------- spectral


def test_spectral_theta_one_collapses_to_dense(rng):
    ctx = _ctx(random_graph(rng, 8, d0=3))
    m = SpectralTeacherParams.init(rng, 8, [3, 2], BANDS)
    m.params["layer0.shared.b"] = rng.normal(size=2)
    logits, _ = spectral_teacher_forward(m, ctx.fs, ctx.graph.X)
    expect = ctx.graph.X @ m.params["layer0.shared.W"] + m.params["layer0.shared.b"]
    assert np.max(np.abs(logits - expect)) <= 1e-8


def test_spectral_theta_zero_uniform(rng):
    ctx = _ctx(random_graph(rng, 6))
    m = SpectralTeacherParams.init(rng, 6, [3, 5, 2], BANDS)
    for k in m.params:
        if k.endswith("theta"):
            m.params[k][:] = 0.0
    logits, probs = spectral_teacher_forward(m, ctx.fs, ctx.graph.X)
    assert not logits.any() and np.allclose(probs, 0.5)


def test_spectral_matches_eigendecomposition_oracle(rng):
    g = random_graph(rng, 5, 0.5, d0=2)
    ctx = _ctx(g)
    m = SpectralTeacherParams.init(rng, 5, [2, 3], BANDS)
    for k in m.params:
        m.params[k] = rng.normal(size=m.params[k].shape)
    lam, V = np.linalg.eigh(normalized_operators(g).L_hat)
    f = {(0, 1): np.cos(lam / 2) * np.cos(lam / 4), (1, 0): np.sin(lam / 2), (1, 1): np.sin(lam / 4) * np.cos(lam / 2)}
    Z = g.X @ m.params["layer0.shared.W"] + m.params["layer0.shared.b"]
    expect = 0
    for k in BANDS:
        W = V @ np.diag(f[k]) @ V.T
        expect = expect + W.T @ (m.params[f"layer0.{band_name(k)}.theta"][:, None] * (W @ Z))
    logits, _ = spectral_teacher_forward(m, ctx.fs, g.X)
    assert np.allclose(logits, expect, atol=1e-10)


def test_spectral_theta_length_checked(rng):
    ctx = _ctx(random_graph(rng, 6))
    m = SpectralTeacherParams.init(rng, 5, [3, 2], BANDS)
    with pytest.raises(ValueError):
        spectral_teacher_forward(m, ctx.fs, ctx.graph.X)


# -------------------------------------------------------------- equivariance


def test_forwards_are_permutation_equivariant(rng):
    g = random_graph(rng, 8, 0.35, d0=3, c=3)
    perm = rng.permutation(8)
    gp = g.permuted(perm)
    c1, c2 = _ctx(g, l_max=3), _ctx(gp, l_max=3)
    spat = _spatial([3, 5, 3], rng=rng)
    simp = SimplifiedTeacherParams.init(rng, 3, 3, BANDS, power=3)
    spec = SpectralTeacherParams.init(rng, 8, [3, 4, 3], BANDS)
    theta_keys = [k for k in spec.params if k.endswith("theta")]
    for k in theta_keys:
        spec.params[k] = rng.normal(size=8)
    spec_p = SpectralTeacherParams(ParamSet({k: (v[perm] if k in theta_keys else v) for k, v in spec.params.items()}),
                                   spec.dims, spec.bands)
    pert = EnergyPerturbation(0.1, 0.1)
    pairs = [
        (spatial_teacher_forward(spat, c1.ba, g.X, pert)[0], spatial_teacher_forward(spat, c2.ba, gp.X, pert)[0]),
        (simplified_teacher_forward(simp, c1.ba, g.X, pert)[0], simplified_teacher_forward(simp, c2.ba, gp.X, pert)[0]),
        (spectral_teacher_forward(spec, c1.fs, g.X)[0], spectral_teacher_forward(spec_p, c2.fs, gp.X)[0]),
    ]
    for a, b in pairs:
        assert np.allclose(a[perm], b, atol=1e-10)


# ------------------------------------------------------------------ training


def _synthetic_task(h, n=200, scale=3.0, seed=0):
    g = generate_synthetic(n, 3, 8, 4.0, h, scale, seed)
    return prepare_context(g), split_masks(g, "ratio", seed=seed)


@pytest.mark.parametrize("kind", ["spatial", "simplified", "spectral"])
def test_separable_task_is_learned(kind):
    ctx, masks = _synthetic_task(1.0)
    res = train_teacher(ctx, masks, TeacherConfig(kind=kind, hidden=16, epochs=200, lr=0.01))
    best = res.history[res.best_epoch]
    assert best.train_acc >= 0.95
    assert 0.0 <= res.test_acc <= 1.0


def test_zero_epochs_returns_initialization():
    ctx, masks = _synthetic_task(0.5)
    res = train_teacher(ctx, masks, TeacherConfig(kind="spatial", hidden=8, epochs=0))
    init = SpatialTeacherParams.init(np.random.default_rng(), [8, 8, 3], BANDS)  # shapes only
    assert len(res.history) == 1 and res.best_epoch == 0
    assert set(res.model.params) == set(init.params)
    again = train_teacher(ctx, masks, TeacherConfig(kind="spatial", hidden=8, epochs=0))
    for k in res.model.params:
        assert np.array_equal(res.model.params[k], again.model.params[k])
    assert not any(res.model.params[k].any() for k in res.model.params if k.endswith(".b"))


@pytest.mark.parametrize("kind,dropout", [("spatial", 0.3), ("simplified", 0.0), ("spectral", 0.2)])
def test_training_is_deterministic(kind, dropout):
    ctx, masks = _synthetic_task(0.5, n=60)
    cfg = TeacherConfig(kind=kind, hidden=8, epochs=15, dropout=dropout, eps=0.05, eps_s=0.05)
    a = train_teacher(ctx, masks, cfg)
    b = train_teacher(ctx, masks, cfg)
    assert a.history == b.history
    assert np.array_equal(a.probs, b.probs)


def test_config_validation():
    with pytest.raises(ValueError):
        TeacherConfig(kind="gat")
    with pytest.raises(ValueError):
        TeacherConfig(depth=0)
    with pytest.raises(ValueError):
        TeacherConfig(dropout=1.0)


def test_save_teacher_writes_checkpoint_and_manifest(tmp_path):
    ctx, masks = _synthetic_task(0.5, n=60)
    res = train_teacher(ctx, masks, TeacherConfig(kind="spatial", hidden=8, epochs=3, eps=0.1))
    path = tmp_path / "teacher.fkdp"
    save_teacher(res, path, config_hash="abc")
    back = load_checkpoint(path)
    assert all(np.array_equal(back[k], res.model.params[k]) for k in res.model.params)
    manifest = json.loads((tmp_path / "teacher.fkdp.json").read_text())
    assert manifest["kind"] == "spatial" and manifest["eps"] == 0.1 and manifest["config_hash"] == "abc"
    assert manifest["bands"] == [list(b) for b in BANDS] and manifest["dims"] == [8, 8, 3]
