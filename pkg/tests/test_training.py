"""Training tests: optimizer algebra, determinism, degenerations, freeze contracts."""

import numpy as np
import pytest

from gla.autodiff import Tape, Tensor, backward, mean_all, scale_by_constant, square
from gla.datasets import Transform, gen_gaussian2d, make_shifted_task
from gla.model import build_model
from gla.training import (
    OptimizerState,
    TrainConfig,
    TrainError,
    make_streams,
    mcd_phase1,
    mcd_phase2,
    mcd_phase3,
    optimizer_step,
    repair_dead_units,
    run_ablation_suite,
    sensitivity_sweep,
    train_dal_only,
    train_dfa_ent,
    train_dfa_mcd,
    train_dfa_safn,
)

SMALL = dict(hidden_widths=(6, 8, 10), classifier_hidden=8)


def small_cfg(**kw):
    base = dict(
        alpha=0.01,
        beta=1.0,
        lr=1e-3,
        batch=10,
        epochs=3,
        seed=5,
        variant="dfa_ent",
        **SMALL,
    )
    base.update(kw)
    return TrainConfig(**base)


def moons_task(seed=5, n=40):
    return make_shifted_task("moons", Transform(rotation_deg=30.0), n, seed)


# ---------------------------------------------------------------- optimizer

def _half_square_grad(w):
    with Tape():
        loss = scale_by_constant(mean_all(square(w)), 0.5)
        return backward(loss)


def test_sgd_step_hand_value():
    w = Tensor(np.array([[1.0]]), requires_grad=True)
    state = OptimizerState("sgd")
    optimizer_step(state, [w], _half_square_grad(w), lr=0.1)
    assert abs(w.data[0, 0] - 0.9) < 1e-15


def test_adam_first_step_magnitude_is_lr():
    for scale in (3.0, 0.01):
        w = Tensor(np.array([[scale]]), requires_grad=True)
        state = OptimizerState("adam")
        optimizer_step(state, [w], _half_square_grad(w), lr=0.05)
        assert abs(abs(w.data[0, 0] - scale) - 0.05) < 1e-6


def test_params_without_gradient_are_skipped():
    w = Tensor(np.array([[1.0]]), requires_grad=True)
    untouched = Tensor(np.array([[2.0]]), requires_grad=True)
    for kind in ("sgd", "adam"):
        state = OptimizerState(kind)
        optimizer_step(state, [w, untouched], _half_square_grad(w), lr=0.1)
        assert untouched.data[0, 0] == 2.0


def test_optimizer_rejects_bad_shapes_and_kind():
    w = Tensor(np.array([[1.0]]), requires_grad=True)
    with pytest.raises(TrainError):
        optimizer_step(OptimizerState("sgd"), [w], {w.node: np.zeros((2, 2))}, lr=0.1)
    with pytest.raises(TrainError):
        OptimizerState("rmsprop")


def test_adam_state_has_one_slot_per_tied_parameter():
    data = moons_task()
    cfg = small_cfg(epochs=1)
    bundle, _ = train_dfa_ent(data, cfg)
    n_params = len(bundle.parameters())
    state = OptimizerState("adam")
    view = data.train_view()
    from gla.training import variant_losses

    with Tape():
        total, _ = variant_losses(
            bundle,
            "dfa_ent",
            view.source_points[:10],
            view.source_labels[:10],
            view.target_points[:10],
            alpha=0.01,
            beta=1.0,
        )
        grads = backward(total)
    optimizer_step(state, bundle.parameters(), grads, lr=1e-3)
    assert len(state.slots) <= n_params


# ---------------------------------------------------------------- plumbing

def test_make_streams_named_and_deterministic():
    a = make_streams(7)
    b = make_streams(7)
    assert set(a) == {"data", "init", "batch", "prior"}
    ga = np.random.default_rng(a["batch"]).random(4)
    gb = np.random.default_rng(b["batch"]).random(4)
    assert np.array_equal(ga, gb)
    other = np.random.default_rng(a["init"]).random(4)
    assert not np.array_equal(ga, other)


def test_train_config_validation():
    with pytest.raises(TrainError):
        small_cfg(lr=0.0)
    with pytest.raises(TrainError):
        small_cfg(batch=1)
    with pytest.raises(TrainError):
        small_cfg(mcd_inner_n=0)
    with pytest.raises(TrainError):
        small_cfg(optimizer="adamw")
    with pytest.raises(TrainError):
        small_cfg(variant="dfa_unknown")
    with pytest.raises(TrainError):
        small_cfg(epochs=0)


def test_batch_larger_than_both_domains_rejected():
    data = moons_task(n=12)
    with pytest.raises(TrainError, match="batch"):
        train_dfa_ent(data, small_cfg(batch=20, epochs=1))


# ---------------------------------------------------------------- dfa_ent

def test_training_is_deterministic():
    data = moons_task()
    p1 = train_dfa_ent(data, small_cfg())[0].parameters()
    p2 = train_dfa_ent(moons_task(), small_cfg())[0].parameters()
    for a, b in zip(p1, p2):
        assert np.array_equal(a.data, b.data)


def test_report_shape_and_finiteness():
    data = moons_task()
    bundle, report = train_dfa_ent(data, small_cfg(epochs=4))
    assert len(report.rows) == 4
    assert list(report.rows[0]) == [
        "epoch",
        "loss_cls",
        "loss_ent",
        "loss_kld",
        "loss_dal",
        "loss_recon",
        "accuracy",
    ]
    assert 0.0 <= report.summary["final_accuracy"] <= 1.0


def test_zero_weights_degenerate_to_source_only_ent():
    data = moons_task()
    zeroed, _ = train_dfa_ent(data, small_cfg(alpha=0.0, beta=0.0))
    baseline, _ = train_dfa_ent(moons_task(), small_cfg(variant="source_only_ent"))
    for a, b in zip(zeroed.parameters(), baseline.parameters()):
        assert np.array_equal(a.data, b.data)


def test_target_labels_do_not_influence_training():
    data = moons_task()
    bundle, _ = train_dfa_ent(data, small_cfg())

    shuffled = moons_task()
    rng = np.random.default_rng(0)
    name = [a for a in vars(shuffled) if a.endswith("__target_labels")][0]
    labels = getattr(shuffled, name)
    setattr(shuffled, name, rng.permutation(labels))
    bundle2, _ = train_dfa_ent(shuffled, small_cfg())
    for a, b in zip(bundle.parameters(), bundle2.parameters()):
        assert np.array_equal(a.data, b.data)


def test_tying_holds_after_training_and_untied_breaks():
    data = moons_task()
    tied, _ = train_dfa_ent(data, small_cfg(epochs=2))
    assert tied.tying_gaps() == [0.0, 0.0, 0.0]
    untied, _ = train_dfa_ent(data, small_cfg(epochs=1, variant="ablation_untied"))
    assert max(untied.tying_gaps()) > 0.0


# ---------------------------------------------------------------- mcd

def _mcd_bundle(seed=9):
    return build_model(2, np.random.SeedSequence(seed), two_classifiers=True, **SMALL)


def _snapshot(params):
    return [p.data.copy() for p in params]


def _changed(params, before):
    return [not np.array_equal(p.data, b) for p, b in zip(params, before)]


def test_mcd_phase_freeze_contracts():
    rng = np.random.default_rng(1)
    xs, ys = rng.normal(size=(8, 2)), rng.integers(0, 2, size=8)
    xt = rng.normal(size=(8, 2))
    bundle = _mcd_bundle()
    state = OptimizerState("adam")

    g_params = bundle.encoder.parameters()
    f_params = bundle.classifier.named_parameters("c1") + bundle.classifier2.named_parameters("c2")
    f_params = [p for _, p in f_params]
    d_own = bundle.decoder.parameters()

    before_f = _snapshot(f_params)
    before_g = _snapshot(g_params)
    mcd_phase1(bundle, state, xs, ys, alpha=0.01, lr=1e-3)
    assert any(_changed(g_params, before_g))
    assert any(_changed(f_params, before_f))

    before_g = _snapshot(g_params)
    before_d = _snapshot(d_own)
    mcd_phase2(bundle, state, xs, ys, xt, alpha=0.01, lr=1e-3)
    assert not any(_changed(g_params, before_g)), "G must be frozen in phase 2"
    assert not any(_changed(d_own, before_d))

    before_f = _snapshot(f_params)
    before_g = _snapshot(g_params)
    before_d = _snapshot(d_own)
    mcd_phase3(bundle, state, xt, beta=1.0, lr=1e-3)
    assert not any(_changed(f_params, before_f)), "F1/F2 must be frozen in phase 3"
    assert any(_changed(g_params, before_g))
    assert any(_changed(d_own, before_d))


def test_mcd_training_runs_and_reports_discrepancy():
    data = moons_task()
    cfg = small_cfg(variant="dfa_mcd", epochs=3, mcd_inner_n=2)
    bundle, report = train_dfa_mcd(data, cfg)
    assert bundle.classifier2 is not None
    assert "discrepancy" in report.rows[0]
    assert len(report.rows) == 3
    assert bundle.tying_gaps() == [0.0, 0.0, 0.0]


def test_mcd_is_deterministic():
    cfg = small_cfg(variant="dfa_mcd", epochs=2, mcd_inner_n=2)
    p1 = train_dfa_mcd(moons_task(), cfg)[0].parameters()
    p2 = train_dfa_mcd(moons_task(), cfg)[0].parameters()
    for a, b in zip(p1, p2):
        assert np.array_equal(a.data, b.data)


# ---------------------------------------------------------------- safn

def test_safn_norms_grow_over_first_iterations():
    data = moons_task(n=24)
    cfg = small_cfg(variant="dfa_safn", epochs=10, batch=24, kappa=1.0, delta_r=1.0)
    _, report = train_dfa_safn(data, cfg)
    norms = [row["mean_norm"] for row in report.rows]
    assert all(b > a for a, b in zip(norms, norms[1:]))


def test_safn_zero_weights_degenerate_to_source_only_ent():
    data = moons_task()
    cfg = small_cfg(variant="dfa_safn", alpha=0.0, beta=0.0, kappa=0.0)
    safn_bundle, _ = train_dfa_safn(data, cfg)
    base_bundle, _ = train_dfa_ent(moons_task(), small_cfg(variant="source_only_ent"))
    for (name, a), b in zip(safn_bundle.named_parameters(), base_bundle.parameters()):
        assert np.array_equal(a.data, b.data), name


def test_safn_report_columns():
    data = moons_task(n=24)
    cfg = small_cfg(variant="dfa_safn", epochs=2, batch=12)
    _, report = train_dfa_safn(data, cfg)
    assert list(report.rows[0]) == [
        "epoch",
        "loss_cls",
        "loss_ent",
        "loss_safn",
        "loss_kld",
        "loss_dal",
        "mean_norm",
        "accuracy",
    ]


# ---------------------------------------------------------------- dal_only

def _gauss_clouds(n=60, seed=3):
    cov = [[4.0, 2.0], [2.0, 2.0]]
    src = gen_gaussian2d((5.0, 5.0), cov, n, seed)
    tgt = gen_gaussian2d((1.0, 1.0), cov, n, seed + 1)
    return src, tgt


def test_dal_only_loss_moving_average_non_increasing():
    src, tgt = _gauss_clouds()
    cfg = small_cfg(variant="dal_only", epochs=120, batch=60, lr=1e-3)
    _, report = train_dal_only(src, tgt, cfg)
    losses = np.array([row["loss_dal"] for row in report.rows])
    window = np.convolve(losses, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(window) <= 1e-9)


def test_dal_only_scatter_artifacts():
    src, tgt = _gauss_clouds(n=30)
    cfg = small_cfg(variant="dal_only", epochs=5, batch=30)
    _, report = train_dal_only(src, tgt, cfg)
    for stage in ("initial", "final"):
        clouds = report.artifacts[stage]
        assert set(clouds) == {"source", "target", "predicted"}
        assert clouds["predicted"].shape == (30, 2)
    assert report.summary["final_energy"] >= 0.0


def test_dal_only_requires_variant():
    src, tgt = _gauss_clouds(n=30)
    with pytest.raises(TrainError):
        train_dal_only(src, tgt, small_cfg(variant="dfa_ent", batch=30))


# ---------------------------------------------------------------- suites

def test_ablation_suite_rows():
    data = moons_task(n=24)
    cfg = small_cfg(epochs=2, batch=12)
    rows = run_ablation_suite(data, cfg)
    assert [row["id"] for row in rows] == [1, 2, 3, 4, 5, 6]
    assert all(0.0 <= row["accuracy"] <= 1.0 for row in rows)
    assert all(row["best_accuracy"] >= row["accuracy"] for row in rows)
    partial = run_ablation_suite(data, cfg, variants=(4, 6))
    assert [row["id"] for row in partial] == [4, 6]
    with pytest.raises(TrainError):
        run_ablation_suite(data, cfg, variants=(7,))


def test_sensitivity_sweep_grid():
    data = moons_task(n=24)
    cfg = small_cfg(epochs=2, batch=12)
    rows = sensitivity_sweep(data, [0.01, 0.1], [1.0], cfg)
    assert len(rows) == 2
    assert {(r["alpha"], r["beta"]) for r in rows} == {(0.01, 1.0), (0.1, 1.0)}
    single = sensitivity_sweep(data, [0.01], [10.0], cfg)
    assert len(single) == 1
    with pytest.raises(TrainError):
        sensitivity_sweep(data, [], [1.0], cfg)


# ---------------------------------------------------------------- init repair

def _force_dead_row(layer, row, scale=5.0):
    """Point one weight row straight away from the non-negative input cone."""
    layer.W.data[row] = -scale * np.abs(layer.W.data[row]) - scale


def _relu_stage_alive(bundle, points):
    """True when every unit of every encoder relu stage fires on >= 1 point."""
    enc = bundle.encoder
    h = np.asarray(points, dtype=float)
    for layer in (enc.fc1, enc.fc2, enc.fc3):
        pre = h @ layer.W.data.T + layer.b.data
        if not (pre.max(axis=0) > 0.0).all():
            return False
        h = np.maximum(pre, 0.0)
    return True


def test_repair_flips_only_dead_rows_exactly():
    streams = make_streams(11)
    bundle = build_model(2, streams["init"], hidden_widths=(6, 8, 10), classifier_hidden=8)
    pts = np.random.default_rng(0).normal(size=(30, 2))
    _force_dead_row(bundle.encoder.fc2, 3)
    before = {i: layer.W.data.copy() for i, layer in enumerate(
        (bundle.encoder.fc1, bundle.encoder.fc2, bundle.encoder.fc3))}
    flipped = repair_dead_units(bundle, pts)
    assert flipped >= 1
    after2 = bundle.encoder.fc2.W.data
    assert np.array_equal(after2[3], -before[1][3])
    pre1 = pts @ before[0].T + bundle.encoder.fc1.b.data
    alive1 = pre1.max(axis=0) > 0.0
    assert np.array_equal(bundle.encoder.fc1.W.data[alive1], before[0][alive1])
    assert _relu_stage_alive(bundle, pts)


def test_repair_preserves_untied_construction_equality():
    streams = make_streams(12)
    bundle = build_model(
        2, streams["init"], hidden_widths=(6, 8, 10), classifier_hidden=8, tied=False
    )
    pts = np.random.default_rng(1).normal(size=(25, 2))
    _force_dead_row(bundle.encoder.fc3, 0)
    _force_dead_row(bundle.encoder.fc1, 2)
    # re-establish the born-equal copies after the forced mutation
    bundle.decoder.stage_W[0].data[:] = bundle.encoder.fc3.W.data
    bundle.decoder.stage_W[2].data[:] = bundle.encoder.fc1.W.data
    assert max(bundle.decoder.tying_gaps()) == 0.0
    assert repair_dead_units(bundle, pts) >= 2
    assert max(bundle.decoder.tying_gaps()) == 0.0


def test_repair_idempotent():
    streams = make_streams(13)
    bundle = build_model(2, streams["init"], hidden_widths=(6, 8, 10), classifier_hidden=8)
    pts = np.random.default_rng(2).normal(size=(20, 2))
    _force_dead_row(bundle.encoder.fc1, 1)
    repair_dead_units(bundle, pts)
    snapshot = [l.W.data.copy() for l in
                (bundle.encoder.fc1, bundle.encoder.fc2, bundle.encoder.fc3)]
    assert repair_dead_units(bundle, pts) == 0
    for arr, layer in zip(snapshot, (bundle.encoder.fc1, bundle.encoder.fc2, bundle.encoder.fc3)):
        assert np.array_equal(arr, layer.W.data)


def test_training_loops_start_with_live_units():
    data = moons_task(n=40)
    pts = np.vstack([data.source_points, data.target_points])
    cfg = small_cfg(epochs=1, lr=1e-12, batch=40)
    bundle, _ = train_dfa_ent(data, cfg)
    assert _relu_stage_alive(bundle, pts)
    cfg = small_cfg(epochs=1, lr=1e-12, batch=40, variant="dal_only")
    bundle, _ = train_dal_only(data.source_points, data.target_points, cfg)
    assert _relu_stage_alive(bundle, pts)
