"""Optimizer algebra, stage freezing contracts and full-run determinism."""

import numpy as np
import pytest

from fpg.model import FpgModel, ModelConfig
from fpg.tensor import Tensor
from fpg.text import EOS, PAD, TokenSeq
from fpg.training import (
    AdamW,
    ContrastiveItem,
    PretrainItem,
    StageConfig,
    SupervisedItem,
    checksum,
    clip_global_norm,
    contrastive_margin,
    default_schedule,
    load_checkpoint,
    run_stage,
    save_checkpoint,
    train_full,
)

CFG = ModelConfig(vocab_size=14, d_e=8, n_heads=1, n_blocks=1, T=4, M=6, N=2)


def _seq(ids, length):
    return TokenSeq(tuple(ids) + (PAD,) * (length - len(ids)), len(ids))


def _datasets():
    body_a, body_b = _seq([5, 6, 7], CFG.M), _seq([8, 9], CFG.M)
    hist = (_seq([10, 11], CFG.T), _seq([12], CFG.T))
    tgt_a, tgt_b = _seq([5, EOS], CFG.T), _seq([8, EOS], CFG.T)
    neg = _seq([13, EOS], CFG.T)
    return {
        "C": [PretrainItem(body_a, tgt_a), PretrainItem(body_b, tgt_b)],
        "Dl": [SupervisedItem(body_a, hist, tgt_a), SupervisedItem(body_b, hist, tgt_b)],
        "Dstar": [
            ContrastiveItem(body_a, hist, tgt_a, (neg,)),
            ContrastiveItem(body_b, hist, tgt_b, (neg, tgt_a)),
        ],
    }


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------


def test_zero_grad_zero_decay_leaves_params_unchanged():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = AdamW({"p": p})
    opt.step({"p": np.zeros(2)}, lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_first_step_closed_form():
    g = np.array([0.5, -3.0, 1e-3])
    p = Tensor(np.zeros(3), requires_grad=True)
    opt = AdamW({"p": p})
    opt.step({"p": g.copy()}, lr=0.01, weight_decay=0.0)
    expected = -0.01 * g / (np.abs(g) + AdamW.eps)
    np.testing.assert_allclose(p.data, expected, rtol=1e-6)


def test_lr_zero_is_total_noop_even_with_decay():
    p = Tensor(np.ones((2, 2)), requires_grad=True)
    opt = AdamW({"p": p})
    opt.step({"p": np.ones((2, 2))}, lr=0.0, weight_decay=0.5)
    np.testing.assert_array_equal(p.data, np.ones((2, 2)))


def test_nan_gradient_aborts_with_diagnostic():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = AdamW({"p": p})
    with pytest.raises(RuntimeError, match="p"):
        opt.step({"p": np.array([np.nan, 0.0])}, lr=0.1)


def test_decay_skips_biases_and_embeddings():
    mat = Tensor(np.ones((2, 2)), requires_grad=True)
    bias = Tensor(np.ones(2), requires_grad=True)
    emb = Tensor(np.ones((2, 2)), requires_grad=True)
    opt = AdamW({"w": mat, "b": bias, "tok_emb": emb})
    opt.step({"w": np.zeros((2, 2)), "b": np.zeros(2), "tok_emb": np.zeros((2, 2))}, lr=0.1, weight_decay=0.5)
    assert (mat.data < 1.0).all()  # decayed
    np.testing.assert_array_equal(bias.data, np.ones(2))
    np.testing.assert_array_equal(emb.data, np.ones((2, 2)))


def test_clip_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    total = clip_global_norm(grads, 1.0)
    assert total == pytest.approx(5.0)
    clipped = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    assert clipped == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# stage freezing
# ---------------------------------------------------------------------------


def test_stage2_freezes_xi():
    model = FpgModel(CFG, seed=0)
    datasets = _datasets()
    xi_before = checksum(model.params, model.xi_names)
    theta_before = checksum(model.params, model.theta_names)
    run_stage(model, StageConfig(stage=2, epochs=2, lr=1e-3), datasets["Dl"])
    assert checksum(model.params, model.xi_names) == xi_before
    assert checksum(model.params, model.theta_names) != theta_before


def test_stage4_freezes_theta():
    model = FpgModel(CFG, seed=0)
    datasets = _datasets()
    theta_before = checksum(model.params, model.theta_names)
    xi_before = checksum(model.params, model.xi_names)
    run_stage(model, StageConfig(stage=4, epochs=1, lr=1e-3), datasets["Dstar"])
    assert checksum(model.params, model.theta_names) == theta_before
    assert checksum(model.params, model.xi_names) != xi_before


def test_stage1_trains_only_xi_on_plain_pairs():
    model = FpgModel(CFG, seed=0)
    datasets = _datasets()
    theta_before = checksum(model.params, model.theta_names)
    report = run_stage(model, StageConfig(stage=1, epochs=2, lr=1e-3), datasets["C"])
    assert checksum(model.params, model.theta_names) == theta_before
    assert len(report.epoch_losses) == 2


def test_empty_dataset_rejected():
    model = FpgModel(CFG, seed=0)
    with pytest.raises(ValueError, match="empty"):
        run_stage(model, StageConfig(stage=1, epochs=1, lr=1e-3), [])


def test_stage_table_is_fixed():
    assert StageConfig(stage=1, epochs=0, lr=0.1).trainable == "xi"
    assert StageConfig(stage=2, epochs=0, lr=0.1).trainable == "theta"
    assert StageConfig(stage=3, epochs=0, lr=0.1).dataset_key == "Dl"
    assert StageConfig(stage=4, epochs=0, lr=0.1).loss == "cll"
    with pytest.raises(ValueError):
        StageConfig(stage=5, epochs=0, lr=0.1)


# ---------------------------------------------------------------------------
# full schedule
# ---------------------------------------------------------------------------


def test_zero_epoch_schedule_is_identity():
    model = FpgModel(CFG, seed=0)
    init = {n: t.data.copy() for n, t in model.params.items()}
    schedule = default_schedule(epochs=(0, 0, 0, 0))
    train_full(model, schedule, _datasets())
    for name, before in init.items():
        np.testing.assert_array_equal(model.params[name].data, before)


def test_full_run_deterministic_bytes(tmp_path):
    def run(out):
        out.mkdir()
        model = FpgModel(CFG, seed=3)
        schedule = default_schedule(epochs=(1, 1, 1, 1), seed=9)
        train_full(model, schedule, _datasets(), out_dir=out)
        return (out / "final.ckpt").read_bytes()

    assert run(tmp_path / "a") == run(tmp_path / "b")


def test_margin_reported_around_stage4():
    model = FpgModel(CFG, seed=1)
    schedule = default_schedule(epochs=(0, 0, 0, 2), lrs=(0, 0, 0, 5e-3))
    report = train_full(model, schedule, _datasets(), holdout_fraction=0.5)
    assert report.margin_pre is not None and report.margin_post is not None


def test_contrastive_margin_sign():
    model = FpgModel(CFG, seed=2)
    items = _datasets()["Dstar"]
    margin = contrastive_margin(model, items)
    assert np.isfinite(margin)


def test_checkpoint_round_trip(tmp_path):
    model = FpgModel(CFG, seed=4)
    opt = AdamW(model.subset("both"))
    opt.step({n: np.ones_like(t.data) for n, t in model.params.items()}, lr=1e-3)
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, model, opt, {"stage": 2, "epoch": 1})
    loaded, opt_state, meta = load_checkpoint(path)
    assert meta == {"stage": 2, "epoch": 1, "step": 1}
    np.testing.assert_array_equal(loaded.params["out.w"].data, model.params["out.w"].data)
    np.testing.assert_array_equal(opt_state["opt.m.out.w"], opt.m["out.w"])


def test_per_epoch_checkpoints_written(tmp_path):
    model = FpgModel(CFG, seed=5)
    report = run_stage(
        model, StageConfig(stage=1, epochs=2, lr=1e-3), _datasets()["C"], out_dir=tmp_path
    )
    assert len(report.checkpoints) == 2
    assert (tmp_path / "stage1_epoch1.ckpt").exists()
