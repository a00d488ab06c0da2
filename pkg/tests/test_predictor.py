import logging
import math

import numpy as np
import pytest
import torch

from gradcheck import TERMS, check_gradients
from uvm_oversub.predictor import (
    DeltaVocabulary,
    LossConfig,
    PredictorConfig,
    PredictorModel,
    TraceFeatures,
    Trainer,
    WindowBatch,
    forward,
    loss_ce,
    loss_lucir,
    loss_thrash,
    lucir_lambda,
    predict_topk,
    total_loss,
)
from uvm_oversub.predictor.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from uvm_oversub.predictor.footprint import (
    FootprintReport,
    footprint_report,
    footprint_total,
    parameter_count,
    quantized_bytes,
)
from uvm_oversub.predictor.train import MomentumSGD, topk_from_probs
from uvm_oversub.trace import trace_from_pages


def batch_for(cfg, n=5, seed=0):
    g = torch.Generator().manual_seed(seed)
    r = lambda hi: torch.randint(0, hi, (n, cfg.window), generator=g)
    return WindowBatch(r(cfg.addr_buckets), r(cfg.delta_capacity), r(cfg.pc_buckets), r(cfg.tb_buckets))


def feats_for(pages, window):
    return TraceFeatures.from_trace(trace_from_pages(pages), window)


# -- model -------------------------------------------------------------------------


def test_forward_shapes_and_softmax(tiny_cfg):
    model = PredictorModel(tiny_cfg, 5, torch.Generator().manual_seed(1))
    logits, feats = model(batch_for(tiny_cfg))
    assert logits.shape == (5, 5)
    assert feats.shape == (5, model.feature_dim)
    probs = forward(model, batch_for(tiny_cfg))
    assert torch.allclose(probs.sum(-1), torch.ones(5), atol=1e-6)
    assert bool((probs >= 0).all())


def test_empty_vocabulary_is_an_error(tiny_cfg):
    model = PredictorModel(tiny_cfg)
    with pytest.raises(RuntimeError, match="no output classes"):
        model(batch_for(tiny_cfg))


def test_zero_gate_isolates_a_block(tiny_cfg):
    model = PredictorModel(tiny_cfg, 3, torch.Generator().manual_seed(2))
    with torch.no_grad():
        model.w_irregular.zero_()
    b = batch_for(tiny_cfg, seed=3)
    other = WindowBatch(b.addr, b.delta, (b.pc + 1) % tiny_cfg.pc_buckets, (b.tb + 5) % tiny_cfg.tb_buckets)
    assert torch.equal(model(b)[0], model(other)[0])


def test_grow_keeps_existing_rows(tiny_cfg):
    model = PredictorModel(tiny_cfg, 2, torch.Generator().manual_seed(0))
    old = model.head_weight.detach().clone()
    model.grow(3, torch.Generator().manual_seed(1))
    assert model.n_classes == 5
    assert torch.equal(model.head_weight[:2], old)
    assert model.head_weight[2:].abs().max() < 0.1
    assert torch.equal(model.head_bias[2:], torch.zeros(3))


def test_grow_without_bias(tiny_cfg):
    from dataclasses import replace

    cfg = replace(tiny_cfg, head_bias=False)
    model = PredictorModel(cfg, 2)
    model.grow(1)
    assert model.head_bias.shape == (3,)
    assert "head_bias" not in dict(model.named_parameters())


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        PredictorConfig(d_model=10, n_heads=4)
    with pytest.raises(ValueError):
        PredictorConfig(mu=1.5)
    with pytest.raises(ValueError):
        PredictorConfig(lambda_base=-1)


def test_config_from_mapping():
    cfg = PredictorConfig.from_mapping({"d_model": "32", "quantize": "yes", "lr": "0.1"})
    assert cfg.d_model == 32 and cfg.quantize is True and cfg.lr == 0.1
    with pytest.raises(KeyError):
        PredictorConfig.from_mapping({"nope": 1})


# -- losses --------------------------------------------------------------------------


def test_loss_ce_values():
    probs = torch.tensor([[0.5, 0.25, 0.25], [0.1, 0.8, 0.1]])
    out = loss_ce(probs, torch.tensor([0, 1]))
    assert torch.allclose(out, torch.tensor([math.log(2), -math.log(0.8)]))


def test_lucir_values(caplog):
    a = torch.tensor([[1.0, 0.0], [1.0, 0.0], [2.0, 2.0], [0.0, 0.0]])
    b = torch.tensor([[3.0, 0.0], [0.0, 1.0], [-1.0, -1.0], [1.0, 0.0]])
    with caplog.at_level(logging.WARNING):
        out = loss_lucir(a, b)
    assert torch.allclose(out, torch.tensor([0.0, 1.0, 2.0, 0.0]))
    assert "zero-norm" in caplog.text


def test_thrash_term_only_counts_ledger_samples():
    log_p = torch.log(torch.tensor([0.5, 0.2, 0.9]))
    out = loss_thrash(log_p, torch.tensor([True, False, True]))
    assert out[1] == 0 and out[0] == log_p[0] and out[2] == log_p[2]


def test_total_loss_degenerates_to_mean_ce():
    g = torch.Generator().manual_seed(0)
    logits = torch.randn(16, 7, generator=g, dtype=torch.float64)
    y = torch.randint(0, 7, (16,), generator=g)
    none = torch.zeros(16, dtype=torch.bool)
    got = total_loss(logits, y, none, LossConfig(0.0, 0.5))
    ref = torch.nn.functional.cross_entropy(logits, y)
    assert abs(got.item() - ref.item()) < 1e-9


def test_total_loss_composite_by_hand():
    logits = torch.tensor([[2.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    y = torch.tensor([0, 0])
    mask = torch.tensor([False, True])
    fn = torch.tensor([[1.0, 0.0], [1.0, 1.0]], dtype=torch.float64)
    fo = torch.tensor([[0.0, 1.0], [1.0, 1.0]], dtype=torch.float64)
    lp = torch.log_softmax(logits, -1)[:, 0]
    expect = (-lp + 2.0 * torch.tensor([1.0, 0.0], dtype=torch.float64)).mean() + 0.5 * lp[1]
    got = total_loss(logits, y, mask, LossConfig(2.0, 0.5), fn, fo)
    assert torch.isclose(got, expect)


def test_lucir_lambda_schedule():
    assert lucir_lambda(5.0, 4, 4) == 5.0
    assert lucir_lambda(5.0, 4, 16) == 2.5
    assert lucir_lambda(5.0, 0, 3) == 0.0


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(lam=-0.1)
    with pytest.raises(ValueError):
        LossConfig(mu=2.0)


@pytest.mark.parametrize("term", TERMS)
def test_gradients_match_finite_differences(term):
    for seed in range(10):
        worst, ok = check_gradients(term, seed)
        assert ok, (term, seed, worst)


# -- vocabulary and training -------------------------------------------------------------


def test_vocab_is_append_only():
    v = DeltaVocabulary([3, -1])
    assert v.extend([3, 7, -1, 0]) == 2
    assert v.deltas == (3, -1, 7, 0)
    assert v.index(7) == 2 and v.index(99) is None and v.index(99, -1) == -1
    assert v.delta(3) == 0 and 0 in v and len(v) == 4


def test_trainer_learns_a_constant_stream(tiny_cfg):
    feats = feats_for([5] * 200, tiny_cfg.window)
    tr = Trainer(tiny_cfg)
    tr.train_group(feats, feats.sample_positions(), epochs=2)
    assert tr.vocab.deltas == (0,)
    assert tr.accuracy(feats, feats.sample_positions()) == 1.0
    assert predict_topk(tr, feats, 50, 3) == [(0, 1.0)]


def test_trainer_learns_unit_stride(tiny_cfg):
    pages = [0]
    for i in range(400):
        pages.append(pages[-1] + (1 if i % 4 else 3))
    feats = feats_for(pages, tiny_cfg.window)
    tr = Trainer(tiny_cfg)
    tr.train_group(feats, feats.sample_positions(), epochs=8)
    assert tr.accuracy(feats, feats.sample_positions()) > 0.7


def test_snapshot_is_frozen_copy(tiny_cfg):
    feats = feats_for(list(range(0, 300, 2)), tiny_cfg.window)
    tr = Trainer(tiny_cfg)
    tr.train_group(feats, feats.sample_positions()[:50], epochs=1)
    tr.begin_group()
    assert tr.snapshot is not tr.model
    assert not any(p.requires_grad for p in tr.snapshot.parameters())


def test_momentum_survives_head_growth(tiny_cfg):
    model = PredictorModel(tiny_cfg, 2)
    opt = MomentumSGD(0.1, 0.9)
    for p in model.parameters():
        p.grad = torch.ones_like(p)
    opt.step(model)
    model.grow(2)
    for p in model.parameters():
        p.grad = torch.ones_like(p)
    opt.step(model)
    assert opt.velocity["head_weight"].shape == (4, model.feature_dim)
    assert torch.allclose(opt.velocity["head_weight"][:2], torch.full((2, model.feature_dim), 1.9))


def test_quantize_clamps_parameters(tiny_cfg):
    from dataclasses import replace

    cfg = replace(tiny_cfg, quantize=True, clamp=0.5, lr=5.0)
    feats = feats_for(list(range(0, 300, 3)), cfg.window)
    tr = Trainer(cfg)
    tr.train_group(feats, feats.sample_positions(), epochs=1)
    assert max(p.abs().max().item() for p in tr.model.parameters()) <= 0.5


def test_topk_orders_and_breaks_ties_low():
    v = DeltaVocabulary([10, 20, 30, 40])
    probs = np.array([0.2, 0.4, 0.2, 0.2])
    assert topk_from_probs(probs, v, 3) == [(20, 0.4), (10, 0.2), (30, 0.2)]
    assert topk_from_probs(probs, v, 0) == []
    assert len(topk_from_probs(probs, v, 10)) == 4


def test_ledger_pages_reach_the_loss(tiny_cfg):
    feats = feats_for(list(range(0, 200)), tiny_cfg.window)
    tr = Trainer(tiny_cfg)
    pos = feats.sample_positions()[:20]
    m = tr.train_batch(feats, pos, ledger_pages=set(feats.target_pages(pos)[:7].tolist()))
    assert m.n_ledger == 7


# -- footprint and checkpoints -------------------------------------------------------------


def test_footprint_formula_row():
    assert footprint_total(0.41, 1.46, 3) == 6.84
    assert footprint_total(1.0, 0.0, 0) == 0.0
    with pytest.raises(ValueError):
        footprint_total(1, 1, -1)


def test_footprint_report(tiny_cfg):
    model = PredictorModel(tiny_cfg, 4)
    rep = footprint_report(model, num_patterns=6, bits=8)
    assert rep.params_bytes == parameter_count(model)
    assert rep.total_bytes == (rep.params_bytes * 2 + rep.activation_bytes) * 6
    assert quantized_bytes(10, 5) == 7
    assert FootprintReport(1 << 20, 0, 1, 8).as_mb()["total_mb"] == 2.0


def test_checkpoint_round_trip(tiny_cfg, tmp_path):
    feats = feats_for([0, 1, 3, 4, 6, 7] * 30, tiny_cfg.window)
    tr = Trainer(tiny_cfg)
    tr.train_group(feats, feats.sample_positions(), epochs=1)
    path = save_checkpoint(tr, tmp_path / "m.bin")
    back = load_checkpoint(path, tiny_cfg)
    assert back.vocab.deltas == tr.vocab.deltas
    pos = feats.sample_positions()
    assert np.allclose(back.probabilities(feats, pos), tr.probabilities(feats, pos), atol=1e-6)


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
