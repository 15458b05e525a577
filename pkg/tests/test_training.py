import datetime as dt
import math

import numpy as np
import pytest

from shiftcast import numerics as nx
from shiftcast.corpus import SynthProfile, synthesize, windowize
from shiftcast.evaluation import evaluate_mob
from shiftcast.model import ModelConfig, ShiftModel
from shiftcast.numerics import Param, Tensor
from shiftcast.training import (EmptyTarget, PlateauScheduler, TrainConfig, build_model,
                                corpus_vocab, encode_samples, encoder_pairs, iter_batches,
                                loss_mob, loss_nl, loss_total, momentum_update, train, train_epoch)
from shiftcast.tokenizer import PAD_ID

from conftest import make_sample

SMALL = ModelConfig(vocab_size=1, d=16, n_layers=1, n_heads=2, ff_width=32, dropout=0.1,
                    max_prompt_len=96)


def small_samples(n_pois=4, days=12, obs=4, seed=0):
    return windowize(synthesize(SynthProfile(num_pois=n_pois, num_categories=2, days=days,
                                             seed=seed, obs=obs)), obs)


def test_loss_nl_cases():
    targets = np.array([[4, 5, PAD_ID]])
    sure = np.full((1, 3, 6), -1e3)
    sure[0, 0, 4] = sure[0, 1, 5] = sure[0, 2, 0] = 1e3
    assert loss_nl(Tensor(sure), targets).item() == pytest.approx(0.0, abs=1e-12)
    assert loss_nl(Tensor(np.zeros((1, 3, 4))), np.array([[0, 1, 3]])).item() == pytest.approx(math.log(4))
    with pytest.raises(EmptyTarget):
        loss_nl(Tensor(np.zeros((1, 2, 4))), np.array([[PAD_ID, PAD_ID]]))
    with pytest.raises(nx.ShapeMismatch):
        loss_nl(Tensor(np.zeros((1, 2, 4))), np.array([[0, 1, 1]]))


def test_loss_nl_ignores_padding_logits():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(1, 3, 5))
    b = a.copy()
    b[0, 2] = rng.normal(size=5) * 10
    t = np.array([[4, 1, PAD_ID]])
    assert loss_nl(Tensor(a), t).item() == loss_nl(Tensor(b), t).item()


def test_loss_mob_cases():
    assert loss_mob(Tensor([1.0, 2.0]), [1.0, 2.0]).item() == 0.0
    assert loss_mob(Tensor([1.0, 3.0]), [0.0, 0.0]).item() == 5.0
    assert loss_mob(Tensor([2.0]), [0.0]).item() == 4.0
    with pytest.raises(nx.ShapeMismatch):
        loss_mob(Tensor([1.0]), [1.0, 2.0])


def test_loss_total():
    l_n, l_m = Tensor(2.0), Tensor(100.0)
    assert loss_total(l_n, l_m, 0.0) is l_n
    assert loss_total(l_n, l_m, 1.0) is l_m
    assert loss_total(l_n, l_m, 0.01).item() == pytest.approx(2.98, abs=1e-12)
    for a in (0.1, 0.5, 0.9):  # affine in each argument
        f = lambda x, y: loss_total(Tensor(x), Tensor(y), a).item()
        assert f(3.0, 5.0) - f(1.0, 5.0) == pytest.approx(2 * (f(2.0, 5.0) - f(1.0, 5.0)))
        assert f(1.0, 7.0) - f(1.0, 5.0) == pytest.approx(2 * (f(1.0, 6.0) - f(1.0, 5.0)))
    with pytest.raises(ValueError):
        loss_total(l_n, l_m, 1.5)


def test_momentum_update_cases():
    m, n = Param(np.array([0.0]), "m"), Param(np.array([2.0]), "n")
    momentum_update([m], [n], 0.5)
    assert m.data[0] == 1.0 and n.data[0] == 2.0
    momentum_update([m], [n], 0.0)
    assert m.data[0] == 1.0
    momentum_update([m], [n], 1.0)
    assert m.data[0] == 2.0
    with pytest.raises(nx.ShapeMismatch):
        momentum_update([m], [Param(np.zeros(2), "x")], 0.5)


def _run_steps(mode, steps=5, alpha_m=0.001):
    ss = small_samples()
    cfg = TrainConfig(mode=mode, alpha_m=alpha_m, batch_size=8, alpha_loss=0.3, lr=1e-3)
    vocab = corpus_vocab(ss)
    model = build_model(ss, vocab, SMALL, cfg)
    data = encode_samples(ss, vocab)
    opt = nx.Adam(model.trainable(), lr=cfg.lr)
    batches = list(iter_batches(data, model, cfg.batch_size))[:steps]
    return model, cfg, opt, batches


def test_siamese_encoders_stay_identical():
    model, cfg, opt, batches = _run_steps("siamese")
    train_epoch(model, batches, cfg, opt)
    for m, n in zip(*encoder_pairs(model)):
        assert m is n


def test_momentum_zero_alpha_freezes_mob_encoder():
    model, cfg, opt, batches = _run_steps("momentum", alpha_m=0.0)
    before = [p.data.copy() for p in encoder_pairs(model)[0]]
    train_epoch(model, batches, cfg, opt)
    for p, b in zip(encoder_pairs(model)[0], before):
        assert np.array_equal(p.data, b)
        assert not p.grad.any()


def test_momentum_moves_mob_encoder_towards_nl():
    model, cfg, opt, batches = _run_steps("momentum", alpha_m=0.5)
    train_epoch(model, batches, cfg, opt)
    theta_m, theta_n = encoder_pairs(model)
    assert any(not np.array_equal(m.data, n.data) for m, n in zip(theta_m, theta_n))
    assert all(not m.grad.any() for m in theta_m)


def test_basic_mode_both_encoders_get_gradients():
    model, cfg, opt, batches = _run_steps("basic", steps=1)
    train_epoch(model, batches, cfg, opt)
    theta_m, theta_n = encoder_pairs(model)
    assert sum(np.abs(p.grad).sum() for p in theta_m) > 0
    assert sum(np.abs(p.grad).sum() for p in theta_n) > 0
    assert any(not np.array_equal(m.data, n.data) for m, n in zip(theta_m, theta_n))


def test_plateau_scheduler():
    opt = nx.Adam([Param(np.zeros(1), "w")], lr=1.0)
    sched = PlateauScheduler(opt, factor=0.5, patience=3)
    lrs = []
    for _ in range(8):
        sched.step(5.0)
        lrs.append(opt.lr)
    assert lrs == [1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.25, 0.25]


def test_train_zero_epochs_returns_init():
    ss = small_samples()
    res = train(ss, ss[:3], SMALL, TrainConfig(epochs=0))
    assert res.report.epochs == [] and res.report.best_epoch is None
    init = ShiftModel(res.model.cfg, seed=0)
    assert all(np.array_equal(res.model.params[k].data, init.params[k].data) for k in init.params)


def test_train_frozen_params_decay_lr():
    ss = small_samples()
    cfg = TrainConfig(epochs=5, lr=1e-14, branches="mob", batch_size=16, lr_patience=3)
    res = train(ss, ss[:10], SMALL, cfg)
    assert [e["lr"] for e in res.report.epochs] == [1e-14] * 4 + [5e-15]


def test_train_deterministic_and_report_shape():
    ss = small_samples()
    tr, va = ss[:20], ss[20:26]
    cfg = TrainConfig(epochs=2, batch_size=8, lr=1e-3)
    a, b = train(tr, va, SMALL, cfg), train(tr, va, SMALL, cfg)
    assert a.report.to_jsonl() == b.report.to_jsonl()
    assert len(a.report.epochs) == 2
    assert set(a.report.epochs[0]) == {"epoch", "lr", "loss", "loss_nl", "loss_mob", "val_rmse",
                                       "val_mae", "parse_failure_rate"}
    assert all(math.isfinite(e["loss"]) for e in a.report.epochs)


def test_copy_task_mob_branch():
    rng = np.random.default_rng(0)
    start = dt.date(2021, 3, 1)

    def copy_sample(i):
        w = rng.integers(0, 40, size=4).tolist()
        return make_sample(i, "Bar", start, w, w[-1])

    tr = [copy_sample(i) for i in range(600)]
    te = [copy_sample(i) for i in range(100)]
    cfg = TrainConfig(branches="mob", epochs=30, lr=3e-3, batch_size=32, grad_clip=None)
    res = train(tr, [], ModelConfig(vocab_size=1, d=16, n_layers=1, n_heads=2, ff_width=32,
                                    dropout=0.0), cfg)
    assert evaluate_mob(res.model, te).mae < 1.0
