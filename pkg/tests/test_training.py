import math

import numpy as np
import pytest
import torch

from fgdiff.motion_data import SynthConfig, synth_corpus, stack_windows
from fgdiff.training import AdversarialTrainer, TrainConfig, TrainingDiverged, train

SMALL = dict(width=8, depth=1, kernel=3, gen_width=4, gen_depth=1, gen_kernel=3)


def _data(n_videos=4, seed=0):
    corpus = synth_corpus(SynthConfig(n_videos=n_videos, anomaly_ratio=0.0, seed=seed))
    return torch.as_tensor(stack_windows(corpus), dtype=torch.float32)


def _snapshot(module):
    return [p.detach().clone() for p in module.parameters()]


def _same(a, b):
    return all(torch.equal(x, y) for x, y in zip(a, b))


def test_freeze_discipline_per_half_step():
    tr = AdversarialTrainer(_data(), TrainConfig(batch_size=16, seed=0, **SMALL))
    for _ in range(3):
        idx = tr.next_batch()
        t = torch.randint(1, tr.sched.T + 1, (len(idx),), generator=tr.rng_theta)
        th, ph = _snapshot(tr.predictor), _snapshot(tr.generator)
        tr.theta_step(idx, t)
        assert _same(ph, _snapshot(tr.generator))
        assert not _same(th, _snapshot(tr.predictor))
        th, ph = _snapshot(tr.predictor), _snapshot(tr.generator)
        tr.phi_step(idx, t)
        assert _same(th, _snapshot(tr.predictor))
        assert not _same(ph, _snapshot(tr.generator))
        assert all(p.requires_grad for p in tr.predictor.parameters())


def test_generator_update_period():
    tr = AdversarialTrainer(_data(), TrainConfig(batch_size=16, generator_update_period=3, **SMALL))
    tr.run(7)
    updated = [not math.isnan(v) for v in tr.history.loss_phi]
    assert updated == [False, False, True, False, False, True, False]


def test_lr_sequence_is_exponential_per_epoch():
    data = _data()
    cfg = TrainConfig(batch_size=32, lr_base=0.01, lr_decay=0.9, **SMALL)
    tr = AdversarialTrainer(data, cfg)
    per_epoch = math.ceil(len(data) / 32)
    tr.run(3 * per_epoch + 1)
    for i, lr in zip(tr.history.iteration, tr.history.lr):
        assert lr == 0.01 * 0.9 ** (i // per_epoch)
    assert tr.opt_theta.param_groups[0]["lr"] == tr.history.lr[-1]


def test_epoch_visits_every_window_once():
    data = _data()
    tr = AdversarialTrainer(data, TrainConfig(batch_size=17, **SMALL))
    seen = []
    for _ in range(tr.iters_per_epoch):
        seen += tr.next_batch().tolist()
    assert sorted(seen) == list(range(len(data)))


def test_zero_lambda_matches_plain_training():
    data = _data()
    cfg = TrainConfig(batch_size=16, lambda_p=0.0, seed=3, **SMALL)
    a = AdversarialTrainer(data, cfg, use_generator=True)
    b = AdversarialTrainer(data, cfg, use_generator=False)
    a.run(25)
    b.run(25)
    np.testing.assert_allclose(a.history.loss_theta, b.history.loss_theta, rtol=0, atol=1e-6)
    for p, q in zip(a.predictor.parameters(), b.predictor.parameters()):
        assert torch.allclose(p, q, atol=1e-6)


def test_loss_decreases_between_quartiles():
    data = _data(n_videos=8, seed=1)[:50]
    assert len(data) == 50
    cfg = TrainConfig(max_iters=200, batch_size=16, seed=0, width=16, depth=2)
    tr = AdversarialTrainer(data, cfg)
    h = tr.run()
    q = len(h.loss_theta) // 4
    assert np.mean(h.loss_theta[:q]) > np.mean(h.loss_theta[-q:])
    assert all(math.isfinite(v) for v in h.grad_norm_theta)
    assert all(torch.isfinite(p).all() for p in tr.predictor.parameters())


def test_training_is_deterministic():
    data = _data()
    cfg = TrainConfig(batch_size=16, seed=5, **SMALL)
    h1 = AdversarialTrainer(data, cfg).run(10)
    h2 = AdversarialTrainer(data, cfg).run(10)
    assert h1.log_lines() == h2.log_lines()


def test_history_log_format():
    tr = AdversarialTrainer(_data(), TrainConfig(batch_size=16, **SMALL))
    lines = tr.run(2).log_lines()
    assert lines[0] == "iter\tloss_theta\tloss_phi\tlr"
    assert len(lines) == 3
    assert all(len(ln.split("\t")) == 4 for ln in lines)


def test_divergence_is_reported():
    data = _data()
    tr = AdversarialTrainer(data, TrainConfig(batch_size=len(data), **SMALL), use_generator=False)
    tr.data[0, 0, 0, 0] = float("nan")
    with pytest.raises(TrainingDiverged, match="iteration 0"):
        tr.run(1)


def test_train_returns_eval_mode_models():
    corpus = synth_corpus(SynthConfig(n_videos=2, anomaly_ratio=0.0))
    pred, gen, hist = train(corpus, TrainConfig(max_iters=3, batch_size=16, **SMALL))
    assert not pred.training and not gen.training
    assert len(hist.loss_theta) == 3
    pred, gen, _ = train(corpus, TrainConfig(max_iters=1, **SMALL), use_generator=False)
    assert gen is None


@pytest.mark.parametrize("kw", [dict(max_iters=0), dict(lr_decay=0.0), dict(lr_decay=1.5),
                                dict(lambda_p=-0.1), dict(lambda_p=float("inf")), dict(k=0)])
def test_invalid_train_config(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)
