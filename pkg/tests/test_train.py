import csv

import numpy as np
import pytest

from inkline import tensor as T
from inkline import train as tr
from inkline.augment import AugmentConfig
from inkline.normalize import NormalizeConfig
from inkline.seq2seq import load_blob
from inkline.tensor import parse_checkpoint

from .gradsuite import tiny_model


def test_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(lr0=0)
    with pytest.raises(ValueError):
        tr.TrainConfig(decay=1.0)
    with pytest.raises(ValueError):
        tr.TrainConfig(patience=0)
    with pytest.raises(ValueError):
        tr.TrainConfig(optimizer="sgd")


def test_adam_first_step_is_lr_times_sign():
    p, g = [np.array([1.0, -2.0, 3.0])], [np.array([0.5, -4.0, 1e-3])]
    new, state = tr.adam_step(p, g, tr.AdamState.zeros_like(p), lr=0.1)
    assert np.allclose(new[0] - p[0], [-0.1, 0.1, -0.1], atol=1e-6)
    assert state.t == 1
    assert np.array_equal(p[0], [1.0, -2.0, 3.0])


def test_adam_matches_reference_over_steps(rng):
    p = rng.normal(size=4)
    m, v = np.zeros(4), np.zeros(4)
    params, state = [p.copy()], tr.AdamState.zeros_like([p])
    for t in range(1, 6):
        g = rng.normal(size=4)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p = p - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        params, state = tr.adam_step(params, [g], state, 0.01)
    assert np.allclose(params[0], p)


def test_rmsprop_zero_gradient_and_sign():
    p = [np.array([1.0, 1.0])]
    new, _ = tr.rmsprop_step(p, [np.zeros(2)], tr.RMSPropState.zeros_like(p), 0.01)
    assert np.array_equal(new[0], p[0])
    new, _ = tr.rmsprop_step(p, [np.array([1e3, -1e-3])], tr.RMSPropState.zeros_like(p), 0.01)
    # first step moves by lr / sqrt(1 - rho) against the gradient sign
    assert np.allclose(new[0] - p[0], [-0.01 / np.sqrt(0.1), 0.01 / np.sqrt(0.1)], rtol=1e-4)


def test_optimizer_alignment_errors():
    with pytest.raises(ValueError):
        tr.adam_step([np.ones(1)], [], tr.AdamState.zeros_like([np.ones(1)]), 0.1)


def test_lr_schedule():
    cfg = tr.TrainConfig()
    for e in (0, 1, 10, 299):
        assert tr.lr_at(e, cfg) == pytest.approx(0.001 * 0.98 ** e, rel=1e-12)
    with pytest.raises(ValueError):
        tr.lr_at(-1, cfg)


def test_l2_gradient(rng):
    params = [T.Parameter(rng.normal(size=(2, 3)), "a"), T.Parameter(rng.normal(size=4), "b")]
    T.backward(tr.l2_penalty(params, 0.3))
    for p in params:
        assert np.allclose(p.grad, 2 * 0.3 * p.data)
    assert T.gradcheck(lambda: tr.l2_penalty(params, 0.3), params) < 1e-6


@pytest.mark.parametrize("trace, patience, stop, best", [
    ([0.9, 0.8, 0.7, 0.6, 0.5] + [0.5] * 30, 20, 24, 4),
    ([0.9, 0.5, 0.7, 0.5, 0.6, 0.8], 3, 4, 1),
    ([1.0, 0.9, 0.8, 0.7], 2, None, 3),
])
def test_early_stopper_traces(trace, patience, stop, best):
    s = tr.EarlyStopper(patience)
    stopped = None
    for e, v in enumerate(trace):
        s.update(e, v)
        if s.should_stop:
            stopped = e
            break
    assert stopped == stop and s.best_epoch == best


def tiny_data(n=4, height=8, width=12, seed=0):
    rng = np.random.default_rng(seed)
    texts = ["ab", "b", "a", "ba", "aab", "bb"][:n]
    return tr.WordSet(rng.random((n, height, width)), texts)


def scripted_loop(monkeypatch, trace, **kw):
    """Run the real loop with a validation WER trace in place of decoding."""
    values = iter(trace)
    monkeypatch.setattr(tr, "evaluate", lambda *a, **k: tr.EvalResult(0.0, next(values), []))
    model = tiny_model()
    data = tiny_data()
    cfg = tr.TrainConfig(batch_size=2, augment=False, max_epochs=len(trace), dropout=0.0, **kw)
    return tr.train_loop(model, data, data, cfg), model


def test_loop_keeps_minimum_validation_checkpoint(monkeypatch):
    trace = [0.9, 0.6, 0.3, 0.5, 0.4, 0.3, 0.7, 0.8]
    res, model = scripted_loop(monkeypatch, trace, patience=4)
    assert res.best_epoch == 2 and res.best_val_wer == 0.3
    assert res.stop_reason == "patience" and len(res.history) == 7
    header, _, _ = parse_checkpoint(res.best_checkpoint)
    assert header["epoch"] == 2
    # the model is left holding the best weights
    assert tr.model_blob(model, {"epoch": 2, "val_wer": 0.3}) == res.best_checkpoint


def test_loop_frozen_from_epoch_five(monkeypatch):
    trace = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5] + [0.5] * 40
    res, _ = scripted_loop(monkeypatch, trace, patience=20)
    assert res.best_epoch == 5
    assert res.history[-1].epoch == 25 and res.stop_reason == "patience"


def test_evaluate_empty_predictions(monkeypatch):
    monkeypatch.setattr(tr, "predict", lambda model, images, *a, **k: [""] * len(images))
    res = tr.evaluate(tiny_model(), tiny_data())
    assert res.cer == 1.0 and res.wer == 1.0 and len(res.records) == 4


def test_evaluate_flags_unencodable_reference(monkeypatch):
    monkeypatch.setattr(tr, "predict", lambda model, images, *a, **k: ["ab"] * len(images))
    data = tr.WordSet(np.zeros((2, 8, 12)), ["ab", "zz"])
    res = tr.evaluate(tiny_model(), data)
    assert res.records[0].error is None and res.records[1].error is not None
    assert res.wer == 0.5


def test_prepare_image_shapes_and_polarity():
    p = np.ones((40, 100))
    p[10:30, 20:80:6] = 0.0
    from inkline.imaging import GrayImage
    cfg = NormalizeConfig(target_height=24, target_width=64)
    for norm in (True, False):
        out = tr.prepare_image(GrayImage(p), cfg, norm)
        assert out.shape == (24, 64)
        assert out.max() > 0.5 and np.median(out) < 0.5


def test_augment_batch_is_order_free():
    data = tiny_data()
    cfg = AugmentConfig()
    a = tr.augment_batch(data.images, [2, 0], 1, cfg, 9)
    b = tr.augment_batch(data.images, [0, 2], 1, cfg, 9)
    assert np.array_equal(a[0], b[1]) and np.array_equal(a[1], b[0])


def run_tiny(seed=0, **kw):
    model = tiny_model(seed=seed)
    data = tiny_data()
    cfg = tr.TrainConfig(batch_size=2, max_epochs=3, seed=seed, dropout=0.3, **kw)
    aug = AugmentConfig(elastic_spacing=4, projective_jitter=1.0)
    return tr.train_loop(model, data, data, cfg, aug)


def test_training_is_deterministic():
    a, b = run_tiny(), run_tiny()
    assert a.best_checkpoint == b.best_checkpoint
    assert [h.loss for h in a.history] == [h.loss for h in b.history]
    assert run_tiny(seed=1).best_checkpoint != a.best_checkpoint


def test_rmsprop_training_runs():
    res = run_tiny(optimizer="rmsprop", l2=1e-3)
    assert len(res.history) == 3 and all(np.isfinite(h.loss) for h in res.history)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    with pytest.raises(tr.TrainingDiverged, match="epoch 0"):
        model = tiny_model()
        model.out_w.data = model.out_w.data * np.inf
        data = tiny_data()
        tr.train_loop(model, data, data, tr.TrainConfig(batch_size=2, max_epochs=1, augment=False))


def test_unencodable_training_text():
    data = tr.WordSet(np.zeros((1, 8, 12)), ["zz"])
    with pytest.raises(ValueError, match="not encodable"):
        tr.train_loop(tiny_model(), data, data, tr.TrainConfig(max_epochs=1))


def test_stats_csv(tmp_path):
    res = run_tiny()
    tr.write_stats_csv(res.history, tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert len(rows) == 3 and list(rows[0]) == list(tr.STATS_COLUMNS)
    assert float(rows[1]["lr"]) == tr.lr_at(1, tr.TrainConfig())


def test_load_blob_restores_weights():
    res = run_tiny()
    fresh = tiny_model(seed=7)
    header = load_blob(fresh, res.best_checkpoint)
    _, arrays, _ = parse_checkpoint(res.best_checkpoint)
    assert header["epoch"] == res.best_epoch
    assert all(np.array_equal(p.data, arrays[p.name]) for p in fresh.parameters())
