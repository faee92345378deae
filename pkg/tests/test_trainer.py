import numpy as np
import pytest

from vicnn import trainer, zoo
from vicnn.checkpoint import MAGIC, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from vicnn.data import SamplePair, prepare
from vicnn.errors import DataError, NumericError, ValidationError
from vicnn.trainer import EarlyStopping, TrainConfig, evaluate_loss, train


def _pairs(n, size=8, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        y = rng.uniform(size=(3, size, size)).astype(np.float32)
        x = np.clip(y + rng.normal(0, 0.1, y.shape), 0, 1).astype(np.float32)
        out.append(SamplePair(x, y, "denoise"))
    return out


def test_config_invariants():
    assert TrainConfig().max_epochs == 100 and TrainConfig().batch_size == 32 and TrainConfig().patience == 2
    for bad in ({"max_epochs": 0}, {"batch_size": 0}, {"patience": 0}):
        with pytest.raises(ValidationError):
            TrainConfig(**bad)


def test_early_stopping_rule():
    es = EarlyStopping(2)
    assert es.update(1, 0.5) == (True, False)
    assert es.update(2, 0.6) == (False, False)
    assert es.update(3, 0.7) == (False, True)
    assert es.best_epoch == 1
    es = EarlyStopping(2)
    es.update(1, 0.5)
    es.update(2, 0.5)  # equal is not an improvement
    assert es.update(3, 0.4) == (True, False)
    assert es.bad == 0


def test_train_returns_epoch1_weights_for_rising_val_series(monkeypatch):
    series = iter([0.5, 0.6, 0.7, 0.8])
    monkeypatch.setattr(trainer, "evaluate_loss", lambda *a, **k: next(series))
    snapshots = []
    spec = zoo.build_base_net(3, 8)
    orig_step = trainer.adam_step

    def spy(params, grads, state):
        orig_step(params, grads, state)
        snapshots.append([p.copy() for p in params])

    monkeypatch.setattr(trainer, "adam_step", spy)
    ck = train(spec, (_pairs(4), _pairs(2, seed=1)), TrainConfig(max_epochs=10, batch_size=4, patience=2))
    assert [h["epoch"] for h in ck.history] == [1, 2, 3]
    assert ck.best_epoch == 1
    for a, b in zip(ck.params, snapshots[0]):
        np.testing.assert_array_equal(a, b)


def test_zero_learning_rate_keeps_params():
    spec = zoo.build_base_net(3, 8)
    from vicnn.engine import init_params

    init = init_params(spec, 42)
    ck = train(spec, (_pairs(6), _pairs(2, seed=1)), TrainConfig(max_epochs=3, batch_size=4, lr=0.0, patience=5),
               init=init)
    for a, b in zip(ck.params, init):
        np.testing.assert_array_equal(a, b)
    vals = [h["val_loss"] for h in ck.history]
    assert len(vals) == 3 and len(set(vals)) == 1


def test_partial_last_batch_is_trained_and_history_bounded():
    spec = zoo.build_base_net(3, 8)
    ck = train(spec, (_pairs(5), _pairs(2, seed=1)), TrainConfig(max_epochs=3, batch_size=2, patience=10))
    assert ck.adam.step == 3 * 3
    assert len(ck.history) <= 3


def test_training_reduces_loss_and_best_is_not_worse_than_final():
    spec = zoo.build_base_net(3, 8)
    tr, va = _pairs(16), _pairs(4, seed=1)
    ck = train(spec, (tr, va), TrainConfig(max_epochs=15, batch_size=4, lr=1e-2, patience=15))
    vals = [h["val_loss"] for h in ck.history]
    assert min(vals) < vals[0]
    assert evaluate_loss(ck.params, spec, va) == pytest.approx(min(vals), rel=1e-9)
    assert evaluate_loss(ck.params, spec, va) <= vals[-1]


def test_training_is_bit_reproducible():
    spec = zoo.build_jain2009(3, 8)
    cfg = TrainConfig(max_epochs=2, batch_size=3, seed=9)
    data = (_pairs(7), _pairs(2, seed=1))
    assert to_bytes(train(spec, data, cfg)) == to_bytes(train(spec, data, cfg))
    other = TrainConfig(max_epochs=2, batch_size=3, seed=10)
    assert to_bytes(train(spec, data, other)) != to_bytes(train(spec, data, cfg))


def test_divergence_raises_with_checkpoint():
    spec = zoo.build_base_net(3, 8)
    bad = _pairs(4)
    bad[0].target[0, 0, 0] = np.nan
    with pytest.raises(NumericError) as exc:
        train(spec, (bad, _pairs(2, seed=1)), TrainConfig(max_epochs=2, batch_size=4))
    assert exc.value.checkpoint.status == "diverged"
    assert exc.value.exit_code == 5


def test_empty_sets_rejected():
    with pytest.raises(DataError):
        train(zoo.build_base_net(3, 8), ([], _pairs(1)), TrainConfig())


def test_checkpoint_roundtrip_is_bit_exact(tmp_path, tiny_corpus):
    ds = prepare(tiny_corpus, "denoise", canvas=16)
    spec = zoo.build_jain2009_pool(3, 16)
    ck = train(spec, ds, TrainConfig(max_epochs=2, batch_size=4))
    assert ck.manifest_digest == ds.digest
    path = save_checkpoint(ck, tmp_path / "m.ckpt")
    blob = path.read_bytes()
    assert blob[:5] == MAGIC and blob[5] == 1
    back = load_checkpoint(path)
    assert to_bytes(back) == blob
    assert back.spec == spec and back.history == ck.history and back.config == ck.config
    for a, b in zip(back.params, ck.params):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_corruption_detected(tmp_path):
    ck = train(zoo.build_base_net(3, 8), (_pairs(2), _pairs(1, seed=1)), TrainConfig(max_epochs=1))
    blob = to_bytes(ck)
    for broken in (b"XXXXX" + blob[5:], blob[:5] + b"\x02" + blob[6:], blob[:-10], blob + b"\x00"):
        with pytest.raises(ValidationError):
            from_bytes(broken)
