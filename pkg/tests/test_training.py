import numpy as np
import pytest

from mdpp import training
from mdpp.data_model import MultiViewSequence, Summary
from mdpp.encoder import init_params, to_vector
from mdpp.errors import ConfigError, NumericError, ValidationError
from mdpp.training import (
    AdamState,
    SplitPlan,
    TrainConfig,
    TrainingExample,
    adam_step,
    round_robin_splits,
    targets_from_summary,
    train,
)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(iterations=0)
    with pytest.raises(ConfigError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(lam=-0.1)


def test_adam_matches_reference_updates():
    rng = np.random.default_rng(0)
    config = TrainConfig(learning_rate=0.01)
    vec = rng.normal(size=12)
    expected = vec.copy()
    state = AdamState.zeros(vec.size)
    m = np.zeros(12)
    v = np.zeros(12)
    for step in range(1, 6):
        grad = rng.normal(size=12)
        vec = adam_step(state, vec, grad.copy(), config)
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad**2
        m_hat = m / (1 - 0.9**step)
        v_hat = v / (1 - 0.999**step)
        expected -= 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
        np.testing.assert_allclose(vec, expected, rtol=1e-12)


def test_adam_rejects_non_finite_gradient():
    state = AdamState.zeros(3)
    grad = np.array([0.0, np.nan, 1.0])
    with pytest.raises(NumericError):
        adam_step(state, np.zeros(3), grad, TrainConfig())


def test_round_robin_split_counts():
    plans = round_robin_splits(["a", "b", "c"])
    assert len(plans) == 6
    assert len(round_robin_splits([f"c{i}" for i in range(6)])) == 30
    for plan in plans:
        assert plan.val_collection != plan.test_collection
        parts = {*plan.train_collections, plan.val_collection, plan.test_collection}
        assert parts == {"a", "b", "c"}
    assert len({(p.val_collection, p.test_collection) for p in plans}) == 6


def test_round_robin_rejects_bad_ids():
    with pytest.raises(ConfigError):
        round_robin_splits(["a", "b"])
    with pytest.raises(ConfigError):
        round_robin_splits(["a", "a", "b"])


def _example(rng, m=2, n=8, d=4, steps=(1, 5)):
    seq = MultiViewSequence(
        sequence_id="s", features=rng.normal(size=(m, n, d)).astype(np.float32)
    )
    y = np.zeros((m, n), dtype=np.uint8)
    for t in steps:
        y[int(rng.integers(m)), t] = 1
    derived = tuple(int(t) for t in np.flatnonzero(y.any(axis=0)))
    return TrainingExample(sequence=seq, target_views=y, target_steps=derived)


def test_training_example_consistency():
    rng = np.random.default_rng(1)
    seq = MultiViewSequence(
        sequence_id="s", features=rng.normal(size=(2, 6, 3)).astype(np.float32)
    )
    y = np.zeros((2, 6), dtype=np.uint8)
    y[0, 2] = 1
    with pytest.raises(ValidationError):
        TrainingExample(sequence=seq, target_views=y, target_steps=(2, 3))
    with pytest.raises(ValidationError):
        TrainingExample(sequence=seq, target_views=y[:, :5], target_steps=(2,))


def test_targets_from_summary():
    rng = np.random.default_rng(2)
    seq = MultiViewSequence(
        sequence_id="s", features=rng.normal(size=(2, 6, 3)).astype(np.float32)
    )
    summary = Summary(selections=((0, 1), (1, 1), (1, 4)))
    ex = targets_from_summary(seq, summary)
    assert ex.target_steps == (1, 4)
    assert ex.target_views[0, 1] == 1 and ex.target_views[1, 4] == 1
    assert ex.target_views.sum() == 3


def _collections(seed=0):
    rng = np.random.default_rng(seed)
    return {
        cid: [_example(rng) for _ in range(2)] for cid in ("c0", "c1", "c2")
    }


def test_train_runs_and_is_deterministic():
    collections = _collections()
    plan = round_robin_splits(sorted(collections))[0]
    config = TrainConfig(iterations=3, batch_size=3, seed=5)
    initial = init_params(4, hidden_size=3, output_dim=4, seed=5)
    result = train(initial, collections, plan, config)

    assert len(result.history) == 3
    assert result.best_val_loss == min(e.val_loss for e in result.history)
    # earliest epoch wins ties
    best = next(e.epoch for e in result.history if e.val_loss == result.best_val_loss)
    assert result.best_epoch == best

    rerun = train(initial, _collections(), plan, config)
    np.testing.assert_array_equal(to_vector(result.params), to_vector(rerun.params))
    assert [e.val_loss for e in rerun.history] == [e.val_loss for e in result.history]


def test_train_rejects_bad_plans():
    collections = _collections()
    config = TrainConfig(iterations=1)
    initial = init_params(4, hidden_size=3, output_dim=4)
    with pytest.raises(ConfigError):
        train(initial, collections,
              SplitPlan(train_collections=("nope",), val_collection="c1", test_collection="c2"),
              config)
    with pytest.raises(ConfigError):
        train(initial, collections,
              SplitPlan(train_collections=(), val_collection="c1", test_collection="c2"),
              config)


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(4, hidden_size=3, output_dim=4, seed=9)
    path = tmp_path / "model.ckpt"
    training.save_checkpoint(path, params, extra={"best_epoch": 2})
    loaded, doc = training.load_checkpoint(path)
    np.testing.assert_array_equal(to_vector(loaded), to_vector(params))
    assert (loaded.input_dim, loaded.hidden_size, loaded.output_dim) == (4, 3, 4)
    assert doc["extra"]["best_epoch"] == 2
