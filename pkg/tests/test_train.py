import numpy as np
import pytest

from hopmix.data import Dataset, gen_synthetic
from hopmix.mixer import MixerConfig, MixerModel
from hopmix.train import (
    ConfigMismatch,
    MetricsRow,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    read_metrics,
    train,
    write_metrics,
)
from oracles import binomial_interval

TINY = MixerConfig(image_size=8, patch_size=4, channels_in=1, hidden_dim=8, depth=1, token_dim=4,
                   channel_dim=16, num_classes=3)


@pytest.fixture(scope="module")
def sets():
    return (gen_synthetic(3, 10, (1, 8, 8), 0.1, 0), gen_synthetic(3, 4, (1, 8, 8), 0.1, 0, "val"))


def cfg(**kw):
    base = dict(model=TINY, lr=3e-3, epochs=2, batch_size=8)
    return TrainConfig(**{**base, **kw})


def test_binomial_interval_frozen():
    assert binomial_interval(500, 0.1) == (34, 68)
    assert binomial_interval(1000, 0.1) == (76, 125)


def test_zero_lr_leaves_weights_unchanged(sets):
    res = train(cfg(lr=0.0, weight_decay=0.0), *sets)
    fresh = MixerModel(TINY)
    for (name, a), (_, b) in zip(res.model.named_parameters(), fresh.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=name)


def test_training_changes_weights_and_records_history(sets):
    res = train(cfg(epochs=3, eval_every=2), *sets)
    assert [r.epoch for r in res.history] == [2, 3]
    assert [e for e, _, _ in res.kappa] == [2, 3]
    assert all(r.seconds is None for r in res.history)
    assert len(res.timing) == 3
    fresh = MixerModel(TINY)
    assert not np.array_equal(res.model.stem.weight.data, fresh.stem.weight.data)


def test_same_seed_same_result(sets):
    a = train(cfg(), *sets)
    b = train(cfg(), *sets)
    assert [r.as_list() for r in a.history] == [r.as_list() for r in b.history]
    c = train(cfg(seed=1), *sets)
    assert [r.as_list() for r in a.history] != [r.as_list() for r in c.history]


def test_history_matches_reevaluation(sets):
    res = train(cfg(), *sets)
    model = res.last.build_model()
    last = res.history[-1]
    assert evaluate(model, sets[0]).accuracy == last.train_acc
    assert evaluate(model, sets[1]).loss == last.val_loss


def test_untrained_model_is_at_chance_on_random_labels():
    k, n = 10, 500
    ds = gen_synthetic(k, n // k, (1, 8, 8), 0.1, 0)
    ds = Dataset(ds.images, np.random.default_rng(1).integers(0, k, n), k)
    model = MixerModel(TINY.with_(num_classes=k))
    model.set_input_stats(*ds.normalization_stats())
    hits = round(evaluate(model, ds).accuracy * n)
    lo, hi = binomial_interval(n, 1 / k)
    assert lo <= hits <= hi


def test_evaluation_is_permutation_invariant(sets):
    model = MixerModel(TINY)
    ds = sets[1]
    perm = np.random.default_rng(2).permutation(len(ds))
    a, b = evaluate(model, ds), evaluate(model, ds.subset(perm))
    assert a.loss == b.loss and a.accuracy == b.accuracy
    np.testing.assert_array_equal(a.per_class, b.per_class)
    np.testing.assert_array_equal(a.predictions[perm], b.predictions)


def test_evaluation_restores_training_mode(sets):
    model = MixerModel(TINY)
    model.unfreeze()
    evaluate(model, sets[1])
    assert model.training
    assert not any(b.token_mix.fc_sn1.frozen for b in model.blocks)


def test_divergence_is_reported(sets):
    with np.errstate(all="ignore"):
        with pytest.raises(TrainingDiverged) as info:
            train(cfg(lr=1e200), *sets)
    assert "lr=1e+200" in str(info.value) and "largest grad norms" in str(info.value)


def test_mismatched_data_rejected(sets):
    other = gen_synthetic(4, 2, (1, 8, 8), 0.1, 0)
    with pytest.raises(ConfigMismatch):
        train(cfg(), other, sets[1])
    with pytest.raises(ConfigMismatch):
        evaluate(MixerModel(TINY), gen_synthetic(3, 2, (1, 4, 4), 0.1, 0))


def test_invalid_train_config():
    with pytest.raises(ValueError):
        cfg(lr=-1.0)
    with pytest.raises(ValueError):
        cfg(label_smoothing=1.0)


def test_metrics_csv_round_trip(tmp_path):
    rows = [MetricsRow(1, 0.5, 0.25, 0.75, 1 / 3), MetricsRow(2, 0.1, 1.0, 0.2, 0.9, 12.5)]
    write_metrics(rows, tmp_path / "m.csv")
    assert read_metrics(tmp_path / "m.csv") == rows
    assert (tmp_path / "m.csv").read_text().splitlines()[1].endswith(",")


def test_outputs_written(sets, tmp_path):
    train(cfg(out_dir=str(tmp_path / "run")), *sets)
    names = {p.name for p in (tmp_path / "run").iterdir()}
    assert {"metrics.csv", "metrics.png", "kappa.csv", "kappa.png", "timing.csv", "best.ckpt",
            "last.ckpt"} <= names
