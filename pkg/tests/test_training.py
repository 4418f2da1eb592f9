"""Training loop: config validation, budget feasibility, mask-holding
schedule, metrics stream, abort handling, and final subnetwork selection."""

import json

import numpy as np
import pytest

from sparsetrain.data import synth_blobs
from sparsetrain.errors import (ConfigError, DimensionError,
                                NonFiniteLossError)
from sparsetrain.models import build_model, make_mlp
from sparsetrain.structure import SeededSampler, derive_seed
from sparsetrain.training import FinalReport, MetricsRecord, TrainConfig, Trainer

from tests.conftest import BLOBS_TRAIN_PARAMS


def _blobs(n_per_class=500, seed=42):
    return synth_blobs(classes=2, dims=2, n_per_class=n_per_class,
                       separation=6.0, seed=seed)


def _config(**overrides):
    params = dict(BLOBS_TRAIN_PARAMS)
    params.update(overrides)
    return TrainConfig(**params)


def _trainer(**overrides):
    data = _blobs()
    spec = build_model("mlp_tiny", data.input_shape, data.classes)
    return Trainer(_config(**overrides), spec, data)


# ---------------------------------------------------------------------------
# configuration validation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("field,value", [
    ("remain_ratio", 0.0),
    ("remain_ratio", 1.5),
    ("weight_lr", 0.0),
    ("structure_lr", -0.01),
    ("epochs", 0),
    ("batch_size", 0),
    ("resample_interval", 0),
    ("eval_samples", 0),
    ("eps", 0.0),
    ("eps", 0.5),
    ("log_every", 0),
])
def test_config_rejects_bad_values_naming_the_key(field, value):
    with pytest.raises(ConfigError, match=rf"train\.{field}"):
        _config(**{field: value})


def test_config_rejects_ratio_at_or_below_eps():
    with pytest.raises(ConfigError, match=r"train\.remain_ratio.*eps"):
        _config(remain_ratio=0.005, eps=0.01)


# ---------------------------------------------------------------------------
# feasibility and structure dynamics
# ---------------------------------------------------------------------------

def test_structure_stays_inside_budget_every_logged_iteration(blobs_run):
    trainer = blobs_run["trainer"]
    budget = trainer.structure.budget
    assert len(blobs_run["records"]) > 0
    for record in blobs_run["records"]:
        assert record.s_sum <= budget + 1e-9
    values = trainer.structure.values
    eps = trainer.config.eps
    assert values.min() >= eps - 1e-12
    assert values.max() <= 1.0 - eps + 1e-12


def test_zero_structure_lr_freezes_the_keep_probabilities():
    trainer = _trainer(structure_lr=0.0, epochs=2)
    start = trainer.structure.values.copy()
    np.testing.assert_array_equal(start, np.full_like(start, 0.5))
    trainer.run()
    np.testing.assert_array_equal(trainer.structure.values, start)


def test_full_budget_keeps_probabilities_at_the_ceiling():
    trainer = _trainer(remain_ratio=1.0, epochs=5)
    trainer.run()
    ceiling = 1.0 - trainer.config.eps
    assert trainer.structure.values.min() >= 0.95
    assert trainer.structure.values.max() <= ceiling + 1e-12
    assert trainer.evaluate(np.ones(trainer.spec.num_channels, dtype=np.uint8)) >= 0.95


# ---------------------------------------------------------------------------
# mask resampling schedule
# ---------------------------------------------------------------------------

class _CountingSampler(SeededSampler):
    def __init__(self, seed):
        super().__init__(seed)
        self.calls = 0

    def sample(self, structure):
        self.calls += 1
        return super().sample(structure)


@pytest.mark.parametrize("interval,expected_calls", [
    # 800 train points / batch 100 = 8 iterations; one fresh m2 per iteration
    # plus ceil(8 / interval) held-mask draws.
    (1, 16),
    (3, 11),
    (8, 9),
])
def test_resample_interval_controls_mask_draws(interval, expected_calls):
    trainer = _trainer(resample_interval=interval, epochs=1, batch_size=100)
    counting = _CountingSampler(derive_seed(trainer.config.seed, "masks"))
    trainer.sampler = counting
    trainer.run()
    assert counting.calls == expected_calls


def test_held_mask_is_constant_between_redraws():
    seen = []

    class Recorder(_CountingSampler):
        def sample(self, structure):
            mask = super().sample(structure)
            seen.append(mask)
            return mask

    trainer = _trainer(resample_interval=4, epochs=1, batch_size=100,
                       structure_lr=0.0)
    trainer.sampler = Recorder(derive_seed(trainer.config.seed, "masks"))
    held = []
    # replay the epoch's draw schedule while snapshotting the held mask
    from sparsetrain.data import batches, num_batches

    cfg = trainer.config
    shuffle = derive_seed(trainer._data_seed, 0)
    for bx, by in batches(trainer.data, cfg.batch_size, shuffle):
        if trainer.held_left <= 0:
            from sparsetrain.structure import sample_mask
            trainer.held_mask = sample_mask(trainer.structure, trainer.sampler)
            trainer.held_left = cfg.resample_interval
        trainer.held_left -= 1
        held.append(trainer.held_mask.copy())
    assert num_batches(trainer.data, cfg.batch_size) == 8
    for i in (1, 2, 3):
        np.testing.assert_array_equal(held[0], held[i])
    for i in (5, 6, 7):
        np.testing.assert_array_equal(held[4], held[i])


# ---------------------------------------------------------------------------
# metrics stream
# ---------------------------------------------------------------------------

def test_metrics_record_json_key_order():
    record = MetricsRecord(epoch=0, iteration=1, train_loss=0.5,
                           eval_accuracy=None, s_sum=4.0, active_channels=3,
                           flops_iteration=10.0, savings_iteration=2.0,
                           savings_cumulative=2.0)
    decoded = json.loads(record.to_json())
    assert list(decoded) == ["epoch", "iteration", "train_loss",
                             "eval_accuracy", "s_sum", "active_channels",
                             "flops_iteration", "savings_iteration",
                             "savings_cumulative"]
    assert decoded["eval_accuracy"] is None


def test_eval_accuracy_is_null_until_first_epoch_completes():
    records = []
    trainer = _trainer(epochs=2, batch_size=100)
    trainer.run(sink=records.append)
    assert len(records) == 16
    first_epoch = [r for r in records if r.epoch == 0]
    assert all(r.eval_accuracy is None for r in first_epoch[:-1])
    assert isinstance(first_epoch[-1].eval_accuracy, float)
    second_epoch = [r for r in records if r.epoch == 1]
    assert all(r.eval_accuracy is not None for r in second_epoch)


def test_log_every_thins_the_stream_but_keeps_epoch_ends():
    records = []
    trainer = _trainer(epochs=2, batch_size=100, log_every=3)
    trainer.run(sink=records.append)
    iterations = [r.iteration for r in records]
    # multiples of 3, plus the two epoch-end iterations 8 and 16
    assert iterations == [3, 6, 8, 9, 12, 15, 16]
    assert records[2].eval_accuracy is not None


def test_savings_cumulative_matches_flop_totals():
    records = []
    trainer = _trainer(epochs=1, batch_size=100)
    trainer.run(sink=records.append)
    expected = trainer.cumulative_dense_flops / trainer.cumulative_sparse_flops
    np.testing.assert_allclose(records[-1].savings_cumulative, expected, rtol=1e-12)
    assert records[-1].savings_iteration > 1.0


# ---------------------------------------------------------------------------
# aborts and input validation
# ---------------------------------------------------------------------------

def test_nonfinite_loss_aborts_with_snapshot(tmp_path):
    trainer = _trainer(epochs=1)
    trainer.snapshot_dir = str(tmp_path)
    first = next(entry for entry in trainer.params.layers if entry is not None)
    first["w"][0] = np.nan
    with pytest.raises(NonFiniteLossError) as excinfo:
        trainer.run()
    path = excinfo.value.snapshot_path
    assert path is not None and path.endswith("abort_snapshot.npz")
    restored = Trainer.restore(path, trainer.data)
    assert restored.iteration == trainer.iteration
    np.testing.assert_array_equal(restored.structure.values,
                                  trainer.structure.values)


def test_nonfinite_loss_without_snapshot_dir(tmp_path):
    trainer = _trainer(epochs=1)
    first = next(entry for entry in trainer.params.layers if entry is not None)
    first["w"][:] = np.nan
    with pytest.raises(NonFiniteLossError) as excinfo:
        trainer.run()
    assert excinfo.value.snapshot_path is None


def test_trainer_rejects_shape_and_class_mismatches():
    data = _blobs()
    with pytest.raises(DimensionError, match="input"):
        Trainer(_config(), make_mlp((3,), 2, hidden=(8,)), data)
    with pytest.raises(DimensionError, match="classes"):
        Trainer(_config(), make_mlp((2,), 4, hidden=(8,)), data)


# ---------------------------------------------------------------------------
# finalize
# ---------------------------------------------------------------------------

def test_finalize_is_deterministic_and_reports_best_candidate(blobs_run):
    trainer = blobs_run["trainer"]
    report = blobs_run["report"]
    again = trainer.finalize()
    assert report.to_dict() == again.to_dict()
    assert report.best_index == int(np.argmin(report.candidate_losses))
    assert len(report.candidate_losses) == trainer.config.eval_samples
    assert report.active_channels == int(report.mask.sum())
    assert report.total_channels == trainer.spec.num_channels


def test_finalize_single_candidate():
    trainer = _trainer(epochs=2, eval_samples=1)
    trainer.run()
    report = trainer.finalize()
    assert report.best_index == 0
    assert len(report.candidate_losses) == 1


def test_final_accuracy_close_to_last_training_eval(blobs_run):
    trainer = blobs_run["trainer"]
    report = blobs_run["report"]
    assert abs(report.eval_accuracy - trainer.last_eval) <= 0.02


def test_report_table_mentions_the_headline_numbers(blobs_run):
    table = blobs_run["report"].table()
    for needle in ("<- best", "eval accuracy", "active channels",
                   "params kept", "forward flops ratio", "training savings"):
        assert needle in table


def test_report_round_trips_through_json(blobs_run):
    payload = blobs_run["report"].to_dict()
    decoded = json.loads(json.dumps(payload))
    assert decoded == payload
