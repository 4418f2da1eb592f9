"""Shared fixtures: the two shipped training setups, run once per session.

The parameter values here mirror configs/blobs_mlp.ini and
configs/smallimg_mlp.ini; tests that gate on end-to-end behavior read these
fixtures instead of re-training.
"""

import time

import pytest

from sparsetrain.data import ensure_smallimg, synth_blobs
from sparsetrain.models import build_model
from sparsetrain.training import TrainConfig, Trainer

BLOBS_DATA_PARAMS = dict(classes=2, dims=2, n_per_class=500, separation=6.0, seed=42)
BLOBS_TRAIN_PARAMS = dict(remain_ratio=0.5, alpha=0.5, weight_lr=0.1,
                          structure_lr=0.012, epochs=30, batch_size=32, seed=42)

SMALLIMG_DATA_PARAMS = dict(n_train=10000, n_eval=2000, side=16, seed=7,
                            noise=0.5, max_shift=2)
SMALLIMG_TRAIN_PARAMS = dict(remain_ratio=0.5, alpha=0.5, weight_lr=0.1,
                             structure_lr=0.012, epochs=20, batch_size=100, seed=42)


def _run(config, model_id, data):
    spec = build_model(model_id, data.input_shape, data.classes)
    trainer = Trainer(config, spec, data)
    records = []
    start = time.monotonic()
    trainer.run(sink=records.append)
    elapsed = time.monotonic() - start
    report = trainer.finalize()
    return {"trainer": trainer, "report": report, "records": records,
            "elapsed": elapsed}


@pytest.fixture(scope="session")
def blobs_data():
    return synth_blobs(**BLOBS_DATA_PARAMS)


@pytest.fixture(scope="session")
def blobs_run(blobs_data):
    return _run(TrainConfig(**BLOBS_TRAIN_PARAMS), "mlp_tiny", blobs_data)


@pytest.fixture(scope="session")
def smallimg_dir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("smallimg-data"))


@pytest.fixture(scope="session")
def smallimg_data(smallimg_dir):
    return ensure_smallimg(smallimg_dir, **SMALLIMG_DATA_PARAMS)


@pytest.fixture(scope="session")
def smallimg_run(smallimg_data):
    return _run(TrainConfig(**SMALLIMG_TRAIN_PARAMS), "mlp_small", smallimg_data)


@pytest.fixture(scope="session")
def smallimg_run_interval50(smallimg_data):
    config = TrainConfig(resample_interval=50, **SMALLIMG_TRAIN_PARAMS)
    return _run(config, "mlp_small", smallimg_data)
