"""
Tests for the training loop, inference stripping and checkpoints.
"""
import numpy as np
import pytest

from mpns_lab import model as mm
from mpns_lab.files.checkpoint import load_checkpoint, save_checkpoint
from mpns_lab.losses import LossBreakdown
from mpns_lab.synthgen import GenParams, generate_dataset
from mpns_lab.trainer import TrainConfig, batch_schedule, check_divergence, inference_model, train
from mpns_lab.utils import DivergenceError

MODEL = mm.ModelConfig(
    rep_dim_invariant=4,
    rep_dim_specific=4,
    hidden_widths=(16,),
    predictor_hidden_widths=(8,),
    discriminator_hidden_widths=(8,),
)


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(GenParams(d=6, seed=2), 512)


@pytest.fixture(scope="module")
def record(dataset):
    return train(MODEL, TrainConfig(epochs=10, batch_size=64, seed=1), dataset, progress=False)


def test_one_breakdown_per_epoch(record):
    assert len(record.breakdowns) == 10
    for breakdown in record.breakdowns:
        assert all(np.isfinite(v) for _, v in breakdown.items())
    assert record.wall_clock >= 0.0
    assert record.bundle.metadata == {"mode": "full_mpns", "seed": 1, "s": 0.0, "epochs": 10}


def test_total_loss_decreases(record):
    assert record.breakdowns[-1].total < record.breakdowns[0].total


def test_input_widths_come_from_data(record):
    assert record.bundle.config.input_dims == (16, 16)


def test_training_is_deterministic(dataset):
    config = TrainConfig(epochs=2, batch_size=64, seed=5)
    a = train(MODEL, config, dataset, progress=False)
    b = train(MODEL, config, dataset, progress=False)
    assert a.breakdowns == b.breakdowns
    for key, value in a.bundle.params.items():
        np.testing.assert_array_equal(value, b.bundle.params[key])


def test_wo_pns_leaves_complement_and_discriminator_at_init(dataset):
    record = train(MODEL, TrainConfig(epochs=2, batch_size=64, seed=3, mode="wo_pns"), dataset, progress=False)
    initial = mm.init_bundle(record.bundle.config, 3)
    for key, value in record.bundle.params.items():
        if key.startswith("extractor/complement/") or key.startswith(mm.DISCRIMINATOR):
            np.testing.assert_array_equal(value, initial.params[key])
    changed = "extractor/primary/m1/layer0/W"
    assert not np.array_equal(record.bundle.params[changed], initial.params[changed])


def test_modes_share_initialisation_and_schedule(dataset):
    full = train(MODEL, TrainConfig(epochs=1, batch_size=64, seed=4), dataset, progress=False)
    ablated = train(MODEL, TrainConfig(epochs=1, batch_size=64, seed=4, mode="wo_pns"), dataset, progress=False)
    assert full.breakdowns[0].batches == ablated.breakdowns[0].batches == 8


def test_fixed_complement_labels(dataset):
    record = train(
        MODEL, TrainConfig(epochs=2, batch_size=64, complement_labels="fixed"), dataset, progress=False
    )
    assert len(record.breakdowns) == 2


def test_inference_model_predicts_identically(record, dataset):
    stripped = inference_model(record)
    assert stripped.parameter_count() < record.bundle.parameter_count()
    assert stripped.inference_only
    expected = mm.predict(record.bundle, dataset.modalities)
    np.testing.assert_array_equal(mm.predict(stripped, dataset.modalities), expected)


def test_checkpoint_round_trip(record, dataset, tmpdir):
    path = str(tmpdir.join("models", "full", "model.ckpt"))
    save_checkpoint(record.bundle, path)
    with open(path) as f:
        assert f.readline() == "MPNS-CHECKPOINT v1\n"
    loaded = load_checkpoint(path)
    assert loaded.config == record.bundle.config
    assert loaded.metadata == record.bundle.metadata
    np.testing.assert_array_equal(mm.predict(loaded, dataset.modalities), mm.predict(record.bundle, dataset.modalities))
    for key, value in record.bundle.buffers.items():
        np.testing.assert_array_equal(loaded.buffers[key], value)


def test_stripped_checkpoint_round_trip(record, tmpdir):
    path = str(tmpdir.join("model.ckpt.gz"))
    save_checkpoint(inference_model(record), path)
    loaded = load_checkpoint(path)
    assert loaded.inference_only
    assert not loaded.has_component(mm.DISCRIMINATOR)


def test_training_log(dataset, tmpdir):
    path = tmpdir.join("train_log.csv")
    train(MODEL, TrainConfig(epochs=3, batch_size=64), dataset, log_path=str(path), progress=False)
    lines = path.read().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("epoch,l_pred,l_dec,l_inv_1")
    assert lines[3].startswith("3,")


def test_divergence_is_reported():
    breakdown = LossBreakdown(
        l_pred=0.5, l_dec=0.1, l_inv=[0.5, 0.5], l_spec=[0.5, float("nan")], lbar_pred=0.7,
        lbar_inv=[0.7, 0.7], lbar_spec=[0.7, 0.7], l_inv_c=[0.3, 0.3], l_spec_c=[0.3, 0.3], l_adv=2.7, total=1.0,
    )
    with pytest.raises(DivergenceError) as excinfo:
        check_divergence(breakdown, 4)
    assert excinfo.value.term == "l_spec_2"
    assert excinfo.value.epoch == 4
    assert "l_spec_2" in str(excinfo.value)

    breakdown.l_spec[1] = 2e6
    with pytest.raises(DivergenceError):
        check_divergence(breakdown, 1)


def test_batch_schedule_drops_single_row():
    batches = batch_schedule(129, 64, np.random.default_rng(0))
    assert [len(b) for b in batches] == [64, 64]
    assert sorted(np.concatenate(batches).tolist()) != list(range(129))
    assert [len(b) for b in batch_schedule(130, 64, np.random.default_rng(0))] == [64, 64, 2]


@pytest.mark.parametrize("kwargs", [
    {"epochs": 0},
    {"batch_size": 1},
    {"mode": "everything"},
    {"complement_labels": "sometimes"},
    {"learning_rate": 0.0},
    {"adversary": "minimax"},
])
def test_invalid_train_config(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_training_needs_two_samples():
    with pytest.raises(ValueError):
        train(MODEL, TrainConfig(epochs=1), generate_dataset(GenParams(d=6), 1), progress=False)


@pytest.mark.parametrize("adversary", ["confusion", "reversal"])
def test_unequal_representation_widths_train(dataset, adversary):
    model = mm.ModelConfig(
        rep_dim_invariant=3,
        rep_dim_specific=6,
        hidden_widths=(16,),
        predictor_hidden_widths=(8,),
        discriminator_hidden_widths=(8,),
    )
    config = TrainConfig(epochs=2, batch_size=64, dec_ortho_weight=1.0, adversary=adversary)
    record = train(model, config, dataset, progress=False)
    assert len(record.breakdowns) == 2
    assert all(np.isfinite(v) for _, v in record.breakdowns[-1].items())
    reps = mm.representations(record.bundle, dataset.modalities)
    assert reps[0][0].shape == (len(dataset), 3)
    assert reps[0][1].shape == (len(dataset), 6)
