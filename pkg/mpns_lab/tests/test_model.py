"""
Tests for the decoupling network and its parameter bundle.
"""
import numpy as np
import pytest

from mpns_lab import diffcore as dc
from mpns_lab import model as mm
from mpns_lab.utils import DimensionError

SMALL = mm.ModelConfig(
    input_dims=(5, 6),
    rep_dim_invariant=3,
    rep_dim_specific=3,
    hidden_widths=(7,),
    predictor_hidden_widths=(4,),
    discriminator_hidden_widths=(4,),
)


def batch(rng, n=8, config=SMALL):
    return [rng.normal(size=(n, d)) for d in config.input_dims]


def test_layout_and_init_shapes():
    bundle = mm.init_bundle(SMALL, 0)
    assert bundle.params["extractor/primary/m1/layer0/W"].shape == (5, 7)
    assert bundle.params["extractor/primary/m2/layer0/W"].shape == (6, 7)
    assert bundle.params["extractor/complement/m2/layer1/W"].shape == (7, 6)
    assert bundle.params["predictor/joint/layer0/W"].shape == (12, 4)
    assert bundle.params["discriminator/layer1/W"].shape == (4, 2)
    assert np.all(bundle.params["predictor/invariant/layer0/b"] == 0.0)
    assert not bundle.has_component("predictor/invariant/m1")


def test_unshared_invariant_predictors():
    bundle = mm.init_bundle(mm.ModelConfig(input_dims=(5, 6), shared_invariant_predictor=False), 0)
    assert bundle.has_component("predictor/invariant/m1")
    assert bundle.has_component("predictor/invariant/m2")
    assert not bundle.has_component("predictor/invariant")


def test_primary_and_complement_extractors_match_in_shape_not_values():
    bundle = mm.init_bundle(SMALL, 0)
    primary = mm.extractor_name(mm.PRIMARY, 0)
    complement = mm.extractor_name(mm.COMPLEMENT, 0)
    assert bundle.shape_signature(primary) == bundle.shape_signature(complement)
    assert not np.array_equal(bundle.params[primary + "/layer0/W"], bundle.params[complement + "/layer0/W"])


def test_init_is_deterministic_and_component_local():
    a = mm.init_bundle(SMALL, 3)
    b = mm.init_bundle(SMALL, 3)
    wider = mm.init_bundle(mm.ModelConfig(**{**SMALL.__dict__, "discriminator_hidden_widths": (9,)}), 3)
    for key, value in a.params.items():
        np.testing.assert_array_equal(value, b.params[key])
        if key.startswith("extractor/"):
            np.testing.assert_array_equal(value, wider.params[key])
    assert not np.array_equal(a.params["extractor/primary/m1/layer0/W"],
                              mm.init_bundle(SMALL, 4).params["extractor/primary/m1/layer0/W"])


def test_extract_splits_widths():
    rng = np.random.default_rng(0)
    bundle = mm.init_bundle(SMALL, 0)
    tape = dc.Tape()
    r_inv, r_spec = mm.extract(tape, bundle, batch(rng)[0], 0)
    assert r_inv.shape == (8, 3)
    assert r_spec.shape == (8, 3)
    with pytest.raises(DimensionError):
        mm.extract(tape, bundle, rng.normal(size=(8, 6)), 0)


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    config = mm.ModelConfig(input_dims=(4, 4), rep_dim_invariant=2, rep_dim_specific=2, hidden_widths=(5, 5))
    bundle = mm.init_bundle(config, 0)
    component = mm.extractor_name(mm.PRIMARY, 0)
    for _ in range(20):
        x = rng.normal(size=(6, 4))
        weights = rng.normal(size=(6, 4))

        def loss_value():
            tape = dc.Tape()
            out = mm.mlp(tape, bundle, component, tape.leaf(x), trainable=False)
            return float(np.sum(out.value * weights))

        tape = dc.Tape()
        out = mm.mlp(tape, bundle, component, tape.leaf(x))
        dc.backward(tape, dc.sum_all(dc.mul(out, tape.leaf(weights))))
        grads = tape.gradients()

        for name in (component + "/layer0/W", component + "/layer2/b"):
            param = bundle.params[name]
            numeric = np.zeros_like(param)
            for idx in np.ndindex(*param.shape):
                original = param[idx]
                param[idx] = original + 1e-5
                plus = loss_value()
                param[idx] = original - 1e-5
                minus = loss_value()
                param[idx] = original
                numeric[idx] = (plus - minus) / 2e-5
            np.testing.assert_allclose(grads[name], numeric, rtol=1e-5, atol=1e-8)


def test_complement_labels_always_differ():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 5, size=1000)
    ybar = mm.generate_complement_labels(y, 5, rng)
    assert np.all(ybar != y)
    assert set(np.unique(ybar)) == set(range(5))
    binary = mm.generate_complement_labels(np.array([0, 1, 1]), 2, rng)
    np.testing.assert_array_equal(binary, [1, 0, 0])
    with pytest.raises(ValueError):
        mm.generate_complement_labels(y, 1, rng)


def test_strip_for_inference_keeps_predictions():
    rng = np.random.default_rng(2)
    bundle = mm.init_bundle(SMALL, 0)
    stripped = mm.strip_for_inference(bundle)
    xs = batch(rng, 20)
    assert stripped.parameter_count() < bundle.parameter_count()
    assert not stripped.has_component(mm.DISCRIMINATOR)
    np.testing.assert_array_equal(mm.predict(stripped, xs), mm.predict(bundle, xs))
    with pytest.raises(ValueError):
        mm.extract(dc.Tape(), stripped, xs[0], 0, mm.COMPLEMENT)
    with pytest.raises(ValueError):
        mm.discriminate_modality(dc.Tape(), stripped, np.zeros((2, 3)))


@pytest.mark.parametrize("grl_lambda", [0.0, 0.5, 1.0])
def test_discriminator_reversal_scales_input_gradient(grl_lambda):
    bundle = mm.init_bundle(SMALL, 5)
    r_spec = np.random.default_rng(5).normal(size=(6, SMALL.rep_dim_specific))
    labels = np.arange(6) % 2
    grads = {}
    for reverse in (True, False):
        tape = dc.Tape()
        leaf = tape.leaf(r_spec, requires_grad=True)
        logits = mm.discriminate_modality(tape, bundle, leaf, grl_lambda, reverse=reverse)
        dc.backward(tape, dc.softmax_cross_entropy(logits, labels))
        grads[reverse] = (leaf.grad, tape.gradients()["discriminator/layer0/W"])
    np.testing.assert_allclose(grads[True][0], -grl_lambda * grads[False][0], atol=1e-15)
    np.testing.assert_array_equal(grads[True][1], grads[False][1])


def test_joint_prediction_needs_every_modality():
    bundle = mm.init_bundle(SMALL, 0)
    tape = dc.Tape()
    reps = mm.RepBundle(r_inv=[tape.leaf(np.zeros((2, 3)))], r_spec=[tape.leaf(np.zeros((2, 3)))])
    with pytest.raises(ValueError):
        mm.predict_joint(tape, bundle, reps)
    with pytest.raises(ValueError):
        mm.extract_all(tape, bundle, [np.zeros((2, 5))])


def test_imputation_buffers_are_mean_representations():
    rng = np.random.default_rng(3)
    bundle = mm.init_bundle(SMALL, 0)
    xs = batch(rng, 30)
    buffers = mm.imputation_buffers(bundle, xs)
    r_inv, r_spec = mm.representations(bundle, xs)[1]
    expected = np.concatenate([r_inv, r_spec], axis=1).mean(axis=0, keepdims=True)
    np.testing.assert_allclose(buffers["impute/m2"], expected)
    assert buffers["impute/m1"].shape == (1, 6)


@pytest.mark.parametrize("kwargs", [
    {"rep_dim_invariant": 0},
    {"activation": "softsign"},
    {"n_classes": 1},
    {"grl_lambda": -1.0},
    {"hidden_widths": ()},
])
def test_invalid_model_config(kwargs):
    with pytest.raises(ValueError):
        mm.ModelConfig(**kwargs)
