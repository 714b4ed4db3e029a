"""
Scores trained models: distance correlation with ground-truth latents, accuracy with and without a modality, and a
held-out probe of how much modality identity the specific representations still carry.
"""
from dataclasses import dataclass, field

import numpy as np

from mpns_lab import diffcore as dc
from mpns_lab import model as mm
from mpns_lab.synthgen import LATENT_NAMES
from mpns_lab.utils import DegenerateVarianceError, LogTimer

REP_PARTS = ("invariant", "specific", "concatenated")
HEADLINE_PART = "concatenated"
IMPUTATIONS = ("zero", "mean")

DCOR_COLUMNS = ("s", "mode", "seed", "modality", "variable", "rep_part", "dcor")
ACCURACY_COLUMNS = ("s", "mode", "seed", "eval_mode", "head", "accuracy")


def _as_samples(a):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"Samples must be a vector or an n x p matrix, got {arr.ndim} dimensions.")
    return arr


def double_centered(a):
    """
    Copy of the square matrix ``a`` with row means and column means subtracted and the grand mean added back.
    """
    return a - a.mean(axis=1, keepdims=True) - a.mean(axis=0, keepdims=True) + a.mean()


def centered_distances(x):
    """
    Double-centered matrix of pairwise Euclidean distances between the rows of x.
    """
    x = _as_samples(x)
    sq = np.zeros((x.shape[0], x.shape[0]))
    for k in range(x.shape[1]):
        diff = x[:, k, None] - x[None, :, k]
        sq += diff * diff
    return double_centered(np.sqrt(sq))


def _dcor_from_centered(a, b):
    var_x = np.mean(a * a)
    var_y = np.mean(b * b)
    if var_x <= 0.0 or var_y <= 0.0:
        raise DegenerateVarianceError("Distance correlation is undefined for a constant sample.")
    dcov2 = max(np.mean(a * b), 0.0)
    return float(min(np.sqrt(dcov2 / np.sqrt(var_x * var_y)), 1.0))


def distance_correlation(x, y):
    """
    Sample distance correlation of two paired samples (n x p and n x q), in [0, 1].
    """
    x = _as_samples(x)
    y = _as_samples(y)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"Samples must be paired, got {x.shape[0]} and {y.shape[0]} rows.")
    if x.shape[0] < 2:
        raise ValueError("Distance correlation needs at least two samples.")
    return _dcor_from_centered(centered_distances(x), centered_distances(y))


@dataclass
class DcorReport:
    """
    Distance correlations keyed (modality, variable, rep_part); modality is 1-based, variable one of NS/SF/NC/SC.
    """

    entries: dict = field(default_factory=dict)

    def headline(self, modality, variable):
        return self.entries[(modality, variable, HEADLINE_PART)]

    def rows(self, s, mode, seed):
        return [
            [s, mode, seed, modality, variable, part, value]
            for (modality, variable, part), value in sorted(self.entries.items())
        ]


def evaluate_dcor(bundle, dataset):
    """
    Distance correlation of each modality's invariant, specific and concatenated representations with every latent.
    """
    report = DcorReport()
    latents = {name.upper(): dataset.latents.column(name) for name in LATENT_NAMES}
    for m, (r_inv, r_spec) in enumerate(mm.representations(bundle, dataset.modalities)):
        parts = {"invariant": r_inv, "specific": r_spec, "concatenated": np.concatenate([r_inv, r_spec], axis=1)}
        for part, rep in parts.items():
            with LogTimer("dcor", f"modality {m + 1} {part}"):
                centered = centered_distances(rep)
                for variable, latent in latents.items():
                    report.entries[(m + 1, variable, part)] = _dcor_from_centered(centered, centered_distances(latent))
    return report


@dataclass
class AccuracyReport:
    """
    Accuracies keyed (eval_mode, head); the probe accuracy sits under ("probe", "discriminator").
    """

    entries: dict = field(default_factory=dict)

    def rows(self, s, mode, seed):
        return [
            [s, mode, seed, eval_mode, head, value] for (eval_mode, head), value in sorted(self.entries.items())
        ]

    def update(self, other):
        self.entries.update(other.entries)
        return self


def eval_modes(n_modalities):
    return ("full",) + tuple(f"only-modality-{m + 1}" for m in range(n_modalities))


def _accuracy(logits, y):
    return float(np.mean(np.argmax(logits, axis=1) == y))


def evaluate_accuracy(bundle, dataset, mode="full", imputation="zero"):
    """
    Accuracy of the joint predictor on all modalities, or of every head when only one modality is available.

    With one modality, the joint predictor sees the absent modality's representation block filled with zeros or with
    the training-set mean stored in the bundle.
    """
    if imputation not in IMPUTATIONS:
        raise ValueError(f"imputation must be one of {IMPUTATIONS}, got {imputation}.")
    if mode not in eval_modes(bundle.config.n_modalities):
        raise ValueError(f"Unknown evaluation mode {mode}.")

    report = AccuracyReport()
    if mode == "full":
        report.entries[(mode, "joint")] = _accuracy(mm.predict(bundle, dataset.modalities), dataset.y)
        return report

    kept = int(mode.rsplit("-", 1)[1]) - 1
    config = bundle.config
    tape = dc.Tape()
    r_inv, r_spec = mm.extract(tape, bundle, dataset.modalities[kept], kept, mm.PRIMARY, trainable=False)
    report.entries[(mode, "invariant")] = _accuracy(
        mm.predict_invariant(tape, bundle, r_inv, kept, trainable=False).value, dataset.y
    )
    report.entries[(mode, "specific")] = _accuracy(
        mm.predict_specific(tape, bundle, r_spec, kept, trainable=False).value, dataset.y
    )

    reps = mm.RepBundle(r_inv=[], r_spec=[])
    n = len(dataset)
    for m in range(config.n_modalities):
        if m == kept:
            reps.r_inv.append(r_inv)
            reps.r_spec.append(r_spec)
            continue
        if imputation == "zero":
            fill = np.zeros((1, config.rep_dim))
        else:
            key = f"impute/m{m + 1}"
            if key not in bundle.buffers:
                raise ValueError(f"Mean imputation needs the {key} buffer, which this bundle lacks.")
            fill = bundle.buffers[key]
        block = np.repeat(fill, n, axis=0)
        reps.r_inv.append(tape.leaf(block[:, :config.rep_dim_invariant]))
        reps.r_spec.append(tape.leaf(block[:, config.rep_dim_invariant:]))
    report.entries[(mode, "joint")] = _accuracy(
        mm.predict_joint(tape, bundle, reps, mm.PRIMARY, trainable=False).value, dataset.y
    )
    return report


def probe_representations(spec_reps, hidden_widths=(64,), activation="tanh", epochs=20, batch_size=128, lr=1e-3,
                          seed=0):
    """
    Train a fresh modality classifier on half of the given specific representations and return its accuracy on the
    other half.

    spec_reps is one n_m x p array per modality; rows are labelled with their modality index.
    """
    spec_reps = [_as_samples(r) for r in spec_reps]
    width = spec_reps[0].shape[1]
    x = np.concatenate(spec_reps, axis=0)
    labels = np.concatenate([np.full(r.shape[0], m, dtype=np.int64) for m, r in enumerate(spec_reps)])

    rng = np.random.default_rng([seed, 7])
    order = rng.permutation(x.shape[0])
    split = x.shape[0] // 2
    train_idx, test_idx = order[:split], order[split:]
    if len(train_idx) < 2 or len(test_idx) < 1:
        raise ValueError("The probe needs at least three representations.")

    config = mm.ModelConfig(
        input_dims=(1,) * len(spec_reps),
        rep_dim_specific=width,
        discriminator_hidden_widths=tuple(hidden_widths),
        activation=activation,
    )
    full = mm.init_bundle(config, seed)
    probe = mm.ModelBundle(config=config, params=full.component_params(mm.DISCRIMINATOR))

    state = dc.AdamState()
    for _ in range(epochs):
        batch_order = rng.permutation(train_idx)
        for start in range(0, len(batch_order), batch_size):
            idx = batch_order[start:start + batch_size]
            if len(idx) < 2:
                continue
            tape = dc.Tape()
            logits = mm.discriminate_modality(tape, probe, x[idx], reverse=False)
            loss = dc.softmax_cross_entropy(logits, labels[idx])
            dc.backward(tape, loss)
            dc.adam_step(probe.params, tape.gradients(), state, lr=lr)

    tape = dc.Tape()
    logits = mm.discriminate_modality(tape, probe, x[test_idx], trainable=False, reverse=False)
    return _accuracy(logits.value, labels[test_idx])


def probe_discriminator(bundle, dataset, epochs=20, batch_size=128, lr=1e-3, seed=0):
    """
    Held-out accuracy of a fresh discriminator trained on the frozen specific representations of ``dataset``.

    Near chance means the specific representations carry little modality identity.
    """
    spec_reps = [r_spec for _, r_spec in mm.representations(bundle, dataset.modalities)]
    with LogTimer("probe", "discriminator"):
        return probe_representations(
            spec_reps,
            hidden_widths=bundle.config.discriminator_hidden_widths,
            activation=bundle.config.activation,
            epochs=epochs,
            batch_size=batch_size,
            lr=lr,
            seed=seed,
        )


def accuracy_report(bundle, dataset, imputation="zero", probe_epochs=20, probe_batch_size=128, seed=0):
    """
    Accuracy in every evaluation mode plus the modality probe.
    """
    report = AccuracyReport()
    for mode in eval_modes(bundle.config.n_modalities):
        report.update(evaluate_accuracy(bundle, dataset, mode, imputation))
    report.entries[("probe", "discriminator")] = probe_discriminator(
        bundle, dataset, epochs=probe_epochs, batch_size=probe_batch_size, seed=seed
    )
    return report
