"""
Joint minibatch training of the extractors, predictors and discriminator under the full objective.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from mpns_lab import diffcore as dc
from mpns_lab import model as mm
from mpns_lab.files.results import TrainingLogWriter
from mpns_lab.losses import (
    ABLATION_MODES,
    ADVERSARIES,
    PRODUCT_FORMS,
    LossBreakdown,
    ObjectiveSettings,
    TermWeights,
    compute_objective,
)
from mpns_lab.utils import DivergenceError, LogTimer

COMPLEMENT_LABEL_POLICIES = ("per_epoch", "fixed")
DIVERGENCE_LIMIT = 1e6

# Substreams of the training seed
STREAM_SHUFFLE = 101
STREAM_COMPLEMENT = 102


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimizer, schedule and objective settings for one training run.

    ``mode`` zeroes the weights of the terms an ablation removes; ``no_grl`` keeps every term but trains with a
    gradient reversal strength of zero. ``adversary`` picks how the extractors play against the modality
    discriminator, see ``losses.adversarial_loss``.
    """

    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    mode: str = "full_mpns"
    weights: TermWeights = field(default_factory=TermWeights)
    complement_labels: str = "per_epoch"
    product_form: str = "batch_mean"
    dec_align_weight: float = 0.1
    dec_ortho_weight: float = 0.1
    adversary: str = "confusion"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}.")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be at least 2, got {self.batch_size}.")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}.")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"beta1 and beta2 must lie in [0, 1), got {self.beta1} and {self.beta2}.")
        if self.eps <= 0.0:
            raise ValueError(f"eps must be positive, got {self.eps}.")
        if self.mode not in ABLATION_MODES:
            raise ValueError(f"mode must be one of {ABLATION_MODES}, got {self.mode}.")
        if self.complement_labels not in COMPLEMENT_LABEL_POLICIES:
            raise ValueError(
                f"complement_labels must be one of {COMPLEMENT_LABEL_POLICIES}, got {self.complement_labels}."
            )
        if self.product_form not in PRODUCT_FORMS:
            raise ValueError(f"product_form must be one of {PRODUCT_FORMS}, got {self.product_form}.")
        if self.adversary not in ADVERSARIES:
            raise ValueError(f"adversary must be one of {ADVERSARIES}, got {self.adversary}.")

    @property
    def effective_weights(self):
        return self.weights.for_mode(self.mode)

    def objective_settings(self, model_config):
        return ObjectiveSettings(
            dec_align_weight=self.dec_align_weight,
            dec_ortho_weight=self.dec_ortho_weight,
            product_form=self.product_form,
            grl_lambda=0.0 if self.mode == "no_grl" else model_config.grl_lambda,
            adversary=self.adversary,
        )


@dataclass
class TrainRecord:
    """
    One mean LossBreakdown per epoch, the trained bundle and the run time in seconds.
    """

    breakdowns: list
    bundle: mm.ModelBundle
    wall_clock: float = 0.0

    @property
    def final_loss(self):
        return self.breakdowns[-1].total


def batch_schedule(n, batch_size, rng):
    """
    Shuffle 0..n-1 into batches of ``batch_size``; a trailing batch of a single row is dropped.
    """
    order = rng.permutation(n)
    batches = [order[start:start + batch_size] for start in range(0, n, batch_size)]
    if len(batches[-1]) < 2:
        batches.pop()
    return batches


def check_divergence(breakdown, epoch):
    for term, value in breakdown.items():
        if not math.isfinite(value) or abs(value) > DIVERGENCE_LIMIT:
            raise DivergenceError(term, epoch, value)


def train(model_config, train_config, dataset, log_path=None, progress=True):
    """
    Train a fresh bundle on ``dataset`` with one joint Adam update per batch.

    Input widths are taken from the dataset. Everything is determined by ``train_config.seed``: initialization,
    batch order and complement labels each come from their own substream, so ablations of the same seed share their
    initial parameters and batch schedule.
    """
    n = len(dataset)
    if n < 2:
        raise ValueError(f"Training needs at least two samples, got {n}.")

    xs = dataset.modalities
    model_config = model_config.with_input_dims(x.shape[1] for x in xs)
    bundle = mm.init_bundle(model_config, train_config.seed)
    weights = train_config.effective_weights
    settings = train_config.objective_settings(model_config)

    shuffle_rng = np.random.default_rng([train_config.seed, STREAM_SHUFFLE])
    label_rng = np.random.default_rng([train_config.seed, STREAM_COMPLEMENT])
    ybar_all = mm.generate_complement_labels(dataset.y, model_config.n_classes, label_rng)

    state = dc.AdamState()
    breakdowns = []
    log = TrainingLogWriter(log_path, model_config.n_modalities) if log_path else None

    try:
        with LogTimer("train", f"{train_config.mode} seed {train_config.seed}") as run_timer:
            for epoch in range(1, train_config.epochs + 1):
                if train_config.complement_labels == "per_epoch" and epoch > 1:
                    ybar_all = mm.generate_complement_labels(dataset.y, model_config.n_classes, label_rng)

                with LogTimer("train", f"epoch {epoch}"):
                    batch_breakdowns = []
                    for idx in batch_schedule(n, train_config.batch_size, shuffle_rng):
                        tape = dc.Tape()
                        total, _, breakdown = compute_objective(
                            tape, bundle, [x[idx] for x in xs], dataset.y[idx], ybar_all[idx], weights, settings
                        )
                        check_divergence(breakdown, epoch)
                        dc.backward(tape, total)
                        dc.adam_step(
                            bundle.params,
                            tape.gradients(),
                            state,
                            lr=train_config.learning_rate,
                            beta1=train_config.beta1,
                            beta2=train_config.beta2,
                            eps=train_config.eps,
                        )
                        batch_breakdowns.append(breakdown)

                epoch_breakdown = LossBreakdown.mean_of(batch_breakdowns)
                breakdowns.append(epoch_breakdown)
                if log:
                    log.write(epoch, epoch_breakdown)
                if progress:
                    print(f"   Epoch {epoch}/{train_config.epochs}: total loss {epoch_breakdown.total:.6f}", flush=True)
    finally:
        if log:
            log.close()

    bundle.buffers = mm.imputation_buffers(bundle, xs)
    bundle.metadata = {
        "mode": train_config.mode,
        "seed": train_config.seed,
        "s": dataset.params.s,
        "epochs": train_config.epochs,
    }
    return TrainRecord(breakdowns=breakdowns, bundle=bundle, wall_clock=run_timer.duration)


def inference_model(record):
    """
    Prediction-only copy of a trained bundle: no complement extractor and no discriminator.
    """
    return mm.strip_for_inference(record.bundle)


def with_mode(train_config, mode, seed=None):
    """
    Same settings with another ablation mode (and optionally another seed).
    """
    changes = {"mode": mode}
    if seed is not None:
        changes["seed"] = seed
    return replace(train_config, **changes)
