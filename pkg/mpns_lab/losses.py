"""
Objective terms for the decoupling model, its complement branch and the adversarial modality discriminator.

Every term is a tape node so the total can be backpropagated in one pass. Complement-branch terms read the predictors
as frozen parameters: they train the complement extractor only, never the predictors.
"""
import math
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

from mpns_lab import diffcore as dc
from mpns_lab import model as mm

ABLATION_MODES = ("full_mpns", "wo_pns", "wo_inv_pns", "wo_spec_pns", "no_grl")
PRODUCT_FORMS = ("batch_mean", "per_sample")
ADVERSARIES = ("confusion", "reversal")


@dataclass(frozen=True)
class TermWeights:
    """
    Multiplier for every term of the total objective.
    """

    pred: float = 1.0
    dec: float = 1.0
    inv: float = 1.0
    spec: float = 1.0
    lbar_pred: float = 1.0
    lbar_inv: float = 1.0
    lbar_spec: float = 1.0
    inv_c: float = 1.0
    spec_c: float = 1.0
    adv: float = 1.0

    PNS_TERMS = ("lbar_pred", "lbar_inv", "lbar_spec", "inv_c", "spec_c", "adv")

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not value >= 0.0:
                raise ValueError(f"Loss weight {f.name} must be nonnegative, got {value}.")

    def for_mode(self, mode):
        """
        Weights with the terms an ablation mode removes set to zero.
        """
        if mode in ("full_mpns", "no_grl"):
            return self
        if mode == "wo_pns":
            return replace(self, **{name: 0.0 for name in self.PNS_TERMS})
        if mode == "wo_inv_pns":
            return replace(self, lbar_inv=0.0, inv_c=0.0)
        if mode == "wo_spec_pns":
            return replace(self, lbar_spec=0.0, spec_c=0.0)
        raise NotImplementedError(f"Unknown ablation mode {mode}.")


@dataclass(frozen=True)
class ObjectiveSettings:
    dec_align_weight: float = 0.1
    dec_ortho_weight: float = 0.1
    product_form: str = "batch_mean"
    grl_lambda: float = None
    adversary: str = "confusion"

    def __post_init__(self):
        if self.product_form not in PRODUCT_FORMS:
            raise ValueError(f"product_form must be one of {PRODUCT_FORMS}, got {self.product_form}.")
        if self.adversary not in ADVERSARIES:
            raise ValueError(f"adversary must be one of {ADVERSARIES}, got {self.adversary}.")
        if self.dec_align_weight < 0.0 or self.dec_ortho_weight < 0.0:
            raise ValueError("Decoupling weights must be nonnegative.")


class CeTerm(NamedTuple):
    """
    Per-row cross-entropies (nx1) and their batch mean (1x1).
    """

    rows: dc.Node
    mean: dc.Node


def cross_entropy(logits, labels):
    rows = dc.softmax_cross_entropy(logits, labels, reduction="none")
    return CeTerm(rows=rows, mean=dc.mean(rows))


@dataclass
class LossTerms:
    """
    Tape nodes of every objective term for one batch.
    """

    l_pred: dc.Node
    l_dec: dc.Node
    l_inv: list
    l_spec: list
    lbar_pred: dc.Node
    lbar_inv: list
    lbar_spec: list
    l_inv_c: list
    l_spec_c: list
    l_adv: dc.Node


def training_log_columns(n_modalities):
    def per(name):
        return [f"{name}_{m + 1}" for m in range(n_modalities)]

    return (
        ["epoch", "l_pred", "l_dec"] + per("l_inv") + per("l_spec") + ["lbar_pred"] + per("lbar_inv")
        + per("lbar_spec") + per("l_inv_c") + per("l_spec_c") + ["l_adv", "total"]
    )


@dataclass
class LossBreakdown:
    """
    Values of every term for one batch (or the mean over an epoch).
    """

    l_pred: float
    l_dec: float
    l_inv: list
    l_spec: list
    lbar_pred: float
    lbar_inv: list
    lbar_spec: list
    l_inv_c: list
    l_spec_c: list
    l_adv: float
    total: float = 0.0
    batches: int = field(default=1, compare=False)

    @classmethod
    def from_terms(cls, terms, total):
        def val(node):
            return float(node.value[0, 0])

        return cls(
            l_pred=val(terms.l_pred),
            l_dec=val(terms.l_dec),
            l_inv=[val(n) for n in terms.l_inv],
            l_spec=[val(n) for n in terms.l_spec],
            lbar_pred=val(terms.lbar_pred),
            lbar_inv=[val(n) for n in terms.lbar_inv],
            lbar_spec=[val(n) for n in terms.lbar_spec],
            l_inv_c=[val(n) for n in terms.l_inv_c],
            l_spec_c=[val(n) for n in terms.l_spec_c],
            l_adv=val(terms.l_adv),
            total=val(total),
        )

    def items(self):
        """
        Flat ``(column name, value)`` pairs in training-log order, without epoch.
        """
        out = [("l_pred", self.l_pred), ("l_dec", self.l_dec)]
        for name in ("l_inv", "l_spec"):
            out.extend((f"{name}_{m + 1}", v) for m, v in enumerate(getattr(self, name)))
        out.append(("lbar_pred", self.lbar_pred))
        for name in ("lbar_inv", "lbar_spec", "l_inv_c", "l_spec_c"):
            out.extend((f"{name}_{m + 1}", v) for m, v in enumerate(getattr(self, name)))
        out.extend([("l_adv", self.l_adv), ("total", self.total)])
        return out

    def to_row(self, epoch):
        return [epoch] + [v for _, v in self.items()]

    def weighted_total(self, weights):
        w = weights
        return math.fsum(
            [w.pred * self.l_pred, w.dec * self.l_dec, w.lbar_pred * self.lbar_pred, w.adv * self.l_adv]
            + [w.inv * v for v in self.l_inv]
            + [w.spec * v for v in self.l_spec]
            + [w.lbar_inv * v for v in self.lbar_inv]
            + [w.lbar_spec * v for v in self.lbar_spec]
            + [w.inv_c * v for v in self.l_inv_c]
            + [w.spec_c * v for v in self.l_spec_c]
        )

    @classmethod
    def mean_of(cls, breakdowns):
        """
        Average a sequence of batch breakdowns term by term.
        """
        breakdowns = list(breakdowns)
        if not breakdowns:
            raise ValueError("Cannot average an empty list of breakdowns.")

        def avg(name):
            first = getattr(breakdowns[0], name)
            if isinstance(first, list):
                return [float(np.mean([getattr(b, name)[m] for b in breakdowns])) for m in range(len(first))]
            return float(np.mean([getattr(b, name) for b in breakdowns]))

        names = [f.name for f in fields(cls) if f.name != "batches"]
        return cls(**{name: avg(name) for name in names}, batches=len(breakdowns))


def decoupling_loss(tape, reps, align_weight=0.1, ortho_weight=0.1):
    """
    Pull invariant representations of different modalities together and decorrelate each invariant/specific pair.

    The alignment part is the mean of 1 - cos(R_I^a, R_I^b) over modality pairs. The orthogonality part sums, over
    modalities, the mean squared Pearson correlation between every invariant and every specific column, so the two
    widths may differ.
    """
    n = len(reps.r_inv)
    one = tape.leaf(1.0)
    pieces = []

    if align_weight > 0.0 and n > 1:
        align = []
        for a in range(n):
            for b in range(a + 1, n):
                cos = dc.row_cosine(reps.r_inv[a], reps.r_inv[b], eps=1e-12)
                align.append(dc.sub(one, dc.mean(cos)))
        total = align[0]
        for term in align[1:]:
            total = dc.add(total, term)
        pieces.append(dc.scale(total, align_weight / len(align)))

    if ortho_weight > 0.0:
        for r_inv, r_spec in zip(reps.r_inv, reps.r_spec):
            corr = dc.column_correlation(r_inv, r_spec, eps=1e-12)
            pieces.append(dc.scale(dc.mean(dc.mul(corr, corr)), ortho_weight))

    if not pieces:
        return tape.leaf(0.0)
    out = pieces[0]
    for piece in pieces[1:]:
        out = dc.add(out, piece)
    return out


def base_decoupling_loss(tape, bundle, y, reps, settings=ObjectiveSettings()):
    """
    Joint, invariant and specific prediction losses plus the decoupling constraints on primary representations.

    Returns (l_pred, l_dec, l_inv[M], l_spec[M]); the per-modality entries are ``CeTerm``s.
    """
    l_pred = cross_entropy(mm.predict_joint(tape, bundle, reps, mm.PRIMARY), y).mean
    l_dec = decoupling_loss(tape, reps, settings.dec_align_weight, settings.dec_ortho_weight)
    l_inv = [
        cross_entropy(mm.predict_invariant(tape, bundle, r, m), y) for m, r in enumerate(reps.r_inv)
    ]
    l_spec = [
        cross_entropy(mm.predict_specific(tape, bundle, r, m), y) for m, r in enumerate(reps.r_spec)
    ]
    return l_pred, l_dec, l_inv, l_spec


def _check_complement_labels(y, ybar):
    if np.any(np.asarray(y) == np.asarray(ybar)):
        raise ValueError("Complement labels must differ from the true labels everywhere.")


def complement_prediction_loss(tape, bundle, reps, y, ybar):
    """
    Cross-entropy of the joint predictor on complement representations against complement labels.

    The joint predictor is read frozen, so only the complement extractor learns from this term.
    """
    _check_complement_labels(y, ybar)
    return cross_entropy(mm.predict_joint(tape, bundle, reps, mm.COMPLEMENT, trainable=False), ybar).mean


def complement_invariant_losses(tape, bundle, reps, ybar):
    return [
        cross_entropy(mm.predict_invariant(tape, bundle, r, m, trainable=False), ybar)
        for m, r in enumerate(reps.rbar_inv)
    ]


def complement_specific_losses(tape, bundle, reps, ybar):
    return [
        cross_entropy(mm.predict_specific(tape, bundle, r, m, trainable=False), ybar)
        for m, r in enumerate(reps.rbar_spec)
    ]


def _monotonicity_products(primary, complement, product_form):
    if len(primary) != len(complement):
        raise ValueError("Primary and complement terms must cover the same modalities.")
    if product_form == "per_sample":
        return [dc.mean(dc.mul(p.rows, c.rows)) for p, c in zip(primary, complement)]
    return [dc.mul(p.mean, c.mean) for p, c in zip(primary, complement)]


def invariant_pns_loss(l_inv, lbar_inv, product_form="batch_mean"):
    """
    Complement invariant losses and the monotonicity products l_inv * lbar_inv, one per modality.
    """
    return [c.mean for c in lbar_inv], _monotonicity_products(l_inv, lbar_inv, product_form)


def specific_pns_loss(l_spec, lbar_spec, product_form="batch_mean"):
    """
    Complement specific losses and the monotonicity products l_spec * lbar_spec, one per modality.
    """
    return [c.mean for c in lbar_spec], _monotonicity_products(l_spec, lbar_spec, product_form)


def modality_confusion(logits):
    """
    KL divergence from the uniform modality posterior to softmax(logits), averaged over rows; 0 exactly at chance.
    """
    k = logits.shape[1]
    total = None
    for label in range(k):
        ce = dc.softmax_cross_entropy(logits, np.full(logits.shape[0], label, dtype=np.int64))
        total = ce if total is None else dc.add(total, ce)
    return dc.sub(dc.scale(total, 1.0 / k), logits.tape.leaf(math.log(k)))


def adversarial_loss(tape, bundle, sources, grl_lambda=None, adversary="confusion"):
    """
    Sum over sources of the modality discriminator's loss and the extractors' side of the min-max.

    ``sources`` is a sequence of (r_spec node, modality index). The discriminator always learns to tell which modality
    a specific representation came from. With ``reversal`` the extractors receive its gradient reversed and scaled by
    ``grl_lambda``. With ``confusion`` the discriminator reads the representations behind a zero-strength reversal, and
    the extractors instead minimize ``grl_lambda`` times the divergence of the frozen discriminator's posterior from
    uniform, which pulls them towards chance rather than towards the wrong modality.
    """
    if adversary not in ADVERSARIES:
        raise ValueError(f"adversary must be one of {ADVERSARIES}, got {adversary}.")
    grl_lambda = bundle.config.grl_lambda if grl_lambda is None else grl_lambda
    total = None
    for r_spec, modality in sources:
        labels = np.full(r_spec.shape[0], modality, dtype=np.int64)
        if adversary == "reversal":
            term = cross_entropy(mm.discriminate_modality(tape, bundle, r_spec, grl_lambda), labels).mean
        else:
            term = cross_entropy(mm.discriminate_modality(tape, bundle, r_spec, 0.0), labels).mean
            if grl_lambda > 0.0:
                confusion = modality_confusion(mm.discriminate_modality(tape, bundle, r_spec, trainable=False,
                                                                        reverse=False))
                term = dc.add(term, dc.scale(confusion, grl_lambda))
        total = term if total is None else dc.add(total, term)
    return total if total is not None else tape.leaf(0.0)


def adversarial_sources(reps):
    sources = [(r, m) for m, r in enumerate(reps.r_spec)]
    sources.extend((r, m) for m, r in enumerate(reps.rbar_spec))
    return sources


def total_loss(terms, weights):
    """
    Weighted sum of every term; terms with zero weight are left off the graph entirely.
    """
    if not isinstance(weights, TermWeights):
        weights = TermWeights(**weights)
    weighted = [
        (weights.pred, [terms.l_pred]),
        (weights.dec, [terms.l_dec]),
        (weights.inv, [t.mean for t in terms.l_inv]),
        (weights.spec, [t.mean for t in terms.l_spec]),
        (weights.lbar_pred, [terms.lbar_pred]),
        (weights.lbar_inv, terms.lbar_inv),
        (weights.lbar_spec, terms.lbar_spec),
        (weights.inv_c, terms.l_inv_c),
        (weights.spec_c, terms.l_spec_c),
        (weights.adv, [terms.l_adv]),
    ]
    total = None
    for weight, nodes in weighted:
        if weight == 0.0:
            continue
        for node in nodes:
            piece = node if weight == 1.0 else dc.scale(node, weight)
            total = piece if total is None else dc.add(total, piece)
    return total if total is not None else terms.l_pred.tape.leaf(0.0)


def compute_objective(tape, bundle, xs, y, ybar, weights, settings=ObjectiveSettings()):
    """
    Forward one batch through both branches and assemble every term.

    Returns (total node, LossTerms, LossBreakdown).
    """
    reps = mm.extract_all(tape, bundle, xs, complement=True)
    l_pred, l_dec, l_inv, l_spec = base_decoupling_loss(tape, bundle, y, reps, settings)
    lbar_pred = complement_prediction_loss(tape, bundle, reps, y, ybar)
    lbar_inv, l_inv_c = invariant_pns_loss(
        l_inv, complement_invariant_losses(tape, bundle, reps, ybar), settings.product_form
    )
    lbar_spec, l_spec_c = specific_pns_loss(
        l_spec, complement_specific_losses(tape, bundle, reps, ybar), settings.product_form
    )
    l_adv = adversarial_loss(tape, bundle, adversarial_sources(reps), settings.grl_lambda, settings.adversary)

    terms = LossTerms(
        l_pred=l_pred,
        l_dec=l_dec,
        l_inv=l_inv,
        l_spec=l_spec,
        lbar_pred=lbar_pred,
        lbar_inv=lbar_inv,
        lbar_spec=lbar_spec,
        l_inv_c=l_inv_c,
        l_spec_c=l_spec_c,
        l_adv=l_adv,
    )
    total = total_loss(terms, weights)
    breakdown = LossBreakdown.from_terms(
        replace(terms, l_inv=[t.mean for t in l_inv], l_spec=[t.mean for t in l_spec]), total
    )
    return total, terms, breakdown
