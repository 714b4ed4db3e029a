"""
The decoupling network and its complement branch.

Per-modality extractors split their output into invariant and specific representations. A complement extractor mirrors
the primary one, predictors read the representations, and a modality discriminator sits behind a gradient reversal.

Parameters live in ``ModelBundle.params`` as named float64 arrays. Forward functions bind them to a ``Tape``; pass
``trainable=False`` to read a component without letting gradients reach it.
"""
import copy
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from mpns_lab import diffcore as dc
from mpns_lab.utils import DimensionError

PRIMARY = "primary"
COMPLEMENT = "complement"
ACTIVATIONS = {"tanh": dc.tanh, "relu": dc.relu}


@dataclass(frozen=True)
class ModelConfig:
    input_dims: tuple = (40, 40)
    rep_dim_invariant: int = 20
    rep_dim_specific: int = 20
    hidden_widths: tuple = (64, 64)
    predictor_hidden_widths: tuple = (32,)
    discriminator_hidden_widths: tuple = (64,)
    activation: str = "tanh"
    n_classes: int = 2
    grl_lambda: float = 1.0
    shared_invariant_predictor: bool = True

    def __post_init__(self):
        for name in ("input_dims", "hidden_widths", "predictor_hidden_widths", "discriminator_hidden_widths"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))
        if len(self.input_dims) < 1 or min(self.input_dims) < 1:
            raise ValueError(f"input_dims must be positive, got {self.input_dims}.")
        if self.rep_dim_invariant < 1 or self.rep_dim_specific < 1:
            raise ValueError("Representation widths must be at least 1.")
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ValueError(f"hidden_widths must be a nonempty list of positive widths, got {self.hidden_widths}.")
        if any(w < 1 for w in self.predictor_hidden_widths + self.discriminator_hidden_widths):
            raise ValueError("Predictor and discriminator hidden widths must be positive.")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}, got {self.activation}.")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be at least 2, got {self.n_classes}.")
        if self.grl_lambda < 0.0:
            raise ValueError(f"grl_lambda must be nonnegative, got {self.grl_lambda}.")

    @property
    def n_modalities(self):
        return len(self.input_dims)

    @property
    def rep_dim(self):
        return self.rep_dim_invariant + self.rep_dim_specific

    def with_input_dims(self, input_dims):
        return replace(self, input_dims=tuple(input_dims))


def extractor_name(which, modality):
    return f"extractor/{which}/m{modality + 1}"


def invariant_predictor_name(config, modality):
    if config.shared_invariant_predictor:
        return "predictor/invariant"
    return f"predictor/invariant/m{modality + 1}"


def specific_predictor_name(modality):
    return f"predictor/specific/m{modality + 1}"


JOINT_PREDICTOR = "predictor/joint"
DISCRIMINATOR = "discriminator"


def component_layout(config):
    """
    Return {component: layer widths including input and output} for every component of the full model.
    """
    layout = {}
    for m, input_dim in enumerate(config.input_dims):
        for which in (PRIMARY, COMPLEMENT):
            layout[extractor_name(which, m)] = (input_dim, *config.hidden_widths, config.rep_dim)
        layout[invariant_predictor_name(config, m)] = (
            config.rep_dim_invariant, *config.predictor_hidden_widths, config.n_classes
        )
        layout[specific_predictor_name(m)] = (
            config.rep_dim_specific, *config.predictor_hidden_widths, config.n_classes
        )
    layout[JOINT_PREDICTOR] = (
        config.n_modalities * config.rep_dim, *config.predictor_hidden_widths, config.n_classes
    )
    layout[DISCRIMINATOR] = (config.rep_dim_specific, *config.discriminator_hidden_widths, config.n_modalities)
    return layout


@dataclass
class ModelBundle:
    """
    All parameters of one model, keyed ``<component>/layer<i>/<W|b>``.

    ``buffers`` holds non-trained arrays (representation means for imputation); ``metadata`` describes the run that
    produced the parameters.
    """

    config: ModelConfig
    params: dict
    buffers: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    inference_only: bool = False

    def component_params(self, component):
        prefix = component + "/layer"
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    def has_component(self, component):
        return bool(self.component_params(component))

    def shape_signature(self, component):
        """
        Sorted ``(layer key, shape)`` pairs of a component, independent of its name.
        """
        start = len(component) + 1
        return tuple(sorted((k[start:], v.shape) for k, v in self.component_params(component).items()))

    def parameter_count(self, component=None):
        params = self.params if component is None else self.component_params(component)
        return int(sum(v.size for v in params.values()))

    def copy(self):
        return ModelBundle(
            config=self.config,
            params={k: v.copy() for k, v in self.params.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
            metadata=copy.deepcopy(self.metadata),
            inference_only=self.inference_only,
        )


def _glorot(rng, fan_in, fan_out, activation):
    if activation == "relu":
        limit = np.sqrt(6.0 / fan_in)
    else:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_bundle(config, seed):
    """
    Initialize every component from its own seeded stream.

    The stream of a component depends only on (seed, component name), so adding or changing one component never moves
    the initial values of another.
    """
    params = {}
    for component, widths in component_layout(config).items():
        rng = np.random.default_rng([seed, zlib.crc32(component.encode())])
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            params[f"{component}/layer{i}/W"] = _glorot(rng, fan_in, fan_out, config.activation)
            params[f"{component}/layer{i}/b"] = np.zeros((1, fan_out))
    return ModelBundle(config=config, params=params)


def strip_for_inference(bundle):
    """
    Copy of ``bundle`` without the complement extractors and the discriminator.
    """
    stripped = bundle.copy()
    stripped.params = {
        k: v for k, v in stripped.params.items()
        if not k.startswith(f"extractor/{COMPLEMENT}/") and not k.startswith(DISCRIMINATOR + "/")
    }
    stripped.inference_only = True
    return stripped


def mlp(tape, bundle, component, x, trainable=True):
    """
    Forward ``x`` through a component's layers; hidden layers use the configured activation, the last is linear.
    """
    n_layers = len(component_layout(bundle.config)[component]) - 1
    act = ACTIVATIONS[bundle.config.activation]
    h = x
    for i in range(n_layers):
        key = f"{component}/layer{i}"
        if key + "/W" not in bundle.params:
            raise ValueError(f"Bundle has no parameters for {component}.")
        w = tape.parameter(key + "/W", bundle.params[key + "/W"], trainable)
        b = tape.parameter(key + "/b", bundle.params[key + "/b"], trainable)
        h = dc.add_bias(dc.matmul(h, w), b)
        if i < n_layers - 1:
            h = act(h)
    return h


def _as_node(tape, x):
    return x if isinstance(x, dc.Node) else tape.leaf(x)


def _check_width(x, width, what):
    if x.shape[1] != width:
        raise DimensionError(f"{what} expects inputs of width {width}, got shape {x.shape}.")


def extract(tape, bundle, x_m, modality, which=PRIMARY, trainable=True):
    """
    Return (r_inv, r_spec) for one modality from the primary or complement extractor.
    """
    if which not in (PRIMARY, COMPLEMENT):
        raise NotImplementedError(f"Unknown extractor {which}.")
    if which == COMPLEMENT and bundle.inference_only:
        raise ValueError("Inference bundles carry no complement extractor.")
    config = bundle.config
    x = _as_node(tape, x_m)
    _check_width(x, config.input_dims[modality], f"Modality {modality + 1} extractor")
    out = mlp(tape, bundle, extractor_name(which, modality), x, trainable)
    r_inv = dc.slice_cols(out, 0, config.rep_dim_invariant)
    r_spec = dc.slice_cols(out, config.rep_dim_invariant, config.rep_dim)
    return r_inv, r_spec


@dataclass
class RepBundle:
    """
    Per-modality representations of one batch; complement lists are empty when only the primary branch ran.
    """

    r_inv: list
    r_spec: list
    rbar_inv: list = field(default_factory=list)
    rbar_spec: list = field(default_factory=list)

    def parts(self, which=PRIMARY):
        if which == PRIMARY:
            return self.r_inv, self.r_spec
        return self.rbar_inv, self.rbar_spec


def extract_all(tape, bundle, xs, complement=True, trainable=True):
    """
    Run the primary (and, optionally, complement) extractor on every modality of a batch.
    """
    if len(xs) != bundle.config.n_modalities:
        raise ValueError(f"Expected {bundle.config.n_modalities} modalities, got {len(xs)}.")
    reps = RepBundle(r_inv=[], r_spec=[])
    nodes = [_as_node(tape, x) for x in xs]
    for m, x in enumerate(nodes):
        r_inv, r_spec = extract(tape, bundle, x, m, PRIMARY, trainable)
        reps.r_inv.append(r_inv)
        reps.r_spec.append(r_spec)
        if complement:
            rbar_inv, rbar_spec = extract(tape, bundle, x, m, COMPLEMENT, trainable)
            reps.rbar_inv.append(rbar_inv)
            reps.rbar_spec.append(rbar_spec)
    return reps


def predict_invariant(tape, bundle, r_inv, modality=0, trainable=True):
    """
    Logits of F_I; with a shared invariant predictor the modality does not matter.
    """
    r_inv = _as_node(tape, r_inv)
    _check_width(r_inv, bundle.config.rep_dim_invariant, "Invariant predictor")
    return mlp(tape, bundle, invariant_predictor_name(bundle.config, modality), r_inv, trainable)


def predict_specific(tape, bundle, r_spec, modality, trainable=True):
    r_spec = _as_node(tape, r_spec)
    _check_width(r_spec, bundle.config.rep_dim_specific, "Specific predictor")
    return mlp(tape, bundle, specific_predictor_name(modality), r_spec, trainable)


def predict_joint(tape, bundle, reps, which=PRIMARY, trainable=True):
    """
    Logits of F_P over [r_inv, r_spec] of every modality, concatenated in modality order.
    """
    inv, spec = reps.parts(which)
    n = bundle.config.n_modalities
    if len(inv) != n or len(spec) != n or any(r is None for r in inv + spec):
        raise ValueError(f"Joint prediction needs {which} representations for all {n} modalities.")
    blocks = []
    for r_inv, r_spec in zip(inv, spec):
        blocks.extend([r_inv, r_spec])
    return mlp(tape, bundle, JOINT_PREDICTOR, dc.concat_cols(blocks), trainable)


def discriminate_modality(tape, bundle, r_spec, grl_lambda=None, trainable=True, reverse=True):
    """
    Modality logits for specific representations seen through a gradient reversal.

    ``reverse=False`` skips the reversal, so gradients reach ``r_spec`` with their own sign.
    """
    grl_lambda = bundle.config.grl_lambda if grl_lambda is None else grl_lambda
    if bundle.inference_only:
        raise ValueError("Inference bundles carry no discriminator.")
    r_spec = _as_node(tape, r_spec)
    _check_width(r_spec, bundle.config.rep_dim_specific, "Modality discriminator")
    if reverse:
        r_spec = dc.gradient_reversal(r_spec, grl_lambda)
    return mlp(tape, bundle, DISCRIMINATOR, r_spec, trainable)


def generate_complement_labels(y, n_classes, rng):
    """
    Draw, for each label, a class chosen uniformly among the other n_classes - 1.
    """
    if n_classes < 2:
        raise ValueError(f"Complement labels need at least 2 classes, got {n_classes}.")
    y = np.asarray(y, dtype=np.int64)
    offsets = rng.integers(1, n_classes, size=y.shape)
    return (y + offsets) % n_classes


def representations(bundle, xs):
    """
    Primary representations of every modality as arrays: [(r_inv, r_spec), ...].
    """
    tape = dc.Tape()
    reps = extract_all(tape, bundle, xs, complement=False, trainable=False)
    return [(i.value, s.value) for i, s in zip(reps.r_inv, reps.r_spec)]


def predict(bundle, xs):
    """
    Joint logits D(X) as an array.
    """
    tape = dc.Tape()
    reps = extract_all(tape, bundle, xs, complement=False, trainable=False)
    return predict_joint(tape, bundle, reps, PRIMARY, trainable=False).value


def imputation_buffers(bundle, xs):
    """
    Mean [r_inv, r_spec] row of every modality, for filling in an absent modality.
    """
    return {
        f"impute/m{m + 1}": np.concatenate([r_inv, r_spec], axis=1).mean(axis=0, keepdims=True)
        for m, (r_inv, r_spec) in enumerate(representations(bundle, xs))
    }
