"""
Loads the flat YAML run configuration into typed config records.

Every key is optional; an empty file gives the documented defaults. Errors raise ConfigurationError with the file and
line of the offending key.
"""
import re
from typing import NamedTuple

import yaml
from smart_open import open as smart

from mpns_lab.harness import ExperimentGrid
from mpns_lab.losses import TermWeights
from mpns_lab.model import ModelConfig
from mpns_lab.synthgen import GenParams
from mpns_lab.trainer import TrainConfig
from mpns_lab.utils import ConfigurationError

WEIGHT_TERMS = ("pred", "dec", "inv", "spec", "lbar_pred", "lbar_inv", "lbar_spec", "inv_c", "spec_c", "adv")

# key: (record, field, kind)
SCHEMA = {
    "d": ("gen", "d", "int"),
    "betas": ("gen", "betas", "float_list"),
    "noise_std_h": ("gen", "noise_std_h", "float"),
    "noise_is_variance": ("gen", "noise_is_variance", "bool"),
    "flip_prob": ("gen", "flip_prob", "float"),
    "sf_prob": ("gen", "sf_prob", "float"),
    "nc_prob": ("gen", "nc_prob", "float"),
    "s": ("gen", "s", "float"),
    "data_seed": ("gen", "seed", "int"),
    "s_values": ("grid", "s_values", "float_list"),
    "modes": ("grid", "modes", "str_list"),
    "seeds": ("grid", "seeds", "int"),
    "base_seed": ("grid", "base_seed", "int"),
    "n_train": ("grid", "n_train", "int"),
    "n_eval": ("grid", "n_eval", "int"),
    "workers": ("grid", "workers", "int"),
    "imputation": ("grid", "imputation", "str"),
    "probe_epochs": ("grid", "probe_epochs", "int"),
    "probe_batch_size": ("grid", "probe_batch_size", "int"),
    "log_dir": ("grid", "log_dir", "str"),
    "rep_dim_invariant": ("model", "rep_dim_invariant", "int"),
    "rep_dim_specific": ("model", "rep_dim_specific", "int"),
    "hidden_widths": ("model", "hidden_widths", "int_list"),
    "predictor_hidden_widths": ("model", "predictor_hidden_widths", "int_list"),
    "discriminator_hidden_widths": ("model", "discriminator_hidden_widths", "int_list"),
    "activation": ("model", "activation", "str"),
    "grl_lambda": ("model", "grl_lambda", "float"),
    "shared_invariant_predictor": ("model", "shared_invariant_predictor", "bool"),
    "epochs": ("train", "epochs", "int"),
    "batch_size": ("train", "batch_size", "int"),
    "learning_rate": ("train", "learning_rate", "float"),
    "beta1": ("train", "beta1", "float"),
    "beta2": ("train", "beta2", "float"),
    "eps": ("train", "eps", "float"),
    "seed": ("train", "seed", "int"),
    "mode": ("train", "mode", "str"),
    "complement_labels": ("train", "complement_labels", "str"),
    "product_form": ("train", "product_form", "str"),
    "dec_align_weight": ("train", "dec_align_weight", "float"),
    "dec_ortho_weight": ("train", "dec_ortho_weight", "float"),
    "adversary": ("train", "adversary", "str"),
}
SCHEMA.update({f"weight_{term}": ("weights", term, "float") for term in WEIGHT_TERMS})

KIND_NAMES = {
    "int": "an integer",
    "float": "a number",
    "bool": "true or false",
    "str": "a string",
    "int_list": "a list of integers",
    "float_list": "a list of numbers",
    "str_list": "a list of strings",
}


class ParsedConfig(NamedTuple):
    grid: ExperimentGrid
    model: ModelConfig
    train: TrainConfig
    gen: GenParams


def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def _is_real(value):
    return _is_int(value) or isinstance(value, float)


def _coerce(kind, value):
    """
    Return the value converted to ``kind``, or None when it has the wrong type.
    """
    if kind == "int":
        return value if _is_int(value) else None
    if kind == "float":
        return float(value) if _is_real(value) else None
    if kind == "bool":
        return value if isinstance(value, bool) else None
    if kind == "str":
        return value if isinstance(value, str) else None

    if not isinstance(value, list):
        return None
    item_kind = kind[:-len("_list")]
    items = [_coerce(item_kind, v) for v in value]
    return None if any(v is None for v in items) else tuple(items)


def _read_mapping(path):
    """
    Return ({key: value}, {key: line number}) for the top-level mapping of a YAML file.
    """
    with smart(path, "r") as f:
        text = f.read()
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        values = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark else 1
        raise ConfigurationError(f"{path}:{line}: {getattr(e, 'problem', None) or e}") from e

    if node is None:
        return {}, {}
    if not isinstance(node, yaml.MappingNode):
        raise ConfigurationError(f"{path}:{node.start_mark.line + 1}: the configuration must be a mapping of keys.")
    lines = {key.value: key.start_mark.line + 1 for key, _ in node.value}
    return values, lines


def _build(record, factory, kwargs, path, lines):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as e:
        message = str(e)
        culprit = next(
            (k for k in sorted(kwargs, key=len, reverse=True) if re.search(rf"\b{re.escape(k)}\b", message)), None
        )
        keys = [key for key, (rec, fld, _) in SCHEMA.items() if rec == record and (culprit is None or fld == culprit)]
        line = min((lines[k] for k in keys if k in lines), default=1)
        raise ConfigurationError(f"{path}:{line}: {message}") from e


def parse_config(path):
    """
    Parse a run configuration file into (ExperimentGrid, ModelConfig, TrainConfig, GenParams).
    """
    values, lines = _read_mapping(path)
    sections = {"gen": {}, "grid": {}, "model": {}, "train": {}, "weights": {}}

    for key, value in values.items():
        if key not in SCHEMA:
            raise ConfigurationError(f"{path}:{lines.get(key, 1)}: unknown key {key!r}.")
        record, fld, kind = SCHEMA[key]
        coerced = _coerce(kind, value)
        if coerced is None:
            raise ConfigurationError(
                f"{path}:{lines[key]}: {key} must be {KIND_NAMES[kind]}, got {value!r}."
            )
        sections[record][fld] = coerced

    gen = _build("gen", GenParams, sections["gen"], path, lines)
    model = _build("model", ModelConfig, sections["model"], path, lines)
    weights = _build("weights", TermWeights, sections["weights"], path, lines)
    train = _build("train", TrainConfig, {**sections["train"], "weights": weights}, path, lines)
    grid = _build(
        "grid",
        ExperimentGrid,
        {**sections["grid"], "gen_params": gen, "model_config": model, "train_config": train},
        path,
        lines,
    )
    return ParsedConfig(grid=grid, model=model, train=train, gen=gen)
