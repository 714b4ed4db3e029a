"""
Exact counterfactual probabilities on finite discrete structural causal models.

The cause Z may depend on the noise (to model confounding); the outcome is a deterministic function of Z and the noise.
Every quantity is computed by enumerating all noise assignments, sharing one assignment across both intervention arms.
"""
import itertools
import math
from dataclasses import dataclass

import yaml
from smart_open import open as smart

TOLERANCE = 1e-12
MAX_ASSIGNMENTS = 10 ** 6

PNS_REPORT_COLUMNS = (
    "z", "zbar", "y", "pns_exact", "pns_two_term", "identified_estimand", "monotonic", "orientation", "exogenous"
)


@dataclass(frozen=True)
class NoiseVar:
    name: str
    support: tuple
    probs: tuple


class ScmSpec:
    """
    A finite structural causal model with enumerable exogenous noise.

    outcome_fn(z, assignment) returns Y; cause_fn(assignment) returns {z: P(Z=z | noise)}. Without cause_fn, Z follows
    cause_probs independently of the noise.
    """

    def __init__(self, noise_vars, cause_support, outcome_support, outcome_fn, cause_probs=None, cause_fn=None):
        self.noise_vars = list(noise_vars)
        self.cause_support = tuple(cause_support)
        self.outcome_support = tuple(outcome_support)
        self.outcome_fn = outcome_fn

        if (cause_probs is None) == (cause_fn is None):
            raise ValueError("Give exactly one of cause_probs or cause_fn.")
        if cause_fn is None:
            if len(cause_probs) != len(self.cause_support):
                raise ValueError("cause_probs must have one entry per cause value.")
            fixed = dict(zip(self.cause_support, cause_probs))
            cause_fn = lambda assignment: fixed  # noqa: E731
        self.cause_fn = cause_fn

        self._validate_tables()
        self.enumeration = self._enumerate()

    def _validate_tables(self):
        if len(set(self.cause_support)) != len(self.cause_support) or not self.cause_support:
            raise ValueError("Cause support must be nonempty with distinct values.")
        size = 1
        for var in self.noise_vars:
            if len(var.support) != len(var.probs) or not var.support:
                raise ValueError(f"Noise variable {var.name} needs one probability per support value.")
            if any(p < 0.0 for p in var.probs) or abs(math.fsum(var.probs) - 1.0) > TOLERANCE:
                raise ValueError(f"Probabilities of noise variable {var.name} must be nonnegative and sum to 1.")
            size *= len(var.support)
        if size * len(self.cause_support) > MAX_ASSIGNMENTS:
            raise ValueError(
                f"SCM has {size * len(self.cause_support)} joint assignments, the limit is {MAX_ASSIGNMENTS}."
            )

    def _enumerate(self):
        """
        Return (P(noise), P(Z | noise), {z: Y}) for every noise assignment.
        """
        names = [var.name for var in self.noise_vars]
        rows = []
        for values in itertools.product(*(list(zip(v.support, v.probs)) for v in self.noise_vars)):
            assignment = {name: value for name, (value, _) in zip(names, values)}
            prob = math.prod(p for _, p in values)

            cause = self.cause_fn(assignment)
            if set(cause) - set(self.cause_support):
                raise ValueError(f"Cause table for {assignment} names values outside the cause support.")
            cause = {z: float(cause.get(z, 0.0)) for z in self.cause_support}
            if any(p < 0.0 for p in cause.values()) or abs(math.fsum(cause.values()) - 1.0) > TOLERANCE:
                raise ValueError(f"Cause table for {assignment} must be nonnegative and sum to 1.")

            outcomes = {}
            for z in self.cause_support:
                y = self.outcome_fn(z, assignment)
                if y not in self.outcome_support:
                    raise ValueError(f"Outcome {y!r} for z={z!r}, {assignment} is outside the outcome support.")
                outcomes[z] = y
            rows.append((prob, cause, outcomes))
        return rows

    def check_value(self, z=None, y=None):
        if z is not None and z not in self.cause_support:
            raise ValueError(f"Unknown cause value {z!r}.")
        if y is not None and y not in self.outcome_support:
            raise ValueError(f"Unknown outcome value {y!r}.")


@dataclass(frozen=True)
class PnsReport:
    z: object
    zbar: object
    y: object
    pns_exact: float
    pns_two_term: float
    identified_estimand: float
    monotonic: bool
    orientation: str
    exogenous: bool

    def to_row(self):
        return [getattr(self, c) for c in PNS_REPORT_COLUMNS]


def interventional_prob(scm, z, y):
    """
    P(Y_do(Z=z) = y).
    """
    scm.check_value(z, y)
    return math.fsum(prob for prob, _, outcomes in scm.enumeration if outcomes[z] == y)


def observational_prob(scm, z, y=None):
    """
    P(Z = z) or, with y, the joint P(Z = z, Y = y).
    """
    scm.check_value(z, y)
    return math.fsum(
        prob * cause[z] for prob, cause, outcomes in scm.enumeration if y is None or outcomes[z] == y
    )


def conditional_prob(scm, y, z):
    """
    P(Y = y | Z = z).
    """
    marginal = observational_prob(scm, z)
    if marginal <= 0.0:
        raise ValueError(f"Cannot condition on Z={z!r}: it has probability zero.")
    return observational_prob(scm, z, y) / marginal


def _check_pair(scm, z, zbar, y):
    scm.check_value(z, y)
    scm.check_value(zbar)
    if z == zbar:
        raise ValueError(f"PNS needs two distinct cause values, got z = zbar = {z!r}.")


def pns_exact(scm, z, zbar, y):
    """
    P(Y_do(Z=z) = y, Y_do(Z=zbar) != y), both arms sharing the noise assignment.
    """
    _check_pair(scm, z, zbar, y)
    return math.fsum(
        prob for prob, _, outcomes in scm.enumeration if outcomes[z] == y and outcomes[zbar] != y
    )


def pns_two_term(scm, z, zbar, y):
    """
    P(Y_do(z) = y | Z = zbar, Y != y) P(Z = zbar, Y != y) + P(Y_do(zbar) != y | Z = z, Y = y) P(Z = z, Y = y).

    Each conditional times its event probability is the joint counterfactual probability, summed here directly.
    """
    _check_pair(scm, z, zbar, y)
    return math.fsum(
        prob * (cause[zbar] + cause[z])
        for prob, cause, outcomes in scm.enumeration
        if outcomes[z] == y and outcomes[zbar] != y
    )


def identified_estimand(scm, z, zbar, y):
    """
    P(Y = y | Z = z) - P(Y = y | Z = zbar), from observational conditionals.
    """
    _check_pair(scm, z, zbar, y)
    return conditional_prob(scm, y, z) - conditional_prob(scm, y, zbar)


def check_monotonicity(scm, z, zbar, y):
    """
    True when no noise assignment of positive probability gives Y_do(z) != y and Y_do(zbar) = y.
    """
    _check_pair(scm, z, zbar, y)
    return not any(
        prob > 0.0 and outcomes[z] != y and outcomes[zbar] == y for prob, _, outcomes in scm.enumeration
    )


def monotonic_orientation(scm, z, zbar, y):
    """
    Which disjunct of the monotonicity condition holds: "forward", "reverse", "both" or "none".
    """
    forward = check_monotonicity(scm, z, zbar, y)
    reverse = check_monotonicity(scm, zbar, z, y)
    if forward and reverse:
        return "both"
    if forward:
        return "forward"
    if reverse:
        return "reverse"
    return "none"


def check_exogeneity(scm, z=None, y=None):
    """
    True when P(Y_do(Z=z) = y) equals P(Y = y | Z = z) for every (z, y) pair, or only the given pair.
    """
    if len(scm.cause_support) < 2:
        raise ValueError("Exogeneity needs a cause with at least two values to compare against.")
    zs = scm.cause_support if z is None else (z,)
    ys = scm.outcome_support if y is None else (y,)
    return all(
        abs(interventional_prob(scm, zv, yv) - conditional_prob(scm, yv, zv)) <= TOLERANCE
        for zv in zs
        for yv in ys
    )


def pns_report(scm, z, zbar, y):
    """
    Compute every PNS quantity for one (z, zbar, y) and check them against each other.
    """
    report = PnsReport(
        z=z,
        zbar=zbar,
        y=y,
        pns_exact=pns_exact(scm, z, zbar, y),
        pns_two_term=pns_two_term(scm, z, zbar, y),
        identified_estimand=identified_estimand(scm, z, zbar, y),
        monotonic=check_monotonicity(scm, z, zbar, y),
        orientation=monotonic_orientation(scm, z, zbar, y),
        exogenous=check_exogeneity(scm),
    )

    if set(scm.cause_support) == {z, zbar} and abs(report.pns_two_term - report.pns_exact) > TOLERANCE:
        raise RuntimeError(
            f"Two-term PNS {report.pns_two_term} disagrees with the joint counterfactual {report.pns_exact}."
        )
    if report.exogenous and max(0.0, report.identified_estimand) > report.pns_exact + TOLERANCE:
        raise RuntimeError("Exogenous SCM violates the lower bound on PNS.")
    if report.exogenous and report.monotonic and abs(report.pns_exact - report.identified_estimand) > TOLERANCE:
        raise RuntimeError("Exogenous monotonic SCM does not identify PNS.")
    return report


def _scm_from_description(desc):
    """
    Build an ScmSpec from a parsed description mapping.
    """
    try:
        noise_desc = desc.get("noise") or {}
        cause_desc = desc["cause"]
        outcome_desc = desc["outcome"]
    except (AttributeError, KeyError) as e:
        raise ValueError(f"SCM description needs 'cause' and 'outcome' sections: {e}") from e

    noise_vars = [
        NoiseVar(name=str(name), support=tuple(table.keys()), probs=tuple(float(p) for p in table.values()))
        for name, table in noise_desc.items()
    ]
    known = {v.name for v in noise_vars}

    cause_support = tuple(cause_desc["support"])
    cause_probs = cause_fn = None
    given = [str(g) for g in cause_desc.get("given", [])]
    if given:
        if set(given) - known:
            raise ValueError(f"Cause table refers to unknown noise variables {sorted(set(given) - known)}.")
        table = {}
        for row in cause_desc["rows"]:
            if len(row) != len(given) + len(cause_support):
                raise ValueError(f"Cause row {row} should have {len(given) + len(cause_support)} entries.")
            table[tuple(row[:len(given)])] = dict(zip(cause_support, (float(p) for p in row[len(given):])))

        def cause_fn(assignment):
            key = tuple(assignment[g] for g in given)
            if key not in table:
                raise ValueError(f"Cause table has no row for {dict(zip(given, key))}.")
            return table[key]
    else:
        cause_probs = [float(p) for p in cause_desc["probs"]]

    inputs = [str(i) for i in outcome_desc["inputs"]]
    if "z" not in inputs or set(inputs) - known - {"z"}:
        raise ValueError("Outcome inputs must include 'z' and otherwise name noise variables.")
    truth = {}
    for row in outcome_desc["rows"]:
        if len(row) != len(inputs) + 1:
            raise ValueError(f"Outcome row {row} should have {len(inputs) + 1} entries.")
        truth[tuple(row[:-1])] = row[-1]

    def outcome_fn(z, assignment):
        key = tuple(z if name == "z" else assignment[name] for name in inputs)
        if key not in truth:
            raise ValueError(f"Outcome truth table is not total: no row for {dict(zip(inputs, key))}.")
        return truth[key]

    return ScmSpec(
        noise_vars=noise_vars,
        cause_support=cause_support,
        outcome_support=tuple(outcome_desc["support"]),
        outcome_fn=outcome_fn,
        cause_probs=cause_probs,
        cause_fn=cause_fn,
    )


def load_scm(path):
    """
    Read an SCM description file.

    Schema (YAML)::

        noise:                      # one probability table per noise variable
          u: {0: 0.85, 1: 0.15}
        cause:
          support: [0, 1]
          probs: [0.5, 0.5]         # or, when Z depends on noise:
          # given: [u]
          # rows: [[0, 0.8, 0.2], [1, 0.2, 0.8]]   (noise values, then P(Z) per support value)
        outcome:
          support: [0, 1]
          inputs: [z, u]
          rows: [[0, 0, 0], [0, 1, 1], [1, 0, 1], [1, 1, 0]]   (input values, then Y)
    """
    with smart(path, "r") as f:
        desc = yaml.safe_load(f)
    return _scm_from_description(desc)
