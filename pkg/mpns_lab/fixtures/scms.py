"""
Small SCMs whose PNS quantities can be worked out by hand.

These back the oracle examples in the docs and the fixed cases in the tests.
"""
from mpns_lab.pns_oracle import NoiseVar, ScmSpec


def _bernoulli(name, p):
    return NoiseVar(name=name, support=(0, 1), probs=(1.0 - p, p))


def xor_scm(flip_prob=0.15, cause_prob=0.5):
    """
    Y = Z xor u with u ~ B(flip_prob): the outcome model of the synthetic generator.
    """
    return ScmSpec(
        noise_vars=[_bernoulli("u", flip_prob)],
        cause_support=(0, 1),
        outcome_support=(0, 1),
        outcome_fn=lambda z, a: z ^ a["u"],
        cause_probs=(1.0 - cause_prob, cause_prob),
    )


def and_scm(p=0.9, cause_prob=0.5):
    """
    Y = Z and u with u ~ B(p): monotonic, so observational data identifies PNS.
    """
    return ScmSpec(
        noise_vars=[_bernoulli("u", p)],
        cause_support=(0, 1),
        outcome_support=(0, 1),
        outcome_fn=lambda z, a: z & a["u"],
        cause_probs=(1.0 - cause_prob, cause_prob),
    )


def constant_outcome_scm(value=1):
    return ScmSpec(
        noise_vars=[_bernoulli("u", 0.3)],
        cause_support=(0, 1),
        outcome_support=(0, 1),
        outcome_fn=lambda z, a: value,
        cause_probs=(0.5, 0.5),
    )


def independent_scm(p=0.4):
    """
    Y = u, ignoring Z entirely.
    """
    return ScmSpec(
        noise_vars=[_bernoulli("u", p)],
        cause_support=(0, 1),
        outcome_support=(0, 1),
        outcome_fn=lambda z, a: a["u"],
        cause_probs=(0.5, 0.5),
    )


def confounded_scm(strength=0.8):
    """
    u drives both Z (P(Z = u) = strength) and Y = Z xor u, so P(Y | Z) differs from P(Y_do(Z)).
    """
    return ScmSpec(
        noise_vars=[_bernoulli("u", 0.5)],
        cause_support=(0, 1),
        outcome_support=(0, 1),
        outcome_fn=lambda z, a: z ^ a["u"],
        cause_fn=lambda a: {a["u"]: strength, 1 - a["u"]: 1.0 - strength},
    )


def single_cause_scm():
    """
    A cause with one possible value, for which no contrast exists.
    """
    return ScmSpec(
        noise_vars=[_bernoulli("u", 0.5)],
        cause_support=(1,),
        outcome_support=(0, 1),
        outcome_fn=lambda z, a: a["u"],
        cause_probs=(1.0,),
    )


SCM_FIXTURES = {
    "xor": xor_scm,
    "and": and_scm,
    "constant": constant_outcome_scm,
    "independent": independent_scm,
    "confounded": confounded_scm,
    "single_cause": single_cause_scm,
}
