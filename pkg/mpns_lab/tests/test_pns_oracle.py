"""
Tests for the exact PNS oracle on finite SCMs.
"""
import numpy as np
import pytest

from mpns_lab.fixtures.scms import (
    and_scm,
    confounded_scm,
    constant_outcome_scm,
    independent_scm,
    single_cause_scm,
    xor_scm,
)
from mpns_lab.pns_oracle import (
    TOLERANCE,
    NoiseVar,
    ScmSpec,
    check_exogeneity,
    check_monotonicity,
    interventional_prob,
    identified_estimand,
    load_scm,
    monotonic_orientation,
    pns_exact,
    pns_report,
    pns_two_term,
)


def random_scm(rng, monotonic):
    """
    Binary cause and outcome, independent cause, one or two noise variables with random tables.

    With ``monotonic`` the outcome under z=1 is at least the outcome under z=0 for every noise assignment.
    """
    noise_vars = []
    for i in range(rng.integers(1, 3)):
        size = int(rng.integers(2, 4))
        noise_vars.append(NoiseVar(name=f"u{i}", support=tuple(range(size)), probs=tuple(rng.dirichlet(np.ones(size)))))

    keys = [tuple(int(v) for v in key) for key in np.ndindex(*(len(v.support) for v in noise_vars))]
    base = {key: int(rng.integers(0, 2)) for key in keys}
    treated = {key: int(rng.integers(0, 2)) for key in keys}
    if monotonic:
        treated = {key: max(base[key], treated[key]) for key in keys}
    names = [v.name for v in noise_vars]

    def outcome_fn(z, assignment):
        key = tuple(assignment[n] for n in names)
        return treated[key] if z == 1 else base[key]

    p = float(rng.uniform(0.1, 0.9))
    return ScmSpec(
        noise_vars=noise_vars,
        cause_support=(0, 1),
        outcome_support=(0, 1),
        outcome_fn=outcome_fn,
        cause_probs=(1.0 - p, p),
    )


def test_xor_model():
    scm = xor_scm()
    assert pns_exact(scm, 1, 0, 1) == pytest.approx(0.85, abs=1e-12)
    assert identified_estimand(scm, 1, 0, 1) == pytest.approx(0.70, abs=1e-12)
    assert not check_monotonicity(scm, 1, 0, 1)
    assert monotonic_orientation(scm, 1, 0, 1) == "none"
    assert check_exogeneity(scm)


def test_and_model():
    scm = and_scm(0.9)
    assert pns_exact(scm, 1, 0, 1) == pytest.approx(0.9, abs=1e-12)
    assert identified_estimand(scm, 1, 0, 1) == pytest.approx(0.9, abs=1e-12)
    assert check_monotonicity(scm, 1, 0, 1)
    assert monotonic_orientation(scm, 1, 0, 1) == "forward"


def test_randomized_monotonic_exogenous_scms_are_identified():
    rng = np.random.default_rng(0)
    for _ in range(200):
        scm = random_scm(rng, monotonic=True)
        assert check_exogeneity(scm)
        assert check_monotonicity(scm, 1, 0, 1)
        assert abs(pns_exact(scm, 1, 0, 1) - identified_estimand(scm, 1, 0, 1)) <= TOLERANCE


def test_randomized_exogenous_scms_respect_lower_bound():
    rng = np.random.default_rng(1)
    for _ in range(200):
        scm = random_scm(rng, monotonic=False)
        assert check_exogeneity(scm)
        assert max(0.0, identified_estimand(scm, 1, 0, 1)) <= pns_exact(scm, 1, 0, 1) + TOLERANCE


def test_two_term_form_matches_joint_for_binary_cause():
    rng = np.random.default_rng(2)
    for _ in range(50):
        scm = random_scm(rng, monotonic=False)
        for y in (0, 1):
            assert pns_two_term(scm, 1, 0, y) == pytest.approx(pns_exact(scm, 1, 0, y), abs=1e-12)


def test_constant_and_independent_outcomes_have_zero_pns():
    assert pns_exact(constant_outcome_scm(), 1, 0, 1) == 0.0
    assert pns_exact(independent_scm(), 1, 0, 1) == 0.0
    assert identified_estimand(independent_scm(), 1, 0, 1) == pytest.approx(0.0, abs=1e-12)
    assert monotonic_orientation(constant_outcome_scm(), 1, 0, 1) == "both"


def test_confounded_model_is_not_exogenous():
    scm = confounded_scm()
    assert not check_exogeneity(scm)
    assert interventional_prob(scm, 1, 1) == pytest.approx(0.5)


def test_equal_pair_is_rejected():
    with pytest.raises(ValueError):
        pns_exact(xor_scm(), 1, 1, 1)


def test_single_valued_cause_has_no_exogeneity():
    with pytest.raises(ValueError):
        check_exogeneity(single_cause_scm())


def test_unknown_values_are_rejected():
    with pytest.raises(ValueError):
        pns_exact(xor_scm(), 2, 0, 1)
    with pytest.raises(ValueError):
        pns_exact(xor_scm(), 1, 0, 5)


def test_invalid_tables_are_rejected():
    with pytest.raises(ValueError):
        ScmSpec(
            noise_vars=[NoiseVar("u", (0, 1), (0.5, 0.6))],
            cause_support=(0, 1),
            outcome_support=(0, 1),
            outcome_fn=lambda z, a: z,
            cause_probs=(0.5, 0.5),
        )
    with pytest.raises(ValueError):
        ScmSpec(
            noise_vars=[NoiseVar("u", (0, 1), (0.5, 0.5))],
            cause_support=(0, 1),
            outcome_support=(0, 1),
            outcome_fn=lambda z, a: 2,
            cause_probs=(0.5, 0.5),
        )


def test_report_for_xor():
    report = pns_report(xor_scm(), 1, 0, 1)
    assert report.pns_exact == pytest.approx(0.85)
    assert report.pns_two_term == pytest.approx(0.85)
    assert report.exogenous
    assert not report.monotonic
    assert len(report.to_row()) == 9


def test_load_scm_example_files():
    xor = load_scm("example_configs/scm_xor.yaml")
    assert pns_exact(xor, 1, 0, 1) == pytest.approx(0.85, abs=1e-12)
    assert identified_estimand(xor, 1, 0, 1) == pytest.approx(0.70, abs=1e-12)
    conj = load_scm("example_configs/scm_and.yaml")
    assert pns_exact(conj, 1, 0, 1) == pytest.approx(0.9, abs=1e-12)
    assert check_monotonicity(conj, 1, 0, 1)


def test_load_scm_with_noise_dependent_cause(tmpdir):
    path = tmpdir.join("confounded.yaml")
    path.write(
        "noise:\n"
        "  u: {0: 0.5, 1: 0.5}\n"
        "cause:\n"
        "  support: [0, 1]\n"
        "  given: [u]\n"
        "  rows: [[0, 0.8, 0.2], [1, 0.2, 0.8]]\n"
        "outcome:\n"
        "  support: [0, 1]\n"
        "  inputs: [z, u]\n"
        "  rows: [[0, 0, 0], [0, 1, 1], [1, 0, 1], [1, 1, 0]]\n"
    )
    scm = load_scm(str(path))
    assert not check_exogeneity(scm)
    assert pns_exact(scm, 1, 0, 1) == pytest.approx(0.5)


def test_load_scm_rejects_partial_truth_table(tmpdir):
    path = tmpdir.join("partial.yaml")
    path.write(
        "noise:\n"
        "  u: {0: 0.5, 1: 0.5}\n"
        "cause: {support: [0, 1], probs: [0.5, 0.5]}\n"
        "outcome: {support: [0, 1], inputs: [z, u], rows: [[0, 0, 0], [1, 1, 1]]}\n"
    )
    with pytest.raises(ValueError):
        load_scm(str(path))
