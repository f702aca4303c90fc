import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hypex.errors import (
    AbsoluteContinuityViolated,
    AxisMismatch,
    InvariantViolation,
    LengthMismatch,
    NegativeMass,
    NotNormalized,
    SymbolOutOfRange,
)
from hypex.probkit import (
    Alphabet,
    Channel,
    EmpiricalType,
    HypothesisModel,
    JointPmf,
    compose,
    empirical_type,
    entropy,
    is_delta_typical,
    kl_divergence,
    marginalize,
    mutual_information,
    product,
    testing_against_independence,
    typical_counts,
    validate,
)

from conftest import product_pmf, random_positive


def pmf_arrays(max_cells=8, positive=False):
    """Hypothesis strategy: a 2-axis pmf array with at most ``max_cells`` cells."""
    @st.composite
    def build(draw):
        a = draw(st.integers(1, 4))
        b = draw(st.integers(1, max(1, max_cells // a)))
        # exact zeros are allowed, tiny magnitudes are not: their products underflow
        entry = st.floats(0.05, 1.0) if positive else st.one_of(st.just(0.0), st.floats(1e-6, 1.0))
        w = draw(arrays(np.float64, (a, b), elements=entry))
        if w.sum() <= 0:
            w = np.ones((a, b))
        return w / w.sum()
    return build()


# -- validation and construction --------------------------------------------

def test_uniform_is_valid():
    validate(JointPmf.uniform(("X", "Y1", "Y2"), (2, 2, 2)))


def test_mass_summing_below_one_is_rejected():
    with pytest.raises(NotNormalized):
        JointPmf(("X",), [0.49, 0.49])


def test_negative_entry_is_rejected():
    with pytest.raises(NegativeMass):
        JointPmf(("X",), [1.1, -0.1])


def test_axes_are_stored_canonically():
    m = np.array([[0.1, 0.2, 0.3], [0.1, 0.2, 0.1]])  # indexed [y1][x]
    p = JointPmf(("Y1", "X"), m)
    assert p.axes == ("X", "Y1")
    assert p.shape == (3, 2)
    np.testing.assert_array_equal(p.mass, m.T)
    assert not p.mass.flags.writeable


def test_unknown_or_repeated_role_is_rejected():
    with pytest.raises(AxisMismatch):
        JointPmf(("W",), [1.0])
    with pytest.raises(AxisMismatch):
        JointPmf(("X", "X"), [[0.5, 0], [0, 0.5]])


def test_alphabet_invariants():
    Alphabet(3, ("a", "b", "c"))
    with pytest.raises(InvariantViolation):
        Alphabet(0)
    with pytest.raises(InvariantViolation):
        Alphabet(2, ("a", "a"))
    with pytest.raises(InvariantViolation):
        Alphabet(2, ("a",))


def test_model_needs_two_hypotheses_and_valid_targets():
    p = JointPmf.uniform(("X", "Y1", "Y2"), (2, 2, 2))
    with pytest.raises(InvariantViolation):
        HypothesisModel((p,), 1, 1)
    with pytest.raises(InvariantViolation):
        HypothesisModel((p, p), 1, 3)
    q = JointPmf.uniform(("X", "Y1", "Y2"), (2, 3, 2))
    with pytest.raises(InvariantViolation):
        HypothesisModel((p, q), 2, 2)
    m = HypothesisModel.two_hypothesis(p, p)
    assert (m.M, m.i1, m.i2, m.cooperative) == (2, 2, 2, True)


# -- marginals ----------------------------------------------------------------

def test_marginal_of_product_is_factor():
    px = np.array([0.3, 0.7])
    p = product(JointPmf(("X",), px), JointPmf(("Y1",), [0.4, 0.6]))
    np.testing.assert_allclose(marginalize(p, "X").mass, px)


def test_marginal_keep_all_is_identity():
    p = JointPmf(("X", "Y1"), [[0.1, 0.2], [0.3, 0.4]])
    assert marginalize(p, ("Y1", "X")) == p


def test_marginal_by_hand():
    p = JointPmf(("X", "Y1"), [[0.1, 0.2], [0.3, 0.4]])
    np.testing.assert_allclose(marginalize(p, "X").mass, [0.3, 0.7])


def test_marginal_of_missing_axis_fails():
    p = JointPmf(("X",), [0.5, 0.5])
    with pytest.raises(AxisMismatch):
        marginalize(p, "Y1")


# -- divergences and information ---------------------------------------------

def test_kl_self_is_zero():
    p = JointPmf(("X", "Y1"), [[0.1, 0.2], [0.3, 0.4]])
    assert kl_divergence(p, p) == 0.0


def test_kl_bernoulli_by_hand():
    p = JointPmf(("X",), [0.5, 0.5])
    q = JointPmf(("X",), [0.25, 0.75])
    assert kl_divergence(p, q) == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3), abs=1e-15)


def test_kl_disjoint_support_is_an_error():
    with pytest.raises(AbsoluteContinuityViolated):
        kl_divergence(JointPmf(("X",), [1.0, 0.0]), JointPmf(("X",), [0.0, 1.0]))


def test_kl_in_bits():
    p = JointPmf(("X",), [0.5, 0.5])
    q = JointPmf(("X",), [0.25, 0.75])
    assert kl_divergence(p, q, base=2) == pytest.approx(kl_divergence(p, q) / math.log(2))


def test_mutual_information_examples():
    assert mutual_information(product_pmf([0.3, 0.7], [0.6, 0.4], [0.5, 0.5]), "X", "Y1") == pytest.approx(0, abs=1e-15)
    same = JointPmf(("X", "Y1"), [[0.5, 0.0], [0.0, 0.5]])
    assert mutual_information(same, "X", "Y1") == pytest.approx(math.log(2), abs=1e-14)
    eps = 0.1
    bsc = JointPmf(("X", "Y1"), 0.5 * np.array([[1 - eps, eps], [eps, 1 - eps]]))
    h = -eps * math.log(eps) - (1 - eps) * math.log(1 - eps)
    assert mutual_information(bsc, "X", "Y1") == pytest.approx(math.log(2) - h, abs=1e-14)


def test_entropy_examples():
    assert entropy(JointPmf.uniform(("X",), (5,)), "X") == pytest.approx(math.log(5))
    assert entropy(JointPmf.point(("X", "Y1"), (2, 3), (1, 2)), ("X", "Y1")) == 0.0
    same = JointPmf(("X", "Y1"), [[0.2, 0.0], [0.0, 0.8]])
    assert entropy(same, "Y1", given="X") == pytest.approx(0.0, abs=1e-15)


def test_conditional_mutual_information_vanishes_for_markov_chain():
    rng = np.random.default_rng(3)
    px = rng.dirichlet(np.ones(3))
    a = rng.dirichlet(np.ones(2), size=3)
    b = rng.dirichlet(np.ones(2), size=2)
    mass = px[:, None, None] * a[:, :, None] * b[None, :, :]  # X -> Y1 -> Y2
    p = JointPmf(("X", "Y1", "Y2"), mass)
    assert mutual_information(p, "X", "Y2", given="Y1") == pytest.approx(0.0, abs=1e-14)
    assert mutual_information(p, "X", "Y2") > 0


@settings(max_examples=60, deadline=None)
@given(pmf_arrays(), pmf_arrays())
def test_kl_nonnegative_and_zero_only_at_equality(a, b):
    if a.shape != b.shape:
        b = np.full(a.shape, 1.0 / a.size)
    p = JointPmf(("X", "Y1"), a)
    q = JointPmf(("X", "Y1"), 0.5 * b + 0.5 / b.size)
    d = kl_divergence(p, q)
    assert d >= 0
    if d < 1e-14:
        assert np.allclose(p.mass, q.mass, atol=1e-6)
    assert kl_divergence(q, q) == 0.0


@settings(max_examples=60, deadline=None)
@given(pmf_arrays())
def test_mutual_information_equals_kl_to_product(a):
    p = JointPmf(("X", "Y1"), a)
    ref = product(marginalize(p, "X"), marginalize(p, "Y1"))
    assert mutual_information(p, "X", "Y1") == pytest.approx(kl_divergence(p, ref), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(pmf_arrays())
def test_entropy_chain_rule(a):
    p = JointPmf(("X", "Y1"), a)
    lhs = entropy(p, ("X", "Y1"))
    rhs = entropy(p, "X") + entropy(p, "Y1", given="X")
    assert lhs == pytest.approx(rhs, abs=1e-10)


# -- channels ------------------------------------------------------------------

def test_channel_rows_must_normalise():
    with pytest.raises(NotNormalized):
        Channel(("X",), ("U",), [[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(NegativeMass):
        Channel(("X",), ("U",), [[1.2, -0.2], [0.5, 0.5]])


def test_identity_channel_duplicates_axis():
    px = JointPmf(("X",), [0.3, 0.7])
    joint = compose(px, Channel.identity("X", "U", 2))
    np.testing.assert_allclose(joint.mass, np.diag([0.3, 0.7]))


def test_compose_then_marginalize_is_total_probability():
    px = np.array([0.2, 0.8])
    W = np.array([[0.9, 0.1], [0.3, 0.7]])
    joint = compose(JointPmf(("X",), px), Channel(("X",), ("U",), W))
    np.testing.assert_allclose(marginalize(joint, "U").mass, px @ W)


def test_local_channel_keeps_independence():
    pbar = JointPmf(("X", "Y1"), np.outer([0.4, 0.6], [0.3, 0.7]))
    joint = compose(pbar, Channel(("X",), ("U",), [[0.8, 0.2], [0.1, 0.9]]))
    assert mutual_information(joint, "U", "Y1") == pytest.approx(0.0, abs=1e-15)


def test_compose_rejects_bad_axes():
    px = JointPmf(("X",), [0.5, 0.5])
    with pytest.raises(AxisMismatch):
        compose(px, Channel(("Y1",), ("U",), np.eye(2)))
    with pytest.raises(AxisMismatch):
        compose(px, Channel(("X",), ("U",), np.eye(3)))


# -- types and typicality --------------------------------------------------------

def test_empirical_type_examples():
    t = empirical_type([(0, 0, 1, 1)])
    assert t.n == 4 and t.counts.tolist() == [2, 2]
    t = empirical_type([(1,)], sizes=(3,))
    assert t.counts.tolist() == [0, 1, 0]
    t = empirical_type([(0, 1), (1, 1)], sizes=(2, 2))
    assert t.counts[0, 1] == 1 and t.counts[1, 1] == 1 and t.counts.sum() == 2


def test_empirical_type_errors():
    with pytest.raises(LengthMismatch):
        empirical_type([(0, 1), (1,)])
    with pytest.raises(SymbolOutOfRange):
        empirical_type([(0, 2)], sizes=(2,))
    with pytest.raises(LengthMismatch):
        EmpiricalType([1, 1], 3)


def test_fractions_sum_to_one_exactly():
    t = empirical_type([(0, 1, 2, 2, 1, 0, 0)], sizes=(3,))
    assert sum(t.fractions()) == Fraction(1)


def test_typicality_examples():
    ref = JointPmf(("X",), [0.5, 0.5])
    t = EmpiricalType([3, 2], 5)
    assert is_delta_typical(t, ref, 0.1)
    assert not is_delta_typical(t, ref, 0.05)
    exact = EmpiricalType([2, 2], 4)
    assert is_delta_typical(exact, ref, 0.0)
    assert not is_delta_typical(t, ref, 0.0)


def test_typicality_axis_check():
    with pytest.raises(AxisMismatch):
        is_delta_typical(EmpiricalType([1, 1], 2, ("Y1",)), JointPmf(("X",), [0.5, 0.5]), 0.1)


def test_typical_counts_batches():
    ref = np.array([0.5, 0.5])
    counts = np.array([[5, 5], [7, 3], [9, 1]])
    assert typical_counts(counts, 10, ref, 0.2).tolist() == [True, True, False]


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 30), st.floats(0, 0.5), st.floats(0, 0.5), st.integers(0, 2**32 - 1))
def test_typicality_monotone_in_delta(n, d1, d2, seed):
    lo, hi = sorted((d1, d2))
    rng = np.random.default_rng(seed)
    ref = rng.dirichlet(np.ones(4))
    counts = rng.multinomial(n, rng.dirichlet(np.ones(4)))
    t = EmpiricalType(counts, n)
    r = JointPmf(("X",), ref)
    if is_delta_typical(t, r, lo):
        assert is_delta_typical(t, r, hi)


def test_iid_type_converges():
    rng = np.random.default_rng(11)
    law = random_positive(rng, (2, 3))
    failures = 0
    for _ in range(100):
        cells = rng.choice(law.size, size=100_000, p=law.ravel())
        x, y = np.unravel_index(cells, law.shape)
        t = empirical_type([x, y], sizes=law.shape)
        failures += np.abs(t.freq - law).max() >= 0.01
    assert failures <= 1


def test_testing_against_independence_is_product_of_marginals():
    rng = np.random.default_rng(5)
    p = JointPmf(("X", "Y1", "Y2"), random_positive(rng, (2, 3, 2)))
    q = testing_against_independence(p)
    for r in ("X", "Y1", "Y2"):
        np.testing.assert_allclose(marginalize(q, r).mass, marginalize(p, r).mass)
    assert mutual_information(q, "X", ("Y1", "Y2")) == pytest.approx(0, abs=1e-14)
