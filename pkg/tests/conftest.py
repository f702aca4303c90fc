"""Fixture generators shared by the test modules."""

import numpy as np
import pytest

from hypex.probkit import SOURCE_AXES, JointPmf, HypothesisModel


def random_positive(rng, shape, floor=0.02):
    """Strictly positive pmf array with every entry at least ``floor`` / size."""
    w = rng.dirichlet(np.ones(int(np.prod(shape))))
    w = (1 - floor) * w + floor / w.size
    return w.reshape(shape)


def lattice_array(rng, shape, k):
    """Strictly positive pmf whose entries are multiples of 1/k."""
    cells = int(np.prod(shape))
    counts = np.ones(cells, dtype=int) + rng.multinomial(k - cells, np.ones(cells) / cells)
    return (counts / k).reshape(shape)


def source_pmf(mass):
    return JointPmf(SOURCE_AXES, mass)


def product_pmf(*marginals):
    """Product law over (X, Y1, Y2) from three 1-d arrays."""
    a, b, c = (np.asarray(m, dtype=float) for m in marginals)
    return source_pmf(a[:, None, None] * b[None, :, None] * c[None, None, :])


def independent_sides_pmf(rng, nx=2, ny1=2, ny2=2, strength=0.8):
    """P over (X, Y1, Y2) with P_{Y1Y2} = P_Y1 P_Y2 exactly while X drives both.

    Each conditional P(y1, y2 | x) is a product base law plus a perturbation
    that sums to zero for every x and averages to zero under P_X.
    """
    px = rng.dirichlet(np.ones(nx) * 2)
    q1 = rng.dirichlet(np.ones(ny1) * 3)
    q2 = rng.dirichlet(np.ones(ny2) * 3)
    base = q1[:, None] * q2[None, :]
    d = rng.normal(size=(nx, ny1, ny2))
    d -= d.mean(axis=(1, 2), keepdims=True)
    d -= np.tensordot(px, d, axes=1)[None]
    # largest step keeping every conditional nonnegative
    lim = np.min(np.where(d < 0, base[None] / np.where(d < 0, -d, 1.0), np.inf))
    cond = base[None] + strength * lim * d
    return source_pmf(px[:, None, None] * cond)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def coop_model():
    """Binary cooperative model with a strictly positive alternative."""
    px = np.array([0.5, 0.5])
    A = np.array([[0.8, 0.2], [0.4, 0.6]])
    P = source_pmf(px[:, None, None] * A[:, :, None] * np.array([0.3, 0.7])[None, None, :])
    Pbar = product_pmf([0.6, 0.4], [0.5, 0.5], [0.45, 0.55])
    return P, Pbar


@pytest.fixture
def three_hypotheses():
    """Three product laws with X-marginals at least 0.2 apart."""
    laws = [
        product_pmf([0.2, 0.8], [0.3, 0.7], [0.25, 0.75]),
        product_pmf([0.5, 0.5], [0.6, 0.4], [0.55, 0.45]),
        product_pmf([0.8, 0.2], [0.8, 0.2], [0.85, 0.15]),
    ]
    return HypothesisModel(tuple(laws), 1, 2)
