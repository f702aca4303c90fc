"""Brute-force ground truth for the engine and the simulators.

Nothing here shares numerical code with :mod:`hypex.exponents`: the KL
programs are solved by enumerating lattice pmfs, the auxiliary-channel search
by enumerating lattice channels, and error probabilities by summing exact
rational masses over joint types.  Only the schemes' decision functions are
shared with :mod:`hypex.protocols`, by design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product as iproduct
from typing import Sequence

import numpy as np

from .errors import BudgetExceeded, SchemeNotDeterministic
from .exponents import ExponentPair, MarginalConstraint, RegionBoundary, simplex_lattice
from .probkit import HypothesisModel, JointPmf, marginalize

LATTICE_CAP = 10_000_000
SEQUENCE_CAP = 100_000_000


@dataclass(frozen=True)
class GridSpec:
    resolution: int
    dimension: int | None = None

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("grid resolution must be >= 2")

    def size(self) -> int:
        """Number of lattice pmfs with denominator ``resolution`` in ``dimension`` cells."""
        return math.comb(self.resolution + self.dimension - 1, self.dimension - 1)


def _count_bounds(goal: np.ndarray, k: int, slack: float | None):
    scaled = goal * k
    if slack is None:
        representable = np.all(np.abs(scaled - np.round(scaled)) < 1e-9)
        slack = 0.0 if representable else 1.0 / k
    lo = np.ceil((goal - slack) * k - 1e-9).astype(np.int64)
    hi = np.floor((goal + slack) * k + 1e-9).astype(np.int64)
    return np.maximum(lo, 0), hi


def lattice_points(shape, constraints: Sequence[MarginalConstraint], axes, k: int,
                   slack: float | None = None, cap: int = LATTICE_CAP) -> np.ndarray:
    """Count arrays (rows, flattened in C order) with total k meeting every constraint.

    A constraint's marginal must match its target exactly when the target is a
    multiple of 1/k, and to within ``slack`` per entry otherwise (default 1/k).
    """
    shape = tuple(shape)
    d = math.prod(shape)
    coords = np.array(np.unravel_index(np.arange(d), shape)).T
    groups = []
    for c in constraints:
        pos = [axes.index(r) for r in c.roles]
        gid = np.ravel_multi_index(tuple(coords[:, p] for p in pos), c.target.shape) if pos else np.zeros(d, dtype=np.int64)
        lo, hi = _count_bounds(c.target.mass.ravel(), k, slack)
        last = np.zeros(len(lo), dtype=np.int64)
        for cell, g in enumerate(gid):
            last[g] = cell
        groups.append((gid, lo, hi, last))

    rows = np.zeros((1, 0), dtype=np.int16)
    remaining = np.array([k], dtype=np.int64)
    sums = [np.zeros((1, len(lo)), dtype=np.int64) for _, lo, _, _ in groups]
    for cell in range(d):
        if cell == d - 1:
            vals = remaining.copy()
            rep = np.arange(len(rows))
        else:
            reps = remaining + 1
            total = int(reps.sum())
            if total > cap:
                raise BudgetExceeded(f"lattice frontier of {total} points exceeds cap {cap}")
            rep = np.repeat(np.arange(len(rows)), reps)
            starts = np.cumsum(reps) - reps
            vals = np.arange(total) - np.repeat(starts, reps)
        rows = np.concatenate([rows[rep], vals[:, None].astype(np.int16)], axis=1)
        remaining = remaining[rep] - vals
        keep = np.ones(len(rows), dtype=bool)
        new_sums = []
        for (gid, lo, hi, last), s in zip(groups, sums):
            s = s[rep].copy()
            g = gid[cell]
            s[:, g] += vals
            keep &= s[:, g] <= hi[g]
            if last[g] == cell:
                keep &= s[:, g] >= lo[g]
            # the remaining mass must still be able to fill every open group
            open_groups = last > cell
            need = np.clip(lo[None, open_groups] - s[:, open_groups], 0, None).sum(axis=1)
            keep &= need <= remaining
            new_sums.append(s)
        rows, remaining = rows[keep], remaining[keep]
        sums = [s[keep] for s in new_sums]
    return rows.astype(np.int64)


def grid_min_kl(target: JointPmf, constraints: Sequence[MarginalConstraint], grid: GridSpec | int,
                slack: float | None = None):
    """Minimum of D(Q || target) over lattice pmfs Q meeting the (relaxed) constraints.

    Returns ``(value, argmin)``; the value is +inf when no lattice point is
    feasible or every feasible point leaves the target's support.
    """
    k = grid if isinstance(grid, int) else grid.resolution
    pts = lattice_points(target.shape, constraints, target.axes, k, slack)
    if len(pts) == 0:
        return math.inf, None
    q = pts / k
    t = target.mass.ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * (np.log(np.where(q > 0, q, 1.0)) - np.log(t)[None, :]), 0.0)
    values = terms.sum(axis=1)
    i = int(np.argmin(values))
    if not math.isfinite(values[i]):
        return math.inf, None
    return float(max(values[i], 0.0)), JointPmf(target.axes, q[i].reshape(target.shape))


# -- exact error probabilities ----------------------------------------------

@dataclass(frozen=True)
class ExactErrors:
    """Exact decision distributions: ``decisions[k][m][d] = Pr[detector k declares d | H = m]``."""

    n: int
    M: int
    i1: int
    i2: int
    decisions: dict
    messages: dict

    def error(self, detector: int, hypothesis: int) -> Fraction:
        return 1 - self.decisions[detector][hypothesis].get(hypothesis, Fraction(0))

    def alpha(self, detector: int) -> Fraction:
        target = self.i1 if detector == 1 else self.i2
        return max(self.error(detector, m) for m in range(1, self.M + 1) if m != target)

    def beta(self, detector: int) -> Fraction:
        return self.error(detector, self.i1 if detector == 1 else self.i2)


def _exact_laws(model: HypothesisModel):
    """Each law as integer numerators over one common denominator (exact)."""
    laws = {}
    for m in range(1, model.M + 1):
        fr = [Fraction(float(v)) for v in model.pmf(m).mass.ravel()]
        total = sum(fr)
        fr = [f / total for f in fr]
        den = math.lcm(*(f.denominator for f in fr))
        laws[m] = ([f.numerator * (den // f.denominator) for f in fr], den)
    return laws


def enumerate_types(shape, n: int, cap: int = LATTICE_CAP) -> np.ndarray:
    d = math.prod(shape)
    if math.comb(n + d - 1, d - 1) > cap:
        raise BudgetExceeded(f"{math.comb(n + d - 1, d - 1)} joint types at n={n} exceed cap {cap}")
    return simplex_lattice(n, d).reshape((-1,) + tuple(shape))


def exact_error_probabilities(scheme, model: HypothesisModel, n: int, method: str = "types") -> ExactErrors:
    """Exact per-hypothesis decision probabilities of a deterministic scheme.

    ``method='types'`` aggregates sequences by joint type with multinomial
    weights; ``method='sequences'`` enumerates every sequence triple.  Both
    give identical rationals.
    """
    if not getattr(scheme, "deterministic", False):
        raise SchemeNotDeterministic(f"scheme {getattr(scheme, 'name', scheme)!r} uses private randomness")
    shape = model.shape
    d = math.prod(shape)
    laws = _exact_laws(model)
    if method == "types":
        types = enumerate_types(shape, n)
        flat = types.reshape(len(types), d)
        weights = [math.factorial(n) // math.prod(math.factorial(int(c)) for c in row) for row in flat]
        dec = scheme.decide(types, n)
    elif method == "sequences":
        if d ** n > SEQUENCE_CAP:
            raise BudgetExceeded(f"{d ** n} sequence tuples at n={n} exceed cap {SEQUENCE_CAP}")
        seqs = np.array(list(iproduct(range(d), repeat=n)), dtype=np.int64).reshape(-1, n)
        flat = np.zeros((len(seqs), d), dtype=np.int64)
        for t in range(n):
            flat[np.arange(len(seqs)), seqs[:, t]] += 1
        weights = [1] * len(flat)
        dec = scheme.decide(flat.reshape((-1,) + tuple(shape)), n)
    else:
        raise ValueError(f"unknown method {method!r}")

    decisions = {1: {}, 2: {}}
    messages = {}
    for m, (nums, den) in laws.items():
        powers = [[1] * (n + 1) for _ in range(d)]
        for a in range(d):
            for c in range(1, n + 1):
                powers[a][c] = powers[a][c - 1] * nums[a]
        mass = [w * math.prod(powers[a][int(c)] for a, c in enumerate(row)) for w, row in zip(weights, flat)]
        scale = den ** n
        for k, arr in ((1, dec.d1), (2, dec.d2)):
            acc = {}
            for v, p in zip(arr.tolist(), mass):
                acc[v] = acc.get(v, 0) + p
            decisions[k][m] = {v: Fraction(p, scale) for v, p in sorted(acc.items())}
        acc = {}
        for key, p in zip(zip(dec.m1.tolist(), dec.m2.tolist()), mass):
            acc[key] = acc.get(key, 0) + p
        messages[m] = {key: Fraction(p, scale) for key, p in sorted(acc.items())}
    return ExactErrors(n, model.M, model.i1, model.i2, decisions, messages)


def sequence_trace(scheme, shape, n: int):
    """Decisions for every sequence triple, as (sequences, Decisions)."""
    d = math.prod(shape)
    if d ** n > SEQUENCE_CAP:
        raise BudgetExceeded(f"{d ** n} sequence tuples exceed cap {SEQUENCE_CAP}")
    seqs = np.array(list(iproduct(range(d), repeat=n)), dtype=np.int64).reshape(-1, n)
    counts = np.zeros((len(seqs), d), dtype=np.int64)
    for t in range(n):
        counts[np.arange(len(seqs)), seqs[:, t]] += 1
    return seqs, scheme.decide(counts.reshape((-1,) + tuple(shape)), n)


# -- exhaustive auxiliary-channel search ------------------------------------

def _plogp_sum(p: np.ndarray, axes) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -t.sum(axis=axes)


def channel_informations(P: JointPmf, W: np.ndarray) -> np.ndarray:
    """(I(U;X), I(U;Y1), I(U;Y2)) for a batch of channels W[b, x, u], via entropies."""
    pm = P.mass
    px = pm.sum(axis=(1, 2))
    pxy1 = pm.sum(axis=2)
    pxy2 = pm.sum(axis=1)
    ux = W * px[None, :, None]
    pu = ux.sum(axis=1)
    h_u = _plogp_sum(pu, 1)
    out = [h_u + _plogp_sum(px, 0) - _plogp_sum(ux, (1, 2))]
    for pxy in (pxy1, pxy2):
        uy = np.einsum("bxu,xy->buy", W, pxy)
        out.append(h_u + _plogp_sum(pxy.sum(axis=0), 0) - _plogp_sum(uy, (1, 2)))
    return np.maximum(np.stack(out, axis=1), 0.0)


def pareto_front(pairs: np.ndarray) -> np.ndarray:
    """Indices of the Pareto-maximal rows of an (N, 2) array, sorted by the first column."""
    order = np.lexsort((-pairs[:, 1], -pairs[:, 0]))
    keep = []
    best2 = -math.inf
    for i in order:
        if pairs[i, 1] > best2:
            keep.append(i)
            best2 = pairs[i, 1]
    return np.array(keep[::-1], dtype=np.int64)


def exhaustive_aux_search(P: JointPmf, R1: float, u_card: int, grid: GridSpec | int) -> RegionBoundary:
    """Exact Pareto frontier of (I(U;Y1), I(U;Y1)+I(U;Y2)) over lattice channels with I(U;X) <= R1."""
    k = grid if isinstance(grid, int) else grid.resolution
    nx = P.size_of("X")
    rows = simplex_lattice(k, u_card) / k
    total = len(rows) ** nx
    if total > LATTICE_CAP:
        raise BudgetExceeded(f"{total} lattice channels exceed cap {LATTICE_CAP}")
    step = max(1, 200_000 // max(len(rows), 1))
    idx_iter = iproduct(range(len(rows)), repeat=nx)
    pool_pairs, pool_w = [], []
    while True:
        block = [next(idx_iter, None) for _ in range(step)]
        block = [b for b in block if b is not None]
        if not block:
            break
        W = rows[np.array(block)]
        info = channel_informations(P, W)
        ok = info[:, 0] <= R1 + 1e-12
        pairs = np.stack([info[ok, 1], info[ok, 1] + info[ok, 2]], axis=1)
        if len(pairs):
            front = pareto_front(pairs)
            pool_pairs.append(pairs[front])
            pool_w.append(W[ok][front])
    pairs = np.concatenate(pool_pairs)
    Ws = np.concatenate(pool_w)
    front = pareto_front(pairs)
    points = tuple(ExponentPair(*pairs[i]) for i in front)
    return RegionBoundary(points, {"oracle": "exhaustive_aux_search", "resolution": k, "u_card": u_card, "R1": R1},
                          tuple(Ws[i] for i in front))
