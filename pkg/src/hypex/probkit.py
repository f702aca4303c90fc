"""Finite-alphabet probability primitives.

Joint pmfs are dense arrays whose axes are named by *role*.  Roles always
appear in the canonical order ``X, Y1, Y2, U, V`` so that two pmfs over the
same roles are index-compatible without any bookkeeping.  All information
quantities are in nats unless a ``base`` is passed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, InitVar
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AbsoluteContinuityViolated,
    AxisMismatch,
    InvariantViolation,
    LengthMismatch,
    NegativeMass,
    NotNormalized,
    SymbolOutOfRange,
)

ROLES = ("X", "Y1", "Y2", "U", "V")
SOURCE_AXES = ("X", "Y1", "Y2")

SUM_TOL = 1e-12
# Typicality is decided in count units; this absorbs float noise in n*delta.
TYPICALITY_SLACK = 1e-9


def _role_tuple(roles) -> tuple[str, ...]:
    if isinstance(roles, str):
        roles = (roles,)
    roles = tuple(roles)
    for r in roles:
        if r not in ROLES:
            raise AxisMismatch(f"unknown role {r!r}; expected one of {ROLES}")
    if len(set(roles)) != len(roles):
        raise AxisMismatch(f"repeated role in {roles}")
    return roles


def canonical(roles) -> tuple[str, ...]:
    return tuple(sorted(_role_tuple(roles), key=ROLES.index))


@dataclass(frozen=True)
class Alphabet:
    size: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise InvariantViolation([f"alphabet size must be a positive integer, got {self.size!r}"])
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != self.size or len(set(labels)) != self.size:
                raise InvariantViolation([f"labels must be {self.size} distinct names, got {list(labels)}"])
            object.__setattr__(self, "labels", labels)


@dataclass(frozen=True, eq=False)
class JointPmf:
    """A pmf over a product of role alphabets.

    ``mass`` is reordered on construction so that ``axes`` is canonical. The
    stored array is read-only.
    """

    axes: tuple[str, ...]
    mass: np.ndarray
    check: InitVar[bool] = True

    def __post_init__(self, check):
        axes = _role_tuple(self.axes)
        mass = np.array(self.mass, dtype=float)
        if mass.ndim != len(axes):
            raise AxisMismatch(f"mass has {mass.ndim} dimensions but {len(axes)} axes were declared")
        order = sorted(range(len(axes)), key=lambda i: ROLES.index(axes[i]))
        mass = np.ascontiguousarray(np.transpose(mass, order))
        mass.setflags(write=False)
        object.__setattr__(self, "axes", tuple(axes[i] for i in order))
        object.__setattr__(self, "mass", mass)
        if check:
            validate(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mass.shape

    def size_of(self, role: str) -> int:
        return self.mass.shape[self.axis_index(role)]

    def axis_index(self, role: str) -> int:
        try:
            return self.axes.index(role)
        except ValueError:
            raise AxisMismatch(f"role {role!r} not among axes {self.axes}") from None

    def marginal(self, keep) -> "JointPmf":
        return marginalize(self, keep)

    def allclose(self, other: "JointPmf", atol: float = 1e-10) -> bool:
        return self.axes == other.axes and self.shape == other.shape and bool(
            np.allclose(self.mass, other.mass, rtol=0.0, atol=atol)
        )

    def __eq__(self, other):
        if not isinstance(other, JointPmf):
            return NotImplemented
        return self.axes == other.axes and np.array_equal(self.mass, other.mass)

    def __hash__(self):
        return hash((self.axes, self.mass.tobytes()))

    def __repr__(self):
        return f"JointPmf(axes={self.axes}, shape={self.shape})"

    @classmethod
    def uniform(cls, axes, shape) -> "JointPmf":
        shape = tuple(shape)
        return cls(axes, np.full(shape, 1.0 / math.prod(shape)))

    @classmethod
    def point(cls, axes, shape, index) -> "JointPmf":
        mass = np.zeros(tuple(shape))
        mass[tuple(index)] = 1.0
        return cls(axes, mass)


def product(*pmfs: JointPmf) -> JointPmf:
    """Independent product of pmfs over disjoint roles."""
    axes: tuple[str, ...] = ()
    mass = np.ones(())
    for p in pmfs:
        if set(axes) & set(p.axes):
            raise AxisMismatch(f"product of overlapping roles {axes} and {p.axes}")
        mass = np.multiply.outer(mass, p.mass)
        axes = axes + p.axes
    return JointPmf(axes, mass)


def validate(pmf: JointPmf) -> None:
    """Raise on the first violated pmf invariant; return None otherwise."""
    mass = pmf.mass
    if not np.all(np.isfinite(mass)):
        raise NotNormalized("mass contains non-finite entries")
    if mass.size and mass.min() < 0:
        idx = np.unravel_index(np.argmin(mass), mass.shape)
        raise NegativeMass(f"negative mass {mass[idx]!r} at index {tuple(int(i) for i in idx)}")
    total = float(mass.sum())
    if abs(total - 1.0) > SUM_TOL:
        raise NotNormalized(f"mass sums to {total!r}, not 1")
    if list(pmf.axes) != sorted(pmf.axes, key=ROLES.index):
        raise AxisMismatch(f"axes {pmf.axes} are not in canonical order")


def marginalize(pmf: JointPmf, keep) -> JointPmf:
    keep = canonical(keep)
    missing = set(keep) - set(pmf.axes)
    if missing:
        raise AxisMismatch(f"cannot keep {sorted(missing)}: not among axes {pmf.axes}")
    drop = tuple(i for i, r in enumerate(pmf.axes) if r not in keep)
    return JointPmf(keep, pmf.mass.sum(axis=drop) if drop else pmf.mass)


def _nats_to(base):
    return 1.0 if base is None else 1.0 / math.log(base)


def kl_divergence(p: JointPmf, q: JointPmf, base: float | None = None) -> float:
    """D(p || q), with 0 log 0 = 0. Raises when p is not dominated by q."""
    if p.axes != q.axes or p.shape != q.shape:
        raise AxisMismatch(f"KL between {p.axes}{p.shape} and {q.axes}{q.shape}")
    return kl_arrays(p.mass, q.mass) * _nats_to(base)


def kl_arrays(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    support = p > 0
    if np.any(support & (q <= 0)):
        raise AbsoluteContinuityViolated("p assigns mass where q has none")
    ps, qs = p[support], q[support]
    return float(max(np.sum(ps * np.log(ps / qs)), 0.0))


def _entropy_array(mass: np.ndarray) -> float:
    m = mass[mass > 0]
    return float(max(-np.sum(m * np.log(m)), 0.0))


def entropy(pmf: JointPmf, roles, given=(), base: float | None = None) -> float:
    """H(roles | given); the conditional form is H(roles, given) - H(given)."""
    roles = canonical(roles)
    given = canonical(given)
    if set(roles) & set(given):
        raise AxisMismatch(f"roles {roles} and conditioning {given} overlap")
    joint = _entropy_array(marginalize(pmf, roles + given).mass)
    cond = _entropy_array(marginalize(pmf, given).mass) if given else 0.0
    return max(joint - cond, 0.0) * _nats_to(base)


def mutual_information(pmf: JointPmf, group_a, group_b, given=(), base: float | None = None) -> float:
    """I(A; B | C) computed as D(P_ABC || P_A|C P_B|C P_C)."""
    a, b, c = canonical(group_a), canonical(group_b), canonical(given)
    if set(a) & set(b) or set(c) & (set(a) | set(b)):
        raise AxisMismatch(f"groups {a}, {b} and conditioning {c} must be disjoint")
    if not a or not b:
        raise AxisMismatch("mutual information needs two non-empty groups")
    abc = marginalize(pmf, a + b + c)
    ax = abc.axes
    letters = "abcdefghij"
    idx = {r: letters[i] for i, r in enumerate(ax)}
    sa = "".join(idx[r] for r in ax if r in a or r in c)
    sb = "".join(idx[r] for r in ax if r in b or r in c)
    sc = "".join(idx[r] for r in ax if r in c)
    full = "".join(idx[r] for r in ax)
    ac = marginalize(abc, a + c).mass
    bc = marginalize(abc, b + c).mass
    pc = marginalize(abc, c).mass if c else np.ones(())
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_c = np.where(pc > 0, 1.0 / np.where(pc > 0, pc, 1.0), 0.0)
    reference = np.einsum(f"{sa},{sb},{sc}->{full}", ac, bc, inv_c)
    return kl_arrays(abc.mass, reference) * _nats_to(base)


@dataclass(frozen=True, eq=False)
class Channel:
    """Conditional pmf P(outputs | inputs); mass has input axes first."""

    input_axes: tuple[str, ...]
    output_axes: tuple[str, ...]
    mass: np.ndarray
    check: InitVar[bool] = True

    def __post_init__(self, check):
        ins = _role_tuple(self.input_axes)
        outs = _role_tuple(self.output_axes)
        if set(ins) & set(outs):
            raise AxisMismatch(f"channel inputs {ins} and outputs {outs} overlap")
        mass = np.array(self.mass, dtype=float)
        if mass.ndim != len(ins) + len(outs):
            raise AxisMismatch(f"channel mass has {mass.ndim} dims, expected {len(ins) + len(outs)}")
        in_order = sorted(range(len(ins)), key=lambda i: ROLES.index(ins[i]))
        out_order = sorted(range(len(outs)), key=lambda i: ROLES.index(outs[i]))
        perm = in_order + [len(ins) + i for i in out_order]
        mass = np.ascontiguousarray(np.transpose(mass, perm))
        mass.setflags(write=False)
        object.__setattr__(self, "input_axes", tuple(ins[i] for i in in_order))
        object.__setattr__(self, "output_axes", tuple(outs[i] for i in out_order))
        object.__setattr__(self, "mass", mass)
        if check:
            self.validate()

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.mass.shape[: len(self.input_axes)]

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.mass.shape[len(self.input_axes):]

    def rows(self) -> np.ndarray:
        """Mass reshaped to (input combinations, output combinations)."""
        return self.mass.reshape(math.prod(self.input_shape), math.prod(self.output_shape))

    def validate(self) -> None:
        rows = self.rows()
        if not np.all(np.isfinite(rows)):
            raise NotNormalized("channel contains non-finite entries")
        if rows.size and rows.min() < 0:
            raise NegativeMass(f"channel has negative entry {rows.min()!r}")
        sums = rows.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > SUM_TOL)
        if bad.size:
            raise NotNormalized(f"channel row {int(bad[0])} sums to {sums[bad[0]]!r}")

    @classmethod
    def identity(cls, source: str, target: str, size: int) -> "Channel":
        return cls((source,), (target,), np.eye(size))

    @classmethod
    def constant(cls, input_axes, input_shape, output: str, dist=(1.0,)) -> "Channel":
        dist = np.asarray(dist, dtype=float)
        mass = np.broadcast_to(dist, tuple(input_shape) + dist.shape)
        return cls(input_axes, (output,), mass)


def compose(pmf: JointPmf, ch: Channel) -> JointPmf:
    """Joint law pmf(a) * ch(b | a_inputs); outputs depend only on the channel inputs."""
    if not set(ch.input_axes) <= set(pmf.axes):
        raise AxisMismatch(f"channel inputs {ch.input_axes} not among pmf axes {pmf.axes}")
    if set(ch.output_axes) & set(pmf.axes):
        raise AxisMismatch(f"channel outputs {ch.output_axes} already present in {pmf.axes}")
    for r, s in zip(ch.input_axes, ch.input_shape):
        if pmf.size_of(r) != s:
            raise AxisMismatch(f"channel expects |{r}|={s}, pmf has {pmf.size_of(r)}")
    letters = "abcdefghij"
    idx = {r: letters[i] for i, r in enumerate(pmf.axes + ch.output_axes)}
    sp = "".join(idx[r] for r in pmf.axes)
    sc = "".join(idx[r] for r in ch.input_axes + ch.output_axes)
    out = sp + "".join(idx[r] for r in ch.output_axes)
    mass = np.einsum(f"{sp},{sc}->{out}", pmf.mass, ch.mass)
    return JointPmf(pmf.axes + ch.output_axes, mass)


@dataclass(frozen=True, eq=False)
class EmpiricalType:
    counts: np.ndarray
    n: int
    axes: tuple[str, ...] | None = None

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        if int(counts.sum()) != self.n:
            raise LengthMismatch(f"counts sum to {int(counts.sum())}, not n={self.n}")

    @property
    def freq(self) -> np.ndarray:
        return self.counts / self.n

    def fractions(self) -> np.ndarray:
        return np.vectorize(lambda c: Fraction(int(c), self.n), otypes=[object])(self.counts)


def empirical_type(sequences, sizes: Sequence[int] | None = None, axes=None) -> EmpiricalType:
    """Joint type of equal-length symbol sequences (one sequence per component)."""
    seqs = [np.asarray(s) for s in sequences]
    if seqs and seqs[0].ndim == 0:
        seqs = [np.asarray(sequences)]
    if not seqs:
        raise LengthMismatch("no sequences given")
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise LengthMismatch(f"component sequences have different lengths {sorted(lengths)}")
    n = lengths.pop()
    if n < 1:
        raise LengthMismatch("sequences must have length >= 1")
    for s in seqs:
        if not np.issubdtype(s.dtype, np.integer):
            raise SymbolOutOfRange(f"symbols must be integers, got dtype {s.dtype}")
    if sizes is None:
        sizes = [int(s.max()) + 1 for s in seqs]
    sizes = tuple(int(k) for k in sizes)
    if len(sizes) != len(seqs):
        raise LengthMismatch(f"{len(seqs)} sequences but {len(sizes)} alphabet sizes")
    for i, (s, k) in enumerate(zip(seqs, sizes)):
        if s.min() < 0 or s.max() >= k:
            raise SymbolOutOfRange(f"component {i} has a symbol outside 0..{k - 1}")
    flat = np.ravel_multi_index(tuple(seqs), sizes)
    counts = np.bincount(flat, minlength=math.prod(sizes)).reshape(sizes)
    if axes is not None:
        axes = _role_tuple(axes)
        if len(axes) != len(sizes):
            raise AxisMismatch(f"{len(axes)} axes for {len(sizes)} components")
    return EmpiricalType(counts, n, axes)


def typical_counts(counts: np.ndarray, n: int, ref: np.ndarray, delta: float) -> np.ndarray:
    """Vectorised entry-wise typicality: |count/n - ref| <= delta in every cell.

    ``counts`` may carry leading batch dimensions; the trailing dimensions must
    match ``ref``.  Returns a boolean array over the batch dimensions.
    """
    ref = np.asarray(ref, dtype=float)
    nd = ref.ndim
    if counts.shape[counts.ndim - nd:] != ref.shape:
        raise AxisMismatch(f"type shape {counts.shape[counts.ndim - nd:]} does not match reference {ref.shape}")
    dev = np.abs(counts - n * ref)
    ok = dev <= n * delta + TYPICALITY_SLACK
    return ok.reshape(ok.shape[: ok.ndim - nd] + (-1,)).all(axis=-1)


def is_delta_typical(t: EmpiricalType, ref: JointPmf, delta: float) -> bool:
    if t.axes is not None and t.axes != ref.axes:
        raise AxisMismatch(f"type axes {t.axes} differ from reference axes {ref.axes}")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return bool(typical_counts(t.counts, t.n, ref.mass, delta))


@dataclass(frozen=True, eq=False)
class HypothesisModel:
    """M candidate joint laws over (X, Y1, Y2) and the detectors' target hypotheses.

    Hypothesis indices are 1-based, as in the problem statement.
    """

    pmfs: tuple[JointPmf, ...]
    i1: int
    i2: int
    alphabets: dict = field(default_factory=dict)
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        pmfs = tuple(self.pmfs)
        object.__setattr__(self, "pmfs", pmfs)
        problems = []
        if len(pmfs) < 2:
            problems.append(f"M must be >= 2, got {len(pmfs)}")
        for k, p in enumerate(pmfs, start=1):
            if p.axes != SOURCE_AXES:
                problems.append(f"hypothesis {k} has axes {p.axes}, expected {SOURCE_AXES}")
            elif p.shape != pmfs[0].shape:
                problems.append(f"hypothesis {k} has shape {p.shape}, expected {pmfs[0].shape}")
        for name, i in (("i1", self.i1), ("i2", self.i2)):
            if not (isinstance(i, (int, np.integer)) and 1 <= i <= len(pmfs)):
                problems.append(f"{name}={i!r} is not in 1..{len(pmfs)}")
        if problems:
            raise InvariantViolation(problems)

    @property
    def M(self) -> int:
        return len(self.pmfs)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pmfs[0].shape

    @property
    def cooperative(self) -> bool:
        return self.i1 == self.i2

    def pmf(self, m: int) -> JointPmf:
        return self.pmfs[m - 1]

    @classmethod
    def two_hypothesis(cls, P: JointPmf, Pbar: JointPmf, **kw) -> "HypothesisModel":
        """Cooperative setting: null law P is hypothesis 1, alternative Pbar is 2, i1 = i2 = 2."""
        return cls((P, Pbar), 2, 2, **kw)

    def null_and_alternative(self) -> tuple[JointPmf, JointPmf]:
        if self.M != 2 or not self.cooperative:
            raise InvariantViolation(["a (null, alternative) pair needs M = 2 and i1 = i2"])
        alt = self.i1
        return self.pmf(3 - alt), self.pmf(alt)


def testing_against_independence(P: JointPmf) -> JointPmf:
    """The product of P's single-axis marginals."""
    return product(*(marginalize(P, r) for r in P.axes))
