"""Error-exponent regions for the cooperative and concurrent detection problems.

The zero-rate and positive-rate exponents are minimum-divergence problems over
linear families (joint laws with prescribed marginals).  They are solved by
iterative proportional scaling, which converges to the I-projection of the
target onto the family.  The zero-cooperation-rate region for testing against
independence is a non-concave search over the test channel P(U|X).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations, product as iproduct
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import (
    AxisMismatch,
    HypothesisViolated,
    Infeasible,
    InvariantViolation,
    RateExceeded,
    RateNegative,
    SupportSeparation,
    TargetNotPositive,
    TheoremNotApplicable,
)
from .probkit import (
    Channel,
    HypothesisModel,
    JointPmf,
    compose,
    entropy,
    kl_arrays,
    kl_divergence,
    marginalize,
    mutual_information,
    product,
)

log = logging.getLogger(__name__)

RATE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MarginalConstraint:
    """Require the optimisation variable's marginal on ``target.axes`` to equal ``target``."""

    target: JointPmf

    @property
    def roles(self) -> tuple[str, ...]:
        return self.target.axes


def marginal_constraints(pmf: JointPmf, *role_groups) -> list[MarginalConstraint]:
    return [MarginalConstraint(marginalize(pmf, g)) for g in role_groups]


@dataclass(frozen=True)
class ExponentPair:
    theta1: float
    theta2: float

    def __post_init__(self):
        for name in ("theta1", "theta2"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise InvariantViolation([f"{name}={v!r} must be finite and >= 0"])
            object.__setattr__(self, name, v)

    def dominates(self, other: "ExponentPair", tol: float = 0.0) -> bool:
        return self.theta1 >= other.theta1 - tol and self.theta2 >= other.theta2 - tol

    def as_tuple(self) -> tuple[float, float]:
        return (self.theta1, self.theta2)


@dataclass(frozen=True)
class RegionBoundary:
    points: tuple[ExponentPair, ...]
    provenance: dict = field(default_factory=dict)
    witnesses: tuple = ()

    def __post_init__(self):
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        for a, b in zip(pts, pts[1:]):
            if b.theta1 < a.theta1 or b.theta2 > a.theta2:
                raise InvariantViolation(["frontier points must have theta1 ascending and theta2 non-increasing"])

    def dominates(self, pair: ExponentPair, tol: float = 0.0) -> bool:
        return any(p.dominates(pair, tol) for p in self.points)

    def __len__(self):
        return len(self.points)


class Projection(NamedTuple):
    value: float
    argmin: JointPmf


def _check_constraints(target: JointPmf, constraints: Sequence[MarginalConstraint]):
    for c in constraints:
        if not set(c.roles) <= set(target.axes):
            raise AxisMismatch(f"constraint on {c.roles} is not a marginal of {target.axes}")
        for r in c.roles:
            if c.target.size_of(r) != target.size_of(r):
                raise AxisMismatch(f"constraint alphabet for {r} has size {c.target.size_of(r)}, target has {target.size_of(r)}")
    for a, b in combinations(constraints, 2):
        shared = tuple(r for r in a.roles if r in b.roles)
        if not shared:
            continue
        ma = marginalize(a.target, shared).mass
        mb = marginalize(b.target, shared).mass
        gap = float(np.max(np.abs(ma - mb)))
        if gap > 1e-9:
            raise Infeasible(f"constraints on {a.roles} and {b.roles} disagree on {shared} by {gap:.3g}")


def min_kl_with_marginals(
    target: JointPmf,
    constraints: Sequence[MarginalConstraint],
    *,
    require_positive: bool = True,
    tol: float = 1e-13,
    max_sweeps: int = 200_000,
) -> Projection:
    """Minimise D(Q || target) over joint pmfs Q meeting every marginal constraint.

    Iterative proportional scaling started at ``target``: each step rescales Q
    so one constraint holds exactly.  Starting from the target keeps every
    iterate in its exponential family, so the fixed point is the I-projection.
    Stops when the largest marginal violation drops below ``tol``.
    """
    if require_positive and target.mass.min() <= 0:
        raise TargetNotPositive("target pmf must be strictly positive on its product alphabet")
    constraints = list(constraints)
    _check_constraints(target, constraints)

    axes = target.axes
    plans = []
    for c in constraints:
        drop = tuple(i for i, r in enumerate(axes) if r not in c.roles)
        shape = tuple(target.size_of(r) if r in c.roles else 1 for r in axes)
        goal = c.target.mass.reshape(shape)
        tm = target.mass.sum(axis=drop, keepdims=True)
        if np.any((goal > 0) & (tm <= 0)):
            raise SupportSeparation(f"constraint on {c.roles} puts mass where the target has none")
        plans.append((drop, goal))

    q = np.array(target.mass, dtype=float)
    violation = 0.0
    for sweep in range(max_sweeps):
        for drop, goal in plans:
            m = q.sum(axis=drop, keepdims=True)
            if np.any((goal > 0) & (m <= 0)):
                raise SupportSeparation("constraints cannot be met inside the target's support")
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(m > 0, goal / np.where(m > 0, m, 1.0), 0.0)
            q *= ratio
        violation = max(
            (float(np.max(np.abs(q.sum(axis=drop, keepdims=True) - goal))) for drop, goal in plans),
            default=0.0,
        )
        if violation < tol:
            break
    else:
        if violation > 1e-8:
            raise Infeasible(f"iterative scaling stalled with marginal violation {violation:.3g}")
        log.warning("iterative scaling hit %d sweeps at violation %.3g", max_sweeps, violation)
    q /= q.sum()
    argmin = JointPmf(axes, q)
    return Projection(kl_arrays(q, target.mass), argmin)


def theorem3_region(P: JointPmf, Pbar: JointPmf) -> ExponentPair:
    """Zero-rate cooperative exponents (optimal when Pbar is strictly positive)."""
    if Pbar.mass.min() <= 0:
        raise TargetNotPositive("the alternative law must be strictly positive")
    if P.axes != Pbar.axes or P.shape != Pbar.shape:
        raise AxisMismatch("null and alternative laws live on different alphabets")
    t1 = min_kl_with_marginals(marginalize(Pbar, ("X", "Y1")), marginal_constraints(P, "X", "Y1"))
    t2 = min_kl_with_marginals(Pbar, marginal_constraints(P, "X", "Y1", "Y2"))
    return ExponentPair(t1.value, t2.value)


def proposition1_corner(P: JointPmf, Pbar: JointPmf) -> ExponentPair:
    """High-rate corner: both detectors effectively see the raw sources."""
    return ExponentPair(
        kl_divergence(marginalize(P, ("X", "Y1")), marginalize(Pbar, ("X", "Y1"))),
        kl_divergence(P, Pbar),
    )


def proposition2_region(model: HypothesisModel) -> ExponentPair:
    """Zero-rate concurrent exponents; the region is the rectangle [0, theta1] x [0, theta2]."""
    first, second = proposition2_projections(model)
    return ExponentPair(min(p.value for p in first.values()), min(p.value for p in second.values()))


def proposition2_projections(model: HypothesisModel) -> tuple[dict, dict]:
    """Per-detector I-projections of the target law onto each competing hypothesis' marginals.

    Returns two dicts keyed by the competing hypothesis (original labels):
    the first holds projections of P^(i1)_{XY1}, the second of P^(i2).
    """
    if model.i1 == model.i2:
        raise TheoremNotApplicable("concurrent detection needs i1 != i2")
    p1_xy1 = marginalize(model.pmf(model.i1), ("X", "Y1"))
    if p1_xy1.mass.min() <= 0:
        raise TargetNotPositive(f"P^({model.i1})_{{XY1}} must be strictly positive")
    p2 = model.pmf(model.i2)
    if p2.mass.min() <= 0:
        raise TargetNotPositive(f"P^({model.i2})_{{XY1Y2}} must be strictly positive")
    others = range(1, model.M + 1)
    first = {
        m: min_kl_with_marginals(p1_xy1, marginal_constraints(model.pmf(m), "X", "Y1"))
        for m in others if m != model.i1
    }
    second = {
        m: min_kl_with_marginals(p2, marginal_constraints(model.pmf(m), "X", "Y1", "Y2"))
        for m in others if m != model.i2
    }
    return first, second


# -- inner bound through an auxiliary pair (U, V) -------------------------

@dataclass(frozen=True, eq=False)
class AuxPair:
    """Test channels P(U|X) and P(V|Y1,U); Markov structure holds by construction."""

    u_channel: Channel
    v_channel: Channel
    rates_used: tuple[float, float] | None = None

    def __post_init__(self):
        u, v = self.u_channel, self.v_channel
        if u.input_axes != ("X",) or u.output_axes != ("U",):
            raise AxisMismatch(f"u_channel must map X -> U, got {u.input_axes} -> {u.output_axes}")
        if v.input_axes != ("Y1", "U") or v.output_axes != ("V",):
            raise AxisMismatch(f"v_channel must map (Y1, U) -> V, got {v.input_axes} -> {v.output_axes}")
        if v.input_shape[1] != u.output_shape[0]:
            raise AxisMismatch("v_channel's U alphabet differs from u_channel's output")

    def for_model(self, P: JointPmf) -> "AuxPair":
        """Copy with ``rates_used`` = (I(U;X), I(V;Y1|U)) evaluated under P."""
        joint = aux_joint(P, self)
        rates = (
            mutual_information(joint, "U", "X"),
            mutual_information(joint, "V", "Y1", given="U"),
        )
        return AuxPair(self.u_channel, self.v_channel, rates)

    def in_rate_region(self, R1: float, R2: float) -> bool:
        if self.rates_used is None:
            raise InvariantViolation(["rates_used unknown; call for_model first"])
        return self.rates_used[0] <= R1 + RATE_TOL and self.rates_used[1] <= R2 + RATE_TOL

    @classmethod
    def constant(cls, x_size: int, y1_size: int) -> "AuxPair":
        return cls(Channel.constant(("X",), (x_size,), "U"), Channel.constant(("Y1", "U"), (y1_size, 1), "V"))

    @classmethod
    def identity(cls, x_size: int, y1_size: int) -> "AuxPair":
        """U = X and V = Y1."""
        v = np.broadcast_to(np.eye(y1_size)[:, None, :], (y1_size, x_size, y1_size))
        return cls(Channel.identity("X", "U", x_size), Channel(("Y1", "U"), ("V",), v))


def aux_joint(pmf: JointPmf, aux: AuxPair) -> JointPmf:
    """Joint law on (X, Y1, Y2, U, V) with U ~ P(U|X) and V ~ P(V|Y1,U)."""
    return compose(compose(pmf, aux.u_channel), aux.v_channel)


def theorem1_inner_exponents(
    P: JointPmf,
    Pbar: JointPmf,
    aux: AuxPair,
    R1: float | None = None,
    R2: float | None = None,
) -> ExponentPair:
    """Positive-rate achievable exponents for one auxiliary pair."""
    if Pbar.mass.min() <= 0:
        raise TargetNotPositive("the alternative law must be strictly positive")
    if R1 is not None or R2 is not None:
        aux = aux if aux.rates_used is not None else aux.for_model(P)
        if not aux.in_rate_region(math.inf if R1 is None else R1, math.inf if R2 is None else R2):
            raise RateExceeded(f"auxiliary rates {aux.rates_used} exceed ({R1}, {R2})")
    t1, t2 = theorem1_projections(P, Pbar, aux)
    return ExponentPair(t1.value, t2.value)


def theorem1_projections(P: JointPmf, Pbar: JointPmf, aux: AuxPair) -> tuple[Projection, Projection]:
    """The two I-projections behind the positive-rate exponents, with their minimisers."""
    joint = aux_joint(P, aux)
    joint_bar = aux_joint(Pbar, aux)
    t1 = min_kl_with_marginals(
        marginalize(joint_bar, ("X", "Y1", "U")),
        marginal_constraints(joint, ("U", "X"), ("U", "Y1")),
        require_positive=False,
    )
    t2 = min_kl_with_marginals(
        joint_bar,
        marginal_constraints(joint, ("U", "X"), ("U", "V", "Y1"), ("U", "V", "Y2")),
        require_positive=False,
    )
    return t1, t2


# -- testing against independence without cooperation rate ----------------

@dataclass(frozen=True)
class SearchConfig:
    """Settings for the P(U|X) search.

    ``grid_resolution`` k puts each channel row on the lattice of multiples of
    1/k (k + 1 points per coordinate).  ``starts`` random channels join the
    grid in the candidate pool; each scalarisation weight then polishes its
    ``seeds_per_weight`` best candidates with SLSQP.
    """

    points: int = 33
    grid_resolution: int = 8
    starts: int = 32
    seeds_per_weight: int = 4
    seed: int = 0
    max_grid_channels: int = 50_000
    maxiter: int = 200

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class _TIIModel:
    """Vectorised I(U;X), I(U;Y1), I(U;Y2) for channels W[x, u] under P."""

    def __init__(self, P: JointPmf):
        px = marginalize(P, "X").mass
        self.px = px
        pxy1 = marginalize(P, ("X", "Y1")).mass
        pxy2 = marginalize(P, ("X", "Y2")).mass
        with np.errstate(divide="ignore", invalid="ignore"):
            safe = np.where(px > 0, px, 1.0)[:, None]
            self.cond = [pxy1 / safe, pxy2 / safe]
        self.py = [pxy1.sum(axis=0), pxy2.sum(axis=0)]

    def evaluate(self, W: np.ndarray) -> np.ndarray:
        """W has shape (..., |X|, |U|); returns (..., 3) = (I(U;X), I(U;Y1), I(U;Y2))."""
        px = self.px
        joint = px[:, None] * W
        q = joint.sum(axis=-2)
        out = [_xlogx_ratio(joint, W, q[..., None, :])]
        for cond, py in zip(self.cond, self.py):
            r = np.einsum("...xu,xy->...uy", joint, cond)
            out.append(_xlogx_ratio(r, r, q[..., :, None] * py))
        return np.stack(out, axis=-1)

    def gradients(self, W: np.ndarray):
        """Gradients of the three informations with respect to W (single channel)."""
        px = self.px
        joint = px[:, None] * W
        q = joint.sum(axis=0)
        grads = [px[:, None] * _safe_log_ratio(W, q[None, :])]
        for cond, _ in zip(self.cond, self.py):
            r = joint.T @ cond
            log_post = _safe_log_ratio(r, q[:, None])
            grads.append(px[:, None] * (cond @ log_post.T))
        return grads


def _safe_log_ratio(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(np.where(a > 0, a, 1.0)) - np.log(np.where(b > 0, b, 1.0))
    return np.where(a > 0, out, 0.0)


def _xlogx_ratio(weight, num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(weight > 0, weight * (np.log(np.where(num > 0, num, 1.0)) - np.log(np.where(den > 0, den, 1.0))), 0.0)
    s = terms.reshape(terms.shape[:-2] + (-1,)).sum(axis=-1)
    return np.maximum(s, 0.0)


def simplex_lattice(k: int, parts: int) -> np.ndarray:
    """All compositions of k into ``parts`` nonnegative parts, as an int array."""
    if parts == 1:
        return np.array([[k]], dtype=np.int64)
    rows = []
    for bars in combinations(range(k + parts - 1), parts - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(k + parts - 1 - prev - 1)
        rows.append(row)
    return np.array(rows, dtype=np.int64)


def check_independent_sides(P: JointPmf, tol: float = 1e-9) -> float:
    y12 = marginalize(P, ("Y1", "Y2")).mass
    indep = np.outer(y12.sum(axis=1), y12.sum(axis=0))
    return float(np.max(np.abs(y12 - indep)))


def _softmax_rows(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _polish(model: _TIIModel, W0: np.ndarray, weight: float, R1: float, maxiter: int) -> np.ndarray:
    """SLSQP on row logits: maximise I(U;Y1) + (1 - weight) I(U;Y2) s.t. I(U;X) <= R1."""
    nx, nu = W0.shape
    z0 = np.log(np.clip(W0, 1e-9, None)).ravel()
    c2 = 1.0 - weight

    def unpack(z):
        return _softmax_rows(z.reshape(nx, nu))

    def chain(W, g):
        return (W * (g - (W * g).sum(axis=1, keepdims=True))).ravel()

    def objective(z):
        W = unpack(z)
        ix, i1, i2 = model.evaluate(W)
        gx, g1, g2 = model.gradients(W)
        return -(i1 + c2 * i2), -chain(W, g1 + c2 * g2)

    def rate_slack(z):
        return R1 - model.evaluate(unpack(z))[0]

    def rate_slack_jac(z):
        W = unpack(z)
        return -chain(W, model.gradients(W)[0])

    res = minimize(
        objective, z0, jac=True, method="SLSQP",
        constraints=[{"type": "ineq", "fun": rate_slack, "jac": rate_slack_jac}],
        options={"maxiter": maxiter, "ftol": 1e-12},
    )
    return _repair_rate(model, unpack(res.x), R1)


def _repair_rate(model: _TIIModel, W: np.ndarray, R1: float) -> np.ndarray:
    """Pull W toward the constant channel until I(U;X) <= R1.

    I(U;X) is convex in the channel and zero for any constant channel, so the
    mixture t W + (1 - t) 1 q^T has rate at most t I(U;X; W).
    """
    ix = model.evaluate(W)[0]
    if ix <= R1:
        return W
    q = model.px @ W
    const = np.broadcast_to(q, W.shape)
    lo, hi = 0.0, min(1.0, R1 / ix)
    hi_w = hi * W + (1 - hi) * const
    if model.evaluate(hi_w)[0] <= R1:
        lo = hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if model.evaluate(mid * W + (1 - mid) * const)[0] <= R1:
            lo = mid
        else:
            hi = mid
    return lo * W + (1 - lo) * const


def _candidate_pool(model: _TIIModel, nx: int, nu: int, cfg: SearchConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    rows = simplex_lattice(cfg.grid_resolution, nu) / cfg.grid_resolution
    n_grid = len(rows) ** nx
    if n_grid <= cfg.max_grid_channels:
        idx = np.array(list(iproduct(range(len(rows)), repeat=nx)), dtype=np.int64)
    else:
        idx = rng.integers(0, len(rows), size=(cfg.max_grid_channels, nx))
    grid = rows[idx]
    # deterministic maps X -> U (includes the identity embedding when |U| >= |X|)
    if nu ** nx <= 4096:
        maps = np.array(list(iproduct(range(nu), repeat=nx)), dtype=np.int64)
        det = np.eye(nu)[maps]
    else:
        det = np.eye(nu)[np.arange(nx) % nu][None]
    rand = rng.dirichlet(np.ones(nu), size=(cfg.starts, nx))
    return np.concatenate([grid, det, rand], axis=0)


def _weight_task(args):
    P, W_seeds, weight, R1, maxiter = args
    model = _TIIModel(P)
    return [_polish(model, W, weight, R1, maxiter) for W in W_seeds]


def theorem2_boundary(
    P: JointPmf,
    R1: float,
    u_cardinality: int | None = None,
    search: SearchConfig | None = None,
    workers: int = 1,
) -> RegionBoundary:
    """Frontier of {(I(U;Y1), I(U;Y1) + I(U;Y2)) : I(U;X) <= R1} over channels P(U|X).

    Applies when Y1 and Y2 are independent under the null law and the
    alternative is the product of the null marginals.  One frontier point is
    reported per scalarisation weight w, maximising w*theta1 + (1-w)*theta2
    among all evaluated channels.
    """
    search = search or SearchConfig()
    if R1 < 0:
        raise RateNegative(f"R1 = {R1} must be nonnegative")
    gap = check_independent_sides(P)
    if gap > 1e-9:
        raise HypothesisViolated(f"Y1 and Y2 are not independent under P (max deviation {gap:.3g})")
    nx = P.size_of("X")
    nu = u_cardinality or nx + 1
    provenance = {
        "theorem": "2", "R1": R1, "u_cardinality": nu, "search": search.as_dict(),
    }
    if R1 == 0:
        # only constant channels are feasible; the frontier is the origin
        return RegionBoundary((ExponentPair(0.0, 0.0),), provenance, (np.full((nx, nu), 1.0 / nu),))

    model = _TIIModel(P)
    pool = _candidate_pool(model, nx, nu, search)
    info = model.evaluate(pool)
    feasible = info[:, 0] <= R1
    pool, info = pool[feasible], info[feasible]
    weights = np.linspace(0.0, 1.0, search.points) if search.points > 1 else np.array([0.0])

    tasks = []
    for w in weights:
        score = info[:, 1] + (1.0 - w) * info[:, 2]
        best = np.argsort(-score, kind="stable")[: search.seeds_per_weight]
        tasks.append((P, [pool[i] for i in best], float(w), R1, search.maxiter))
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            polished = list(ex.map(_weight_task, tasks))
    else:
        polished = [_weight_task(t) for t in tasks]

    extra = np.array([W for group in polished for W in group])
    pool = np.concatenate([pool, extra], axis=0)
    info = np.concatenate([info, model.evaluate(extra)], axis=0)
    ok = info[:, 0] <= R1 + RATE_TOL
    pool, info = pool[ok], info[ok]

    chosen = []
    for w in weights:
        score = info[:, 1] + (1.0 - w) * info[:, 2]
        top = score.max()
        # among near-ties keep the largest theta1 so the staircase stays monotone
        tied = np.flatnonzero(score >= top - 1e-12)
        i = tied[np.lexsort((-info[tied, 2], -info[tied, 1]))[0]]
        chosen.append(i)
    chosen.sort(key=lambda i: (info[i, 1], -(info[i, 1] + info[i, 2])))
    points = tuple(ExponentPair(info[i, 1], info[i, 1] + info[i, 2]) for i in chosen)
    points = _staircase(points)
    provenance["rate_max_used"] = float(max(info[i, 0] for i in chosen))
    return RegionBoundary(points, provenance, tuple(pool[i] for i in chosen))


def _staircase(points):
    """Sort by theta1 and lower-clip theta2 so it never increases (removes float jitter)."""
    pts = sorted(points, key=lambda p: (p.theta1, -p.theta2))
    out = []
    for p in pts:
        if out and p.theta2 > out[-1].theta2:
            # p dominates its predecessors; they are replaced by p
            while out and out[-1].theta2 <= p.theta2:
                out.pop()
        out.append(p)
    return tuple(out)


def testing_against_independence_exponents(P: JointPmf, W: np.ndarray) -> ExponentPair:
    """(I(U;Y1), I(U;Y1) + I(U;Y2)) for a single channel W[x, u]."""
    ix, i1, i2 = _TIIModel(P).evaluate(np.asarray(W, dtype=float))
    return ExponentPair(i1, i1 + i2)
