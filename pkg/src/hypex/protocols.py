"""Monte Carlo simulation of the detection schemes.

The zero-rate schemes are type-measurable: every message and decision is a
function of the joint type of (x^n, y1^n, y2^n).  Their decision rules are
written once, vectorised over a batch of joint-type count arrays, and used
both by the sampler here and by the exact enumerator in :mod:`hypex.oracle`.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    AmbiguousTyping,
    BudgetExceeded,
    ConfigInvalid,
    InsufficientPoints,
)
from .probkit import (
    SOURCE_AXES,
    HypothesisModel,
    JointPmf,
    marginalize,
    mutual_information,
    typical_counts,
)
from .exponents import AuxPair, aux_joint, proposition2_projections, simplex_lattice, theorem1_projections

CHUNK = 20_000


class Decisions(NamedTuple):
    m1: np.ndarray
    m2: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


@dataclass(frozen=True)
class SchemeConfig:
    """Blocklengths, thresholds and Monte Carlo settings for one simulation run.

    ``delta`` is the typicality threshold of the cooperative schemes; ``mu``
    holds the nested thresholds (mu, mu', mu'') of the concurrent scheme.
    ``estimator='tilted'`` estimates the alternative-hypothesis error by
    importance sampling from the exponentially tilted law.
    """

    n: tuple[int, ...] = (100,)
    trials: int = 10_000
    seed: int = 0
    delta: float | None = 0.05
    mu: tuple[float, float, float] | None = None
    R1: float | None = None
    R2: float | None = None
    xi: float = 0.05
    fixed_codebook: bool = False
    budget: int = 20_000_000
    estimator: str = "plain"
    workers: int = 1

    def __post_init__(self):
        n = (self.n,) if isinstance(self.n, (int, np.integer)) else tuple(self.n)
        object.__setattr__(self, "n", tuple(int(k) for k in n))
        if self.mu is not None:
            object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))
        problems = []
        if not self.n or min(self.n) < 1:
            problems.append("every blocklength n must be >= 1")
        if self.trials < 1:
            problems.append(f"trials must be >= 1, got {self.trials}")
        if self.delta is not None and self.delta < 0:
            problems.append("delta must be >= 0")
        if self.mu is not None:
            if len(self.mu) != 3 or not 0 < self.mu[0] < self.mu[1] < self.mu[2]:
                problems.append(f"need 0 < mu < mu' < mu'', got {self.mu}")
        if self.estimator not in ("plain", "tilted"):
            problems.append(f"unknown estimator {self.estimator!r}")
        if self.xi < 0:
            problems.append("xi must be >= 0")
        if problems:
            raise ConfigInvalid("; ".join(problems))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["n"] = list(self.n)
        d["mu"] = list(self.mu) if self.mu is not None else None
        return d


# -- deterministic, type-measurable schemes ---------------------------------

def _axis_counts(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-axis types from joint counts of shape (..., |X|, |Y1|, |Y2|)."""
    return counts.sum(axis=(-2, -1)), counts.sum(axis=(-3, -1)), counts.sum(axis=(-3, -2))


class ZeroRateCooperative:
    """Single-bit cooperative scheme.

    Messages are 1 ("consistent with the null law") or 2.  The encoder flags
    x^n typical for P_X; Detector 1 declares the null iff that flag is set and
    y1^n is typical for P_Y1, and forwards its decision; Detector 2 declares
    the null iff the forwarded decision is the null and y2^n is typical for
    P_Y2.  Hypothesis 1 is the null P, hypothesis 2 the alternative.
    """

    deterministic = True
    name = "zero-coop"
    m1_alphabet = (1, 2)
    m2_alphabet = (1, 2)

    def __init__(self, P: JointPmf, delta: float, deltas: tuple[float, float, float] | None = None):
        self.P = P
        self.deltas = tuple(deltas) if deltas is not None else (delta, delta, delta)
        self.refs = tuple(marginalize(P, r).mass for r in ("X", "Y1", "Y2"))

    def decide(self, counts: np.ndarray, n: int) -> Decisions:
        cx, cy1, cy2 = _axis_counts(counts)
        tx = typical_counts(cx, n, self.refs[0], self.deltas[0])
        ty1 = typical_counts(cy1, n, self.refs[1], self.deltas[1])
        ty2 = typical_counts(cy2, n, self.refs[2], self.deltas[2])
        m1 = np.where(tx, 1, 2)
        d1 = np.where((m1 == 1) & ty1, 1, 2)
        m2 = d1
        d2 = np.where((m2 == 1) & ty2, 1, 2)
        return Decisions(m1, m2, d1, d2)


class ZeroRateConcurrent:
    """Concurrent-detection scheme with nested thresholds mu < mu' < mu''.

    Detector targets are hypotheses 1 and 2 (i1 = 1, i2 = 2).  Messages take
    values in 1..M+1, with M+1 meaning "no hypothesis matched".  When x^n is
    typical for several X-marginals the encoder picks the largest index.
    """

    deterministic = True
    name = "concurrent"

    def __init__(self, model: HypothesisModel, mu: tuple[float, float, float]):
        if model.i1 == model.i2:
            raise ConfigInvalid("concurrent scheme needs i1 != i2")
        mu = tuple(float(m) for m in mu)
        if len(mu) != 3 or not 0 < mu[0] < mu[1] < mu[2]:
            raise ConfigInvalid(f"need 0 < mu < mu' < mu'', got {mu}")
        order = [model.i1, model.i2] + [m for m in range(1, model.M + 1) if m not in (model.i1, model.i2)]
        # internal index k corresponds to original hypothesis order[k-1]
        self.order = order
        self.model = model
        self.mu = mu
        self.M = model.M
        laws = [model.pmf(m) for m in order]
        self.px = np.array([marginalize(p, "X").mass for p in laws])
        self.py1 = np.array([marginalize(p, "Y1").mass for p in laws])
        self.py2 = np.array([marginalize(p, "Y2").mass for p in laws])
        self.m1_alphabet = tuple(range(1, self.M + 2))
        self.m2_alphabet = self.m1_alphabet

    def check_unambiguous(self, n: int) -> None:
        """Raise AmbiguousTyping if some X-type is mu-typical for two distinct X-marginals."""
        nx = self.px.shape[1]
        if math.comb(n + nx - 1, nx - 1) > 5_000_000:
            raise BudgetExceeded(f"too many X-types to check at n={n}")
        types = simplex_lattice(n, nx)
        hits = np.stack([typical_counts(types, n, p, self.mu[0]) for p in self.px], axis=1)
        for t, row in zip(types, hits):
            idx = np.flatnonzero(row)
            if len(idx) > 1:
                margs = self.px[idx]
                if np.any(np.abs(margs - margs[0]).max(axis=1) > 0):
                    raise AmbiguousTyping(
                        f"X-type {tuple(int(c) for c in t)} is mu-typical for hypotheses "
                        f"{[self.order[i] for i in idx]} with different X-marginals at n={n}"
                    )

    def decide(self, counts: np.ndarray, n: int) -> Decisions:
        cx, cy1, cy2 = _axis_counts(counts)
        M = self.M
        batch = cx.shape[:-1]
        m1 = np.full(batch, M + 1, dtype=np.int64)
        for k in range(1, M + 1):
            hit = typical_counts(cx, n, self.px[k - 1], self.mu[0])
            m1 = np.where(hit, k, m1)
        ty1 = np.zeros(batch, dtype=bool)
        ty2 = np.zeros(batch, dtype=bool)
        for k in range(1, M + 1):
            ty1 |= (m1 == k) & typical_counts(cy1, n, self.py1[k - 1], self.mu[1])
        pass1 = (m1 <= M) & ty1
        d1 = np.where(pass1, m1, 1)
        m2 = np.where(pass1, m1, M + 1)
        for k in range(1, M + 1):
            ty2 |= (m2 == k) & typical_counts(cy2, n, self.py2[k - 1], self.mu[2])
        d2 = np.where((m2 <= M) & ty2, m2, 2)
        back = np.array([0] + self.order + [M + 1])
        return Decisions(back[m1], back[m2], back[d1], back[d2])


class ConstantDecision:
    """Both detectors always declare ``decision``; messages are constant."""

    deterministic = True
    name = "constant"
    m1_alphabet = (1,)
    m2_alphabet = (1,)

    def __init__(self, decision: int = 1):
        self.decision = decision

    def decide(self, counts: np.ndarray, n: int) -> Decisions:
        batch = counts.shape[:-3]
        one = np.ones(batch, dtype=np.int64)
        return Decisions(one, one, one * self.decision, one * self.decision)


# -- estimates and reports --------------------------------------------------

def wilson_interval(errors: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if trials <= 0:
        return (0.0, 1.0)
    p = errors / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return (max(0.0, min(p, centre - half)), min(1.0, max(p, centre + half)))


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    lo: float
    hi: float
    trials: int
    errors: int | None = None
    stderr: float | None = None
    method: str = "plain"

    @classmethod
    def from_counts(cls, errors: int, trials: int) -> "RateEstimate":
        lo, hi = wilson_interval(errors, trials)
        return cls(errors / trials, lo, hi, trials, errors)

    @classmethod
    def from_weights(cls, total: float, total_sq: float, trials: int) -> "RateEstimate":
        mean = total / trials
        var = max(total_sq / trials - mean * mean, 0.0)
        se = math.sqrt(var / trials)
        rate = min(max(mean, 0.0), 1.0)
        return cls(rate, max(0.0, rate - 1.96 * se), min(1.0, rate + 1.96 * se), trials, None, se, "tilted")


@dataclass(frozen=True)
class ExponentFit:
    """Least-squares fit of -log(beta) = slope * n + intercept."""

    slope: float
    intercept: float
    r2: float
    slope_stderr: float = float("nan")
    censored: tuple = ()
    used_n: tuple = ()

    def __iter__(self):
        return iter((self.slope, self.intercept, self.r2))


def fit_exponent(series) -> ExponentFit:
    """Fit the empirical exponent from (n, beta) or (n, beta, trials) points.

    Points with beta == 0 are censored: excluded from the fit and reported
    with the rule-of-three upper bound 3 / trials when trials are known.
    """
    series = [tuple(s) for s in series]
    if len(series) < 3:
        raise InsufficientPoints(f"need >= 3 points, got {len(series)}")
    used, censored = [], []
    for point in series:
        n, beta = point[0], point[1]
        if not 0 <= beta <= 1:
            raise ValueError(f"beta estimate {beta} outside [0, 1]")
        if beta == 0:
            bound = 3.0 / point[2] if len(point) > 2 and point[2] else None
            censored.append({"n": int(n), "beta_upper_bound": bound})
        else:
            used.append((float(n), -math.log(beta)))
    if len(used) < 2:
        raise InsufficientPoints("fewer than 2 uncensored points remain")
    x = np.array([u[0] for u in used])
    y = np.array([u[1] for u in used])
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0:
        raise InsufficientPoints("all uncensored points share one blocklength")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    stderr = math.sqrt(ss_res / (len(x) - 2) / sxx) if len(x) > 2 else float("nan")
    return ExponentFit(slope, intercept, r2, stderr, tuple(censored), tuple(int(v) for v in x))


@dataclass
class SimulationReport:
    """Per-blocklength error estimates for both detectors plus fitted exponents.

    ``records[j]["rates"][k][m]`` is the estimate of Pr[detector k != m | H = m].
    """

    scheme: str
    M: int
    i1: int
    i2: int
    config: dict
    records: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def rate(self, n: int, detector: int, hypothesis: int) -> RateEstimate:
        rec = next(r for r in self.records if r["n"] == n)
        return rec["rates"][detector][hypothesis]

    def alpha(self, n: int, detector: int) -> float:
        target = self.i1 if detector == 1 else self.i2
        return max(self.rate(n, detector, m).rate for m in range(1, self.M + 1) if m != target)

    def beta(self, n: int, detector: int) -> RateEstimate:
        return self.rate(n, detector, self.i1 if detector == 1 else self.i2)

    def beta_series(self, detector: int):
        return [(r["n"], self.beta(r["n"], detector).rate, r["trials"]) for r in self.records]

    def to_dict(self) -> dict:
        recs = []
        for r in self.records:
            rates = {
                str(k): {str(m): asdict(est) for m, est in sorted(per.items())}
                for k, per in sorted(r["rates"].items())
            }
            recs.append({
                "n": r["n"],
                "trials": r["trials"],
                "rates": rates,
                "alpha1": self.alpha(r["n"], 1),
                "alpha2": self.alpha(r["n"], 2),
                "beta1": self.beta(r["n"], 1).rate,
                "beta2": self.beta(r["n"], 2).rate,
                "neg_log_beta_over_n": {
                    str(k): (-math.log(self.beta(r["n"], k).rate) / r["n"] if self.beta(r["n"], k).rate > 0 else None)
                    for k in (1, 2)
                },
                "messages": {k: list(v) for k, v in sorted(r.get("messages", {}).items())},
            })
            if "codebook_sizes" in r:
                recs[-1]["codebook_sizes"] = list(r["codebook_sizes"])
        fits = {}
        for k, f in sorted(self.fits.items()):
            if isinstance(f, ExponentFit):
                fits[str(k)] = {
                    "slope": f.slope, "intercept": f.intercept, "r2": f.r2,
                    "slope_stderr": None if math.isnan(f.slope_stderr) else f.slope_stderr,
                    "censored": list(f.censored), "used_n": list(f.used_n),
                }
            else:
                fits[str(k)] = f
        return {
            "scheme": self.scheme, "M": self.M, "i1": self.i1, "i2": self.i2,
            "config": self.config, "records": recs, "fits": fits, "extra": self.extra,
        }


def _fit_all(report: SimulationReport) -> None:
    for k in (1, 2):
        if len(report.records) >= 3:
            try:
                report.fits[k] = fit_exponent(report.beta_series(k))
            except InsufficientPoints as exc:
                report.fits[k] = {"error": str(exc)}


# -- Monte Carlo driver for type-measurable schemes -------------------------

def _chunks(trials: int):
    starts = range(0, trials, CHUNK)
    return [(i, min(CHUNK, trials - s)) for i, s in enumerate(starts)]


def _mc_chunk(args):
    """Sample joint types and tally decisions for one chunk of trials.

    ``proposal`` is None (sample the law itself), one array, or a tuple of
    arrays drawn as an equal-weight mixture.
    """
    scheme, law, proposal, n, size, seed_key = args
    rng = np.random.default_rng(np.random.SeedSequence(seed_key[0], spawn_key=seed_key[1:]))
    shape = law.shape
    if proposal is None:
        flat = np.asarray(law, dtype=float).ravel()
        counts = rng.multinomial(n, flat / flat.sum(), size=size)
        return scheme.decide(counts.reshape((size,) + shape), n), None

    comps = proposal if isinstance(proposal, tuple) else (proposal,)
    comps = [np.asarray(c, dtype=float).ravel() / np.sum(c) for c in comps]
    if len(comps) == 1:
        counts = rng.multinomial(n, comps[0], size=size)
    else:
        split = rng.multinomial(size, np.full(len(comps), 1 / len(comps)))
        counts = np.concatenate([rng.multinomial(n, c, size=s) for c, s in zip(comps, split)])
    dec = scheme.decide(counts.reshape((size,) + shape), n)
    target = np.asarray(law, dtype=float).ravel()
    with np.errstate(divide="ignore"):
        log_target = np.log(target)
        # per component: log of proposal/target likelihood ratio for each sample
        rel = np.stack([np.where(counts > 0, counts * (np.log(c) - log_target), 0.0).sum(axis=1) for c in comps])
    impossible = (counts[:, target <= 0] > 0).any(axis=1)
    top = rel.max(axis=0)
    log_mix = top + np.log(np.exp(rel - top).mean(axis=0))
    weights = np.where(impossible, 0.0, np.exp(-log_mix))
    return dec, weights


def _tally(scheme, laws: dict, proposals: dict, cfg: SchemeConfig, n: int):
    """Error estimates per (detector, hypothesis) at blocklength n."""
    rates = {1: {}, 2: {}}
    messages = {"m1": set(), "m2": set()}
    tasks = []
    for m, law in laws.items():
        for k in (1, 2):
            prop = proposals.get((m, k))
            if k == 2 and prop is None and proposals.get((m, 1)) is None:
                continue  # plain sampling serves both detectors
            for chunk, size in _chunks(cfg.trials):
                tasks.append(((m, k, prop is not None), (scheme, law.mass, None if prop is None else prop, n, size, (cfg.seed, n, m, k, chunk))))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_mc_chunk, [t[1] for t in tasks]))
    else:
        results = [_mc_chunk(t[1]) for t in tasks]

    acc = {}
    for (key, _), (dec, weights) in zip(tasks, results):
        m, k, tilted = key
        messages["m1"].update(int(v) for v in np.unique(dec.m1))
        messages["m2"].update(int(v) for v in np.unique(dec.m2))
        a = acc.setdefault(key, {"e1": 0, "e2": 0, "w": 0.0, "w2": 0.0, "t": 0})
        a["t"] += len(dec.d1)
        if tilted:
            d = dec.d1 if k == 1 else dec.d2
            w = np.where(d != m, weights, 0.0)
            a["w"] += float(w.sum())
            a["w2"] += float((w * w).sum())
        else:
            a["e1"] += int(np.count_nonzero(dec.d1 != m))
            a["e2"] += int(np.count_nonzero(dec.d2 != m))
    # plain estimates first so tilted ones override the detector they target
    for (m, k, tilted), a in sorted(acc.items(), key=lambda kv: (kv[0][2], kv[0])):
        if tilted:
            rates[k][m] = RateEstimate.from_weights(a["w"], a["w2"], a["t"])
        else:
            rates[1][m] = RateEstimate.from_counts(a["e1"], a["t"])
            rates[2][m] = RateEstimate.from_counts(a["e2"], a["t"])
    return rates, {k: tuple(sorted(v)) for k, v in messages.items()}


def tilted_law(law: JointPmf, reference: JointPmf, roles: Sequence[str], mix: float = 1e-3, sweeps: int = 5000) -> np.ndarray:
    """Exponential tilt of ``law`` whose single-axis marginals on ``roles`` match ``reference``.

    Used only as an importance-sampling proposal, so it does not need to be
    exact; it is mixed with ``law`` to keep every cell reachable.
    """
    q = np.array(law.mass, dtype=float)
    axes = law.axes
    goals = []
    for r in roles:
        drop = tuple(i for i, a in enumerate(axes) if a != r)
        shape = tuple(law.size_of(a) if a == r else 1 for a in axes)
        goals.append((drop, marginalize(reference, r).mass.reshape(shape)))
    for _ in range(sweeps):
        for drop, goal in goals:
            m = q.sum(axis=drop, keepdims=True)
            with np.errstate(divide="ignore", invalid="ignore"):
                q *= np.where(m > 0, goal / np.where(m > 0, m, 1.0), 0.0)
        if max(float(np.abs(q.sum(axis=d, keepdims=True) - g).max()) for d, g in goals) < 1e-12:
            break
    q /= q.sum()
    return (1 - mix) * q + mix * law.mass


def _simulate(scheme, model: HypothesisModel, cfg: SchemeConfig, proposals_for, check=None) -> SimulationReport:
    laws = {m: model.pmf(m) for m in range(1, model.M + 1)}
    report = SimulationReport(scheme.name, model.M, model.i1, model.i2, cfg.as_dict())
    for n in cfg.n:
        if check is not None:
            check(n)
        rates, messages = _tally(scheme, laws, proposals_for(n), cfg, n)
        report.records.append({"n": n, "trials": cfg.trials, "rates": rates, "messages": messages})
    _fit_all(report)
    return report


def run_zero_rate_cooperative(P: JointPmf, Pbar: JointPmf, cfg: SchemeConfig) -> SimulationReport:
    """Simulate the single-bit cooperative scheme under both laws."""
    if cfg.delta is None:
        raise ConfigInvalid("the cooperative scheme needs a typicality threshold delta")
    model = HypothesisModel.two_hypothesis(P, Pbar)
    scheme = ZeroRateCooperative(P, cfg.delta)
    proposals = {}
    if cfg.estimator == "tilted":
        proposals = {
            (2, 1): tilted_law(Pbar, P, ("X", "Y1")),
            (2, 2): tilted_law(Pbar, P, ("X", "Y1", "Y2")),
        }
    report = _simulate(scheme, model, cfg, lambda n: proposals)
    report.extra["message_alphabets"] = {"m1": list(scheme.m1_alphabet), "m2": list(scheme.m2_alphabet)}
    return report


def run_zero_rate_concurrent(model: HypothesisModel, cfg: SchemeConfig) -> SimulationReport:
    """Simulate the concurrent-detection scheme for every hypothesis.

    With ``estimator='tilted'`` the error of detector k under its own target
    hypothesis is estimated by sampling from an equal mixture of the
    I-projections onto every competing hypothesis' marginals (plus the law
    itself, keeping the weights bounded).
    """
    if cfg.mu is None:
        raise ConfigInvalid("the concurrent scheme needs thresholds mu = (mu, mu', mu'')")
    scheme = ZeroRateConcurrent(model, cfg.mu)
    proposals = {}
    if cfg.estimator == "tilted":
        first, second = proposition2_projections(model)
        target1 = model.pmf(model.i1)
        proposals[(model.i1, 1)] = tuple(
            [_source_proposal(p.argmin, target1, mix=0.0) for p in first.values()] + [target1.mass]
        )
        target2 = model.pmf(model.i2)
        proposals[(model.i2, 2)] = tuple([p.argmin.mass for p in second.values()] + [target2.mass])
    report = _simulate(scheme, model, cfg, lambda n: proposals, check=scheme.check_unambiguous)
    report.extra["message_alphabets"] = {"m1": list(scheme.m1_alphabet), "m2": list(scheme.m2_alphabet)}
    return report


def simulate_deterministic(scheme, model: HypothesisModel, cfg: SchemeConfig) -> SimulationReport:
    """Plain Monte Carlo for any type-measurable scheme object."""
    return _simulate(scheme, model, cfg, lambda n: {})


# -- positive-rate random-coding scheme --------------------------------------

@dataclass
class Codebook:
    """U codewords and, per U index, V codewords (drawn on demand)."""

    u_codewords: np.ndarray
    v_size: int
    v_given_u: np.ndarray
    seed_key: tuple
    _v: dict = field(default_factory=dict, repr=False)

    def v_codewords(self, m1: int) -> np.ndarray:
        """V codebook for U index m1 (1-based); entries drawn from P(V|U = u_j(m1))."""
        if m1 not in self._v:
            rng = np.random.default_rng(np.random.SeedSequence(self.seed_key[0], spawn_key=self.seed_key[1:] + (m1,)))
            u = self.u_codewords[m1 - 1]
            cdf = np.cumsum(self.v_given_u[u], axis=1)
            draws = rng.random((self.v_size, len(u)))
            v = (draws[..., None] > cdf[None, :, :]).sum(axis=-1)
            self._v[m1] = np.minimum(v, self.v_given_u.shape[1] - 1)
        return self._v[m1]


class PositiveRateScheme:
    """Random-coding scheme with typicality encoding and decoding.

    Thresholds follow the nested pattern delta/8 (encoder), delta/4 (Detector
    1 test), delta/2 (Detector 1 cooperation search) and delta (Detector 2).
    Index 0 is the "nothing found" message; any 0 leads to the alternative.
    Rates are in nats, so codebook sizes are floor(exp(n R)).
    """

    deterministic = False
    name = "positive-rate"

    def __init__(self, P: JointPmf, aux: AuxPair, delta: float, R1: float, R2: float):
        self.P = P
        self.aux = aux
        self.delta = delta
        self.R1, self.R2 = R1, R2
        joint = aux_joint(P, aux)
        self.nx, self.ny1, self.ny2 = P.shape
        self.nu = aux.u_channel.output_shape[0]
        self.nv = aux.v_channel.output_shape[0]
        self.p_u = marginalize(joint, "U").mass
        uv = marginalize(joint, ("U", "V")).mass
        with np.errstate(divide="ignore", invalid="ignore"):
            self.v_given_u = np.where(self.p_u[:, None] > 0, uv / np.where(self.p_u > 0, self.p_u, 1.0)[:, None], 1.0 / self.nv)
        # reference pmfs with U (and V) first to match the type arrays built below
        self.ref_ux = marginalize(joint, ("X", "U")).mass.T
        self.ref_uy1 = marginalize(joint, ("Y1", "U")).mass.T
        self.ref_uvy1 = np.transpose(marginalize(joint, ("Y1", "U", "V")).mass, (1, 2, 0))
        self.ref_uvy2 = np.transpose(marginalize(joint, ("Y2", "U", "V")).mass, (1, 2, 0))

    def codebook_sizes(self, n: int) -> tuple[int, int]:
        return max(1, math.floor(math.exp(n * self.R1))), max(1, math.floor(math.exp(n * self.R2)))

    def draw_codebook(self, n: int, seed_key: tuple) -> Codebook:
        m1_size, m2_size = self.codebook_sizes(n)
        rng = np.random.default_rng(np.random.SeedSequence(seed_key[0], spawn_key=seed_key[1:]))
        u = rng.choice(self.nu, size=(m1_size, n), p=self.p_u)
        return Codebook(u, m2_size, self.v_given_u, seed_key)

    @staticmethod
    def _pair_types(a: np.ndarray, b: np.ndarray, na: int, nb: int) -> np.ndarray:
        """Joint type counts of rows of ``a`` (shape (K, n)) against sequence ``b``."""
        K = a.shape[0]
        flat = a * nb + b[None, :] + (np.arange(K) * na * nb)[:, None]
        return np.bincount(flat.ravel(), minlength=K * na * nb).reshape(K, na, nb)

    def trial(self, x, y1, y2, book: Codebook, rng: np.random.Generator) -> tuple[int, int, int, int]:
        """One block: returns (m1, m2, d1, d2) with hypothesis 1 = null."""
        n = len(x)
        d = self.delta
        types = self._pair_types(book.u_codewords, x, self.nu, self.nx)
        hits = np.flatnonzero(typical_counts(types, n, self.ref_ux, d / 8))
        if hits.size == 0:
            return 0, 0, 2, 2
        m1 = int(rng.choice(hits)) + 1
        u = book.u_codewords[m1 - 1]
        t_uy1 = self._pair_types(u[None, :], y1, self.nu, self.ny1)[0]
        if not typical_counts(t_uy1, n, self.ref_uy1, d / 4):
            return m1, 0, 2, 2
        v = book.v_codewords(m1)
        uv = u[None, :] * self.nv + v
        t_uvy1 = self._pair_types(uv, y1, self.nu * self.nv, self.ny1).reshape(-1, self.nu, self.nv, self.ny1)
        found = np.flatnonzero(typical_counts(t_uvy1, n, self.ref_uvy1, d / 2))
        if found.size == 0:
            return m1, 0, 1, 2
        m2 = int(rng.choice(found)) + 1
        t_uvy2 = self._pair_types(uv[m2 - 1][None, :], y2, self.nu * self.nv, self.ny2)[0].reshape(self.nu, self.nv, self.ny2)
        d2 = 1 if typical_counts(t_uvy2, n, self.ref_uvy2, d) else 2
        return m1, m2, 1, d2


def _sample_sequences(rng, law: np.ndarray, n: int):
    shape = law.shape
    cells = rng.choice(law.size, size=n, p=law.ravel())
    return np.unravel_index(cells, shape)


def _positive_chunk(args):
    scheme, law, proposal, n, m, k, chunk, size, seed, fixed_book = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n, m, k, chunk)))
    sampler = law if proposal is None else proposal
    if proposal is not None:
        with np.errstate(divide="ignore"):
            llr = np.log(law) - np.log(proposal)
    errors = [0, 0]
    w_sum = w_sq = 0.0
    m1_seen, m2_seen = set(), set()
    for t in range(size):
        if fixed_book is not None:
            book = fixed_book
        else:
            book = scheme.draw_codebook(n, (seed, n, m, k, chunk, t, 1))
        x, y1, y2 = _sample_sequences(rng, sampler, n)
        m1, m2, d1, d2 = scheme.trial(x, y1, y2, book, rng)
        m1_seen.add(m1)
        m2_seen.add(m2)
        errors[0] += d1 != m
        errors[1] += d2 != m
        if proposal is not None and (d1, d2)[k - 1] != m:
            w = math.exp(float(llr[x, y1, y2].sum()))
            w_sum += w
            w_sq += w * w
    return errors, (w_sum, w_sq), m1_seen, m2_seen


def _source_proposal(argmin: JointPmf, Pbar: JointPmf, mix: float = 1e-3) -> np.ndarray:
    """Law of (X, Y1, Y2) under an I-projection, completed with Pbar's conditional where Y2 is absent."""
    if "Y2" in argmin.axes:
        q = marginalize(argmin, SOURCE_AXES).mass
    else:
        xy1 = marginalize(argmin, ("X", "Y1")).mass
        pb_xy1 = Pbar.mass.sum(axis=2, keepdims=True)
        q = xy1[:, :, None] * Pbar.mass / pb_xy1
    q = (1 - mix) * q + mix * Pbar.mass
    return q / q.sum()


def run_positive_rate_scheme(P: JointPmf, Pbar: JointPmf, aux: AuxPair, cfg: SchemeConfig) -> SimulationReport:
    """Simulate the random-coding scheme; codebooks are redrawn for every trial unless fixed."""
    if cfg.delta is None or cfg.delta <= 0:
        raise ConfigInvalid("the positive-rate scheme needs delta > 0")
    joint = aux_joint(P, aux)
    i_ux = mutual_information(joint, "U", "X")
    i_vy1_u = mutual_information(joint, "V", "Y1", given="U")
    R1 = cfg.R1 if cfg.R1 is not None else i_ux + cfg.xi
    R2 = cfg.R2 if cfg.R2 is not None else i_vy1_u + cfg.xi
    scheme = PositiveRateScheme(P, aux, cfg.delta, R1, R2)
    for n in cfg.n:
        m1_size, m2_size = scheme.codebook_sizes(n)
        work = (m1_size + m2_size) * n
        if work > cfg.budget:
            raise BudgetExceeded(f"codebooks of sizes {m1_size} x {m2_size} at n={n} exceed budget {cfg.budget}")
    model = HypothesisModel.two_hypothesis(P, Pbar)
    report = SimulationReport(scheme.name, 2, 2, 2, cfg.as_dict())
    report.extra.update({"R1": R1, "R2": R2, "I(U;X)": i_ux, "I(V;Y1|U)": i_vy1_u,
                         "fixed_codebook": cfg.fixed_codebook})
    proposals = {}
    if cfg.estimator == "tilted":
        for k, proj in zip((1, 2), theorem1_projections(P, Pbar, aux)):
            proposals[k] = _source_proposal(proj.argmin, Pbar)
    for n in cfg.n:
        book = scheme.draw_codebook(n, (cfg.seed, n, 0)) if cfg.fixed_codebook else None
        tasks = []
        for m in (1, 2):
            for k in ((1, 2) if m == 2 and proposals else (0,)):
                prop = proposals.get(k) if m == 2 else None
                for chunk, size in _chunks(cfg.trials):
                    tasks.append((scheme, model.pmf(m).mass, prop, n, m, k, chunk, size, cfg.seed, book))
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
                results = list(ex.map(_positive_chunk, tasks))
        else:
            results = [_positive_chunk(t) for t in tasks]
        errs = {}
        weighted = {}
        m1_seen, m2_seen = set(), set()
        for task, (e, (w, w2), s1, s2) in zip(tasks, results):
            m, k = task[4], task[5]
            if k == 0:
                acc = errs.setdefault(m, [0, 0])
                acc[0] += e[0]
                acc[1] += e[1]
            else:
                acc = weighted.setdefault(k, [0.0, 0.0])
                acc[0] += w
                acc[1] += w2
            m1_seen |= s1
            m2_seen |= s2
        rates = {1: {}, 2: {}}
        for m, (e1, e2) in errs.items():
            rates[1][m] = RateEstimate.from_counts(e1, cfg.trials)
            rates[2][m] = RateEstimate.from_counts(e2, cfg.trials)
        for k, (w, w2) in weighted.items():
            rates[k][2] = RateEstimate.from_weights(w, w2, cfg.trials)
        report.records.append({
            "n": n, "trials": cfg.trials, "rates": rates,
            "messages": {"m1": tuple(sorted(m1_seen)), "m2": tuple(sorted(m2_seen))},
            "codebook_sizes": scheme.codebook_sizes(n),
        })
    _fit_all(report)
    return report
