"""Truncated convolutions, total-variation curves and tau histograms.

TV distances use the l1 norm on atom masses, so disjoint measures are at
distance 2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .construction import ConstructionLevel, TruncatedMeasure, measure_atoms
from .group import DEFAULT_CAP, CapExceeded, GroupSpec, ResourceLimitError
from .sampler import BLUE, EXPONENT, RED, Step, Trajectory, k_cdf, k_survival, normalizer
from .tail import Decomposer, TailValue, check_stabilization, detect_records, perturb_first, tau


class ConvolutionCapError(ResourceLimitError):
    def __init__(self, last_completed: int, cause: Exception):
        super().__init__(f"convolution cap hit after power {last_completed}: {cause}")
        self.last_completed = last_completed
        self.cause = cause


class InsufficientSampleError(ValueError):
    def __init__(self, resolved: int, needed: int = 100):
        super().__init__(f"only {resolved} resolved samples, need {needed}")
        self.resolved = resolved
        self.needed = needed


def point_mass(g) -> TruncatedMeasure:
    return TruncatedMeasure({g: 1.0})


def uniform(F: Iterable) -> TruncatedMeasure:
    F = list(F)
    return TruncatedMeasure({f: 1.0 / len(F) for f in F})


def convolve(m1: TruncatedMeasure, m2: TruncatedMeasure, spec: GroupSpec,
             cap: int | None = DEFAULT_CAP, eps: float = 0.0) -> TruncatedMeasure:
    """``m1 * m2``: the law of ``x1 x2``.

    With ``eps > 0`` atoms lighter than ``eps`` are dropped after the product
    and their mass is added to the deficit.
    """
    if cap is not None and eps == 0.0 and len(m1) * len(m2) > cap:
        raise CapExceeded("convolution products", len(m1) * len(m2), cap)
    mul = spec.mul
    out: dict = {}
    get = out.get
    items2 = list(m2.atoms.items())
    for a, p in m1.atoms.items():
        for b, q in items2:
            g = mul(a, b)
            out[g] = get(g, 0.0) + p * q
    dropped = 0.0
    if eps > 0.0:
        light = [g for g, m in out.items() if m < eps]
        dropped = math.fsum(out.pop(g) for g in light)
    if cap is not None and len(out) > cap:
        raise CapExceeded("convolution support", len(out), cap)
    deficit = 1.0 - (1.0 - m1.deficit) * (1.0 - m2.deficit) + dropped
    return TruncatedMeasure(out, deficit, max(eps, m1.eps, m2.eps))


def translate(g, m: TruncatedMeasure, spec: GroupSpec) -> TruncatedMeasure:
    """``g * m``: the law of ``g x``."""
    return TruncatedMeasure({spec.mul(g, x): p for x, p in m.atoms.items()}, m.deficit, m.eps)


class TvEstimate(NamedTuple):
    value: float
    error_bound: float
    n: int = 0
    g: object = None
    paper_bound: float | None = None
    eps: float = 0.0


def tv_distance(m1: TruncatedMeasure, m2: TruncatedMeasure, n: int = 0, g=None) -> TvEstimate:
    """l1 distance of the represented atoms; the unrepresented mass can move
    the true distance by at most ``d1 + d2``."""
    a, b = m1.atoms, m2.atoms
    terms = [abs(p - b.get(x, 0.0)) for x, p in a.items()]
    terms += [q for x, q in b.items() if x not in a]
    value = min(2.0, math.fsum(terms))
    return TvEstimate(value, m1.deficit + m2.deficit, n, g, None, max(m1.eps, m2.eps))


# ---------------------------------------------------------------------------
# the residual term


@lru_cache(maxsize=None)
def residual_bound(n: int, table: int = 1 << 16, ratio: float = 1.001) -> float:
    """Upper bound on P(the largest of K_1..K_n is not attained once, at a value
    above n, by a blue step).

    The good event has probability sum_{m>n} n p_m (1 - 2^-m) P(K < m)^(n-1).
    Terms up to ``table`` are summed exactly; beyond it the sum is bounded
    below block by block on geometric blocks [a, b), using the smallest factor
    of each block.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    m = np.arange(1, table + 1, dtype=np.float64)
    p = m ** -EXPONENT / normalizer()
    below = np.concatenate(([0.0], np.cumsum(p)[:-1]))  # P(K < m)
    sel = m > n
    good = [float(x) for x in n * p[sel] * (1.0 - 2.0 ** -m[sel]) * below[sel] ** (n - 1)]
    a = max(table + 1, n + 1)
    while True:
        b = max(a + 1, int(a * ratio))
        surv_a = k_survival(a - 1)
        if surv_a * n < 1e-15:
            break
        block = surv_a - k_survival(b - 1)  # P(a <= K < b)
        good.append(n * block * (1.0 - 2.0 ** -a) * k_cdf(a - 1) ** (n - 1))
        a = b
    return min(1.0, max(0.0, 1.0 - math.fsum(good)))


def paper_bound(n: int) -> float:
    return 4.0 / n + 4.0 * residual_bound(n)


# ---------------------------------------------------------------------------
# left walk


def opposite_measure(levels: Sequence[ConstructionLevel], k_max: int, spec: GroupSpec,
                     cap: int = DEFAULT_CAP) -> TruncatedMeasure:
    """Law of ``X^-1`` restricted to ``K <= k_max``."""
    return measure_atoms(levels, k_max, spec, cap).inverse(spec)


def convolution_powers(mu: TruncatedMeasure, n_max: int, spec: GroupSpec,
                       cap: int | None = DEFAULT_CAP, eps: float = 0.0) -> list[TruncatedMeasure]:
    """``[mu, mu^2, ..., mu^n_max]``."""
    out = [mu]
    for n in range(2, n_max + 1):
        try:
            out.append(convolve(out[-1], mu, spec, cap, eps))
        except ResourceLimitError as exc:
            raise ConvolutionCapError(n - 1, exc) from exc
    return out


def left_walk_tv_curve(g, n_max: int, levels: Sequence[ConstructionLevel], k_max: int,
                       spec: GroupSpec, *, cap: int | None = DEFAULT_CAP, eps: float = 0.0,
                       powers: Sequence[TruncatedMeasure] | None = None) -> list[TvEstimate]:
    """``||g * mu^n - mu^n||`` for ``n = 1..n_max`` with ``mu`` the opposite
    step law.  Pass ``powers`` to reuse convolution powers across several g."""
    if powers is None:
        mu = opposite_measure(levels, k_max, spec, cap or DEFAULT_CAP)
        powers = convolution_powers(mu, n_max, spec, cap, eps)
    out = []
    for n, m in enumerate(powers[:n_max], start=1):
        est = tv_distance(translate(g, m, spec), m, n, g)
        out.append(est._replace(paper_bound=paper_bound(n)))
    return out


def curve_trend_violations(curve: Sequence[TvEstimate], tol: float = 0.05) -> list[int]:
    """Powers n at which value + error_bound rises by more than ``tol``."""
    bad = []
    for a, b in zip(curve, curve[1:]):
        if b.value + b.error_bound > a.value + a.error_bound + tol:
            bad.append(b.n)
    return bad


# ---------------------------------------------------------------------------
# tau histograms


@dataclass
class TauHistogram:
    level: int
    counts: dict = field(default_factory=dict)
    unresolved: int = 0

    @property
    def resolved(self) -> int:
        return sum(self.counts.values())

    @property
    def total(self) -> int:
        return self.resolved + self.unresolved

    def merge(self, other: TauHistogram) -> TauHistogram:
        if other.level != self.level:
            raise ValueError("levels differ")
        counts = dict(self.counts)
        for g, c in other.counts.items():
            counts[g] = counts.get(g, 0) + c
        return TauHistogram(self.level, counts, self.unresolved + other.unresolved)


def tau_histogram(trajs: Iterable[Trajectory | TailValue], level: int, horizon: int,
                  spec: GroupSpec, decomposer: Decomposer | None = None) -> TauHistogram:
    """Counts of the level-``level`` entry of tau.  A trajectory without a
    resolved entry at that level within ``horizon`` counts as unresolved."""
    h = TauHistogram(level)
    for t in trajs:
        tv = t if isinstance(t, TailValue) else tau(t, horizon, spec, decomposer)
        e = tv.entries.get(level)
        if e is None or e.value is None:
            h.unresolved += 1
        else:
            h.counts[e.value] = h.counts.get(e.value, 0) + 1
    return h


class NondegeneracyReport(NamedTuple):
    passed: bool
    top2: list  # [(value, frequency), ...]
    resolved: int


def nondegeneracy_test(h: TauHistogram, min_freq: float) -> NondegeneracyReport:
    resolved = h.resolved
    if resolved < 100:
        raise InsufficientSampleError(resolved)
    ranked = sorted(h.counts.items(), key=lambda kv: -kv[1])
    top2 = [(g, c / resolved) for g, c in ranked[:2]]
    passed = len(top2) == 2 and all(f >= min_freq for _, f in top2)
    return NondegeneracyReport(passed, top2, resolved)


# ---------------------------------------------------------------------------
# CSV output


def _write_header(fh, header: dict | None):
    for k, v in (header or {}).items():
        fh.write(f"# {k}: {v}\n")


def write_tv_csv(path, curve: Sequence[TvEstimate], header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        _write_header(fh, header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "tv_value", "error_bound", "paper_bound"])
        for e in curve:
            w.writerow([e.n, repr(e.value), repr(e.error_bound), repr(e.paper_bound)])


def write_histogram_csv(path, hist: TauHistogram, spec: GroupSpec,
                        header: dict | None = None) -> None:
    gamma = spec.factor_spec
    with open(path, "w", newline="") as fh:
        _write_header(fh, header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "element", "count"])
        for g in sorted(hist.counts, key=gamma.order_key):
            w.writerow([hist.level, gamma.format(g), hist.counts[g]])
        w.writerow([hist.level, "unresolved", hist.unresolved])


def read_csv_header(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("# "):
                break
            k, _, v = line[2:].rstrip("\n").partition(": ")
            out[k] = v
    return out


# ---------------------------------------------------------------------------
# the perturbation experiment


class StructurallyInapplicableError(RuntimeError):
    """The experiment cannot be set up for this group or construction."""


@dataclass
class PerturbationResult:
    anchor: int  # index of the trajectory playing omega_0
    i0: int
    i1: int
    i2: int
    level: int  # k_{i1}
    replacement: Step
    constant: Fraction  # P(new first step) / P(old first step)
    original: TauHistogram
    perturbed: TauHistogram
    kept: int  # trajectories in S

    @property
    def disjoint(self) -> bool:
        return not set(self.original.counts) & set(self.perturbed.counts)

    @property
    def pooled(self) -> TauHistogram:
        return self.original.merge(self.perturbed)


def replacement_steps(levels: Sequence[ConstructionLevel], spec: GroupSpec, m: int,
                      limit: int = 64) -> list[Step]:
    """Steps of positive probability with K < m, red before blue, in a fixed order."""
    out = []
    for k in range(1, min(m, len(levels) + 1)):
        lv = levels[k - 1]
        out.append(Step(k, RED, lv.c))
        for f in sorted(lv.F_members(limit * 4), key=spec.order_key)[:limit]:
            out.append(Step(k, BLUE, spec.mul(lv.b, spec.inv(f))))
    return out


def _anchor(t: Trajectory, horizon: int, m: int, n_levels: int):
    """(i0, i1, i2) when ``t`` can play omega_0, else None."""
    rep = check_stabilization(t, horizon)
    if rep.i0 is None:
        return None
    recs = [r for r in detect_records(t.ks[:horizon], t.ys[:horizon]) if r.time >= rep.i0]
    for r, nxt in zip(recs, recs[1:]):
        if r.time >= 2 and m < r.value <= n_levels:
            if t.first_unresolved(nxt.time - 1) is None:
                return rep.i0, r.time, nxt.time
            return None
    return None


def perturbation_experiment(trajs: Sequence[Trajectory], levels: Sequence[ConstructionLevel],
                            spec: GroupSpec, horizon: int, m: int = 2,
                            decomposer: Decomposer | None = None) -> PerturbationResult:
    """Fix the first i2 - 1 steps of an anchor trajectory, keep the samples
    (with that prefix grafted on) whose stabilization time is at most i1, and
    compare tau at level k_{i1} before and after replacing the first step by
    one of smaller level and different image."""
    if not spec.icc:
        raise StructurallyInapplicableError("the factor group has no locks")
    trajs = list(trajs)
    for a, t in enumerate(trajs):
        anchor = _anchor(t, horizon, m, len(levels))
        if anchor is not None:
            break
    else:
        raise InsufficientSampleError(0, 1)
    i0, i1, i2 = anchor
    prefix = trajs[a].steps[:i2 - 1]
    x1 = spec.phi(prefix[0].x)
    choices = [s for s in replacement_steps(levels, spec, m) if spec.phi(s.x) != x1]
    if not choices:
        raise StructurallyInapplicableError("no replacement step with a different image")
    new_step = choices[0]
    level = trajs[a].ks[i1 - 1]
    S, TS = TauHistogram(level), TauHistogram(level)
    constant = None
    kept = 0
    for t in trajs:
        g = Trajectory(prefix + t.steps[i2 - 1:horizon], t.seed, t.index)
        rep = check_stabilization(g, horizon)
        if rep.i0 is None or rep.i0 > i1:
            continue
        gp, constant = perturb_first(g, new_step, levels, spec)
        rep_p = check_stabilization(gp, horizon)
        if rep_p.i0 is None or rep_p.i0 > i1:
            raise AssertionError("perturbation moved the stabilization time past i1")
        kept += 1
        for hist, traj in ((S, g), (TS, gp)):
            e = tau(traj, horizon, spec, decomposer).entries.get(level)
            if e is None or e.value is None:
                hist.unresolved += 1
            else:
                hist.counts[e.value] = hist.counts.get(e.value, 0) + 1
    return PerturbationResult(a, i0, i1, i2, level, new_step, constant, S, TS, kept)
