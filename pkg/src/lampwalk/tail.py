"""Records, stabilization and the tail functional tau.

Everything here is horizon-relative: a finite prefix cannot certify a tail
event, so reports always carry the horizon they were computed at.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

from .construction import ConstructionLevel, GrowthSchedule, enumeration_for
from .folner import Box, Window
from .group import DEFAULT_CAP, CapExceeded, GroupSpec, set_pow
from .sampler import BLUE, RED, Step, Trajectory, UnresolvedStepError, k_pmf


class AmbiguityError(RuntimeError):
    """Two decompositions of one element: the lock property is violated."""


class RecordEvent(NamedTuple):
    time: int
    value: int
    simple: bool
    y: str | None = None


def detect_records(ks: Sequence[int], ys: Sequence[str] | None = None) -> list[RecordEvent]:
    """All record times (1-based).  Time 1 is a simple record."""
    if not ks:
        raise ValueError("empty sequence")
    out = []
    best = None
    for i, k in enumerate(ks, start=1):
        y = ys[i - 1] if ys is not None else None
        if best is None or k > best:
            out.append(RecordEvent(i, k, True, y))
            best = k
        elif k == best:
            out.append(RecordEvent(i, k, False, y))
    return out


class StabilizationReport(NamedTuple):
    certified_to: int
    i0: int | None
    status: str  # "certified-at-horizon" | "not-stabilized-at-horizon"

    @property
    def stabilized(self) -> bool:
        return self.i0 is not None


def check_stabilization(t: Trajectory | tuple, horizon: int) -> StabilizationReport:
    """Smallest i0 such that on [i0, horizon] running maxima exceed the time and
    every record is simple and blue."""
    ks, ys = (t.ks, t.ys) if isinstance(t, Trajectory) else t
    if horizon > len(ks):
        raise ValueError("horizon exceeds trajectory length")
    last_bad = 0
    best = None
    for i in range(1, horizon + 1):
        k = ks[i - 1]
        bad = False
        if best is None or k > best:
            best = k
            bad = ys[i - 1] != BLUE
        elif k == best:
            bad = True
        if best <= i:
            bad = True
        if bad:
            last_bad = i
    if last_bad >= horizon:
        return StabilizationReport(horizon, None, "not-stabilized-at-horizon")
    return StabilizationReport(horizon, last_bad + 1, "certified-at-horizon")


# ---------------------------------------------------------------------------
# decompositions w = q' phi(b_n) f q''


class Decomposition(NamedTuple):
    q1: object
    core: object
    q2: object
    level: int


def _factor_box(F: Box) -> Box:
    if F.family == "product":
        return Box("lamplighter", F.R, F.S)
    return F


def _clear(lo: int, mask: int, a: int, b: int) -> tuple[int, int]:
    """Remove the lamps at positions a..b from the configuration (lo, mask)."""
    if not mask:
        return 0, 0
    hi = lo + mask.bit_length() - 1
    a, b = max(a, lo), min(b, hi)
    if a <= b:
        mask &= ~(((1 << (b - a + 1)) - 1) << (a - lo))
    return lo, mask


def _rebase(lo: int, mask: int, origin: int) -> int:
    """The mask with bit 0 at ``origin``; every lamp must lie at or above it."""
    if not mask:
        return 0
    return mask << (lo - origin) if lo >= origin else mask >> (origin - lo)


class Decomposer:
    """Exhaustive decompositions over the levels whose ``A_n`` is explicit.

    The sets ``phi(A_n^w)`` are computed once per level and reused.
    """

    def __init__(self, levels: Sequence[ConstructionLevel], spec: GroupSpec,
                 schedule: GrowthSchedule, cap: int = DEFAULT_CAP):
        self.levels = list(levels)
        self.spec = spec
        self.gamma = spec.factor_spec
        self.schedule = schedule
        self.cap = cap
        self._Q: dict = {}
        self._Qset: dict = {}
        self._idx: dict = {}

    def Q(self, n: int):
        """``phi(A_n^w)`` sorted, or None when it cannot be listed."""
        if n not in self._Q:
            lv = self.levels[n - 1]
            if isinstance(lv.A, Window):
                self._Q[n] = None
            else:
                image = frozenset(self.spec.phi(a) for a in lv.A)
                try:
                    Q = set_pow(image, self.schedule.w_exponent(n), self.gamma, self.cap)
                    self._Q[n] = sorted(Q, key=self.gamma.order_key)
                    self._Qset[n] = Q
                except CapExceeded:
                    self._Q[n] = None
        return self._Q[n]

    def in_Q(self, w, n: int) -> bool:
        if self.Q(n) is None:
            raise CapExceeded(f"phi(A_{n}^w)", self.cap + 1, self.cap)
        return w in self._Qset[n]

    def in_core(self, x, n: int) -> bool:
        """Whether ``x`` lies in ``phi(b_n F_n^-1)``."""
        lv = self.levels[n - 1]
        g = self.gamma
        return _factor_box(lv.F).contains(g.inv(g.mul(g.inv(self.spec.phi(lv.b)), x)))

    def feasible(self, n: int) -> bool:
        return 1 <= n <= len(self.levels) and self.Q(n) is not None

    @property
    def feasible_levels(self) -> list[int]:
        return [n for n in range(1, len(self.levels) + 1) if self.feasible(n)]

    def _index(self, n: int):
        """q'' candidates keyed by (shift, product shift t, lamps outside the
        box window around t), for the lamplighter factor."""
        if n not in self._idx:
            Q = self.Q(n)
            box = _factor_box(self.levels[n - 1].F)
            lamps = [q for q in Q if q.mask]
            qlo = min((q.lo for q in lamps), default=0)
            qhi = max((q.hi for q in lamps), default=-1)
            idx: dict = {}
            for q in Q:
                for t in range(-box.R, box.R + 1):
                    lo, m = _clear(q.lo, q.mask, t - box.S, t + box.S)
                    idx.setdefault((q.shift, t, _rebase(lo, m, qlo)), []).append(q)
            shifts = sorted({q.shift for q in Q})
            self._idx[n] = (idx, shifts, qlo, qhi, box)
        return self._idx[n]

    def _pairs(self, w, n: int):
        """All (q', q'') in Q x Q with q'' w^-1 q' b_n in phi(F_n)."""
        Q = self.Q(n)
        g = self.gamma
        b = self.spec.phi(self.levels[n - 1].b)
        wi = g.inv(w)
        if g.family != "lamplighter":
            box = _factor_box(self.levels[n - 1].F)
            for q1 in Q:
                right = g.mul(g.mul(wi, q1), b)
                for q2 in Q:
                    if box.contains(g.mul(q2, right)):
                        yield q1, q2
            return
        idx, shifts, qlo, qhi, box = self._index(n)
        for q1 in Q:
            sr, lr, mr = g.mul(g.mul(wi, q1), b)
            for s in shifts:
                t = s + sr
                if t < -box.R or t > box.R:
                    continue
                lo, m = _clear(lr + s, mr, t - box.S, t + box.S)
                if m and (lo + (m & -m).bit_length() - 1 < qlo or lo + m.bit_length() - 1 > qhi):
                    continue
                for q2 in idx.get((s, t, _rebase(lo, m, qlo)), ()):
                    yield q1, q2

    def decompose(self, w, n: int) -> Decomposition | None:
        if self.Q(n) is None:
            raise CapExceeded(f"phi(A_{n}^w)", self.cap + 1, self.cap)
        g = self.gamma
        found = None
        for q1, q2 in self._pairs(w, n):
            if found is None:
                found = (q1, q2)
            elif found[0] != q1:
                raise AmbiguityError(
                    f"level {n}: {g.format(w)} splits at q'={g.format(found[0])} "
                    f"and q'={g.format(q1)}")
            elif g.order_key(q2) < g.order_key(found[1]):
                found = (q1, q2)
        if found is None:
            return None
        q1, q2 = found
        core = g.mul(g.mul(g.inv(q1), w), g.inv(q2))
        return Decomposition(q1, core, q2, n)

    def p_map(self, w) -> Decomposition | None:
        """Decomposition of ``w`` at the unique feasible level admitting one."""
        hit = None
        for n in self.feasible_levels:
            d = self.decompose(w, n)
            if d is not None:
                if hit is not None:
                    raise AmbiguityError(f"{self.gamma.format(w)} lies in W_{hit.level} and W_{n}")
                hit = d
        return hit

    def t_chain(self, w) -> dict:
        """Iterates p(w), p(p(w)), ... that lie in a W_n, keyed by that n."""
        out = {}
        d = self.p_map(w)
        while d is not None:
            nxt = self.p_map(d.q1)
            if nxt is None:
                break
            if nxt.level >= d.level:
                raise AmbiguityError("p does not lower the level")
            out[nxt.level] = d.q1
            d = nxt
        return out


def decompose_w(w, n: int, levels, spec: GroupSpec, schedule: GrowthSchedule,
                cap: int = DEFAULT_CAP) -> Decomposition | None:
    return Decomposer(levels, spec, schedule, cap).decompose(w, n)


def p_map(w, levels, spec: GroupSpec, schedule: GrowthSchedule, cap: int = DEFAULT_CAP):
    d = Decomposer(levels, spec, schedule, cap).p_map(w)
    return None if d is None else d.q1


def t_chain(w, levels, spec: GroupSpec, schedule: GrowthSchedule,
            cap: int = DEFAULT_CAP) -> set:
    return set(Decomposer(levels, spec, schedule, cap).t_chain(w).values())


# ---------------------------------------------------------------------------
# tau by bookkeeping


@dataclass
class TailEntry:
    level: int
    value: object | None  # None when a needed step is unresolved
    record_time: int  # the record time i with value phi(Z_{i-1})
    previous_record: int
    confidence: str = "bookkeeping-only"
    # brute-force status: agree, not-in-W, other-split, infeasible, unresolved, disagree
    brute: str = "infeasible"


@dataclass
class TailValue:
    horizon: int
    i0: int | None
    entries: dict = field(default_factory=dict)  # level -> TailEntry

    def values(self) -> dict:
        return {n: e.value for n, e in self.entries.items() if e.value is not None}

    def unresolved_levels(self) -> list[int]:
        return [n for n, e in self.entries.items() if e.value is None]

    def issubset(self, other: TailValue) -> bool:
        mine, theirs = self.values(), other.values()
        return all(theirs.get(n) == v for n, v in mine.items())


def tau(t: Trajectory, horizon: int, spec: GroupSpec,
        decomposer: Decomposer | None = None, strict: bool = False) -> TailValue:
    """Tail functional restricted to ``horizon``.

    For consecutive records r < i with r at or after the stabilization time,
    phi(Z_{i-1}) is entered at level k_r.  Such an r is simple and blue with
    k_r > r, which is what places phi(Z_{i-1}) in W_{k_r}.  When i0 is not a
    record this is the rule "every record after i0 except the first".

    With a ``decomposer`` each entry at a brute-force feasible level is also
    decomposed exhaustively.  An entry is ``cross-checked`` when the
    decomposition recovers phi(Z_{r-1}).
    """
    rep = check_stabilization(t, horizon)
    out = TailValue(horizon, rep.i0)
    if rep.i0 is None:
        return out
    recs = [r for r in detect_records(t.ks[:horizon], t.ys[:horizon]) if r.time >= rep.i0]
    if len(recs) < 2:
        return out
    # prefix products phi(Z_j), None once an unresolved step has been met
    prefixes = [spec.factor_spec.identity]
    z = spec.identity
    for s in t.steps[:horizon]:
        z = None if (z is None or s.x is None) else spec.mul(z, s.x)
        prefixes.append(None if z is None else spec.phi(z))
    for prev, cur in zip(recs, recs[1:]):
        value = prefixes[cur.time - 1]
        if value is None and strict:
            raise UnresolvedStepError(t.first_unresolved(cur.time - 1))
        entry = TailEntry(prev.value, value, cur.time, prev.time)
        if value is None:
            entry.brute = "unresolved"
        elif decomposer is not None and decomposer.feasible(prev.value):
            entry.brute = _brute_status(t, prev.time, cur.time, prev.value, value,
                                        prefixes[prev.time - 1], spec, decomposer)
            if entry.brute == "agree":
                entry.confidence = "cross-checked"
        if prev.value in out.entries:
            raise AmbiguityError(f"two tail entries at level {prev.value}")
        out.entries[prev.value] = entry
    return out


def _brute_status(t: Trajectory, r: int, i: int, n: int, w, q1, spec: GroupSpec,
                  dec: Decomposer) -> str:
    d = dec.decompose(w, n)
    g = spec.factor_spec
    suffix = g.identity
    for s in t.steps[r:i - 1]:
        suffix = g.mul(suffix, spec.phi(s.x))
    expected = (dec.in_Q(q1, n) and dec.in_Q(suffix, n)
                and dec.in_core(spec.phi(t.steps[r - 1].x), n))
    if d is not None and d.q1 == q1:
        return "agree"
    if expected:
        return "disagree"
    return "not-in-W" if d is None else "other-split"


# ---------------------------------------------------------------------------
# perturbation of the first step


class ZeroProbabilityError(ValueError):
    pass


def step_probability(step: Step, levels: Sequence[ConstructionLevel], spec: GroupSpec) -> Fraction:
    """Exact probability of the triple (k, y, x) under the step law."""
    k = step.k
    pk = Fraction(k_pmf(k))
    if step.y == RED:
        enum = enumeration_for(spec, levels)
        if k > len(enum) or step.x != enum[k - 1]:
            return Fraction(0)
        return pk / 2**k
    if step.y != BLUE:
        return Fraction(0)
    if k > len(levels):
        raise UnresolvedStepError(1)
    lv = levels[k - 1]
    f = spec.inv(spec.mul(spec.inv(lv.b), step.x))
    if not lv.F.contains(f):
        return Fraction(0)
    return pk * (1 - Fraction(1, 2**k)) / lv.F.size


def perturb_first(t: Trajectory, step: Step, levels: Sequence[ConstructionLevel],
                  spec: GroupSpec) -> tuple[Trajectory, Fraction]:
    """Replace the first step; also return P(new step) / P(old step)."""
    new = step_probability(step, levels, spec)
    if new == 0:
        raise ZeroProbabilityError(f"replacement step {step} has probability 0")
    old = step_probability(t.steps[0], levels, spec)
    if old == 0:
        raise ZeroProbabilityError("the original first step has probability 0")
    return t.replace_first(step), new / old
