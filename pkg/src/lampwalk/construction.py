"""The level-by-level construction (A_i, F_i, D_i, b_i) and the step law nu.

Level i consumes the i-th enumerated element c_i and sets

    F_i  a box that is ((A_i ∪ {c_i, c_i^-1})^p, delta_i)-invariant
    D_i  = F_i^-1 ∪ F_i ∪ A_i ∪ {c_i, c_i^-1}
    b_i  with phi(b_i) a phi(D_i^q)-lock
    A_{i+1} = D_i ∪ b_i F_i^-1 ∪ F_i b_i^-1

with p, q and delta_i taken from a :class:`GrowthSchedule`.  Sets are held
explicitly while they fit under the cardinality cap.  With
``regions="auto"`` a level whose sets outgrow the cap is carried by bounding
windows instead: the Følner condition is then checked against the whole
window and the lock is certified by window inequalities.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Sequence

from .folner import Box, Window, find_folner, verify_folner
from .group import (
    DEFAULT_CAP,
    CapExceeded,
    GroupSpec,
    ResourceLimitError,
    decode_set,
    encode_set,
    enumerate_elements,
    set_inv,
    set_mul,
    set_pow,
)
from .locks import find_lock, verify_lock, verify_window_lock, window_lock
from .sampler import k_pmf, k_survival

CACHE_VERSION = 1
ENUM_LENGTH = 4096  # red steps use c_k; P(red, K > 4096) < 2^-4096


class LevelResourceError(ResourceLimitError):
    """A resource limit hit while building ``level``."""

    def __init__(self, level: int, cause: Exception):
        super().__init__(f"level {level}: {cause}")
        self.level = level
        self.cause = cause


class VerificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GrowthSchedule:
    """Exponents and tolerances of the construction.

    Each exponent is an affine map ``i -> a*i + b`` stored as ``(a, b)``;
    the tolerance is ``1 / (a*i + b)``, overridden at level 1 by
    ``delta_first`` when given.
    """

    name: str = "desk"
    folner_power: tuple = (0, 1)
    lock_power: tuple = (0, 2)
    w_power: tuple = (0, 1)
    delta: tuple = (1, 1)
    delta_first: Fraction | None = None

    def __post_init__(self):
        for i in (1, 2, 3):
            if min(self.folner_exponent(i), self.lock_exponent(i), self.w_exponent(i)) < 1:
                raise ValueError("schedule exponents must be >= 1")
            if not 0 < self.folner_delta(i) <= 1:
                raise ValueError("schedule tolerances must lie in (0, 1]")

    @staticmethod
    def _affine(ab, i):
        return ab[0] * i + ab[1]

    def folner_exponent(self, i: int) -> int:
        return self._affine(self.folner_power, i)

    def lock_exponent(self, i: int) -> int:
        return self._affine(self.lock_power, i)

    def w_exponent(self, i: int) -> int:
        return self._affine(self.w_power, i)

    def folner_delta(self, i: int) -> Fraction:
        if i == 1 and self.delta_first is not None:
            return Fraction(self.delta_first)
        den = self._affine(self.delta, i)
        return Fraction(1, den) if den > 0 else Fraction(0)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "folner_power": list(self.folner_power),
            "lock_power": list(self.lock_power),
            "w_power": list(self.w_power),
            "delta": list(self.delta),
            "delta_first": None if self.delta_first is None else str(self.delta_first),
        }

    @classmethod
    def from_description(cls, d: dict) -> GrowthSchedule:
        first = d.get("delta_first")
        return cls(
            d.get("name", "custom"),
            tuple(d["folner_power"]),
            tuple(d["lock_power"]),
            tuple(d["w_power"]),
            tuple(d["delta"]),
            None if first is None else Fraction(first),
        )

    def digest(self) -> str:
        return _digest(self.describe())


DESK = GrowthSchedule("desk")
PAPER = GrowthSchedule("paper", (1, 1), (10, 10), (1, 0), (1, 0), Fraction(1, 2))
PRESETS = {"desk": DESK, "paper": PAPER}


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@lru_cache(maxsize=8)
def _enumeration(spec: GroupSpec, n: int) -> tuple:
    return tuple(enumerate_elements(spec, n))


def enumeration_for(spec: GroupSpec, levels: Sequence = ()) -> tuple:
    return _enumeration(spec, max(ENUM_LENGTH, len(levels)))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstructionLevel:
    index: int
    A: frozenset | Window
    F: Box
    D: frozenset | Window
    b: object
    c: object
    lock_route: str  # "exhaustive" or "window"

    @property
    def explicit(self) -> bool:
        return not isinstance(self.D, Window)

    def F_members(self, cap: int = DEFAULT_CAP) -> frozenset:
        return self.F.members(cap)


def _window(region, spec: GroupSpec) -> Window:
    if isinstance(region, Window):
        return region
    return Window.of(region, spec)


def _lift(g, spec: GroupSpec):
    """A preimage of a factor-group element."""
    if spec.family == "product":
        return (0, g)
    return g


def folner_target(A, c, spec: GroupSpec, power: int, cap: int, allow_window: bool):
    """``(A ∪ {c, c^-1})^power``, explicit when it fits under the cap."""
    if not isinstance(A, Window):
        T = frozenset(A) | {c, spec.inv(c)}
        try:
            return set_pow(T, power, spec, cap)
        except CapExceeded:
            if not allow_window:
                raise
        return (Window.of(T, spec)).power(power)
    return (A | Window.of([c, spec.inv(c)], spec)).power(power)


def lock_target(D, spec: GroupSpec, power: int, cap: int, allow_window: bool):
    """``phi(D^power)`` in the factor group."""
    gamma = spec.factor_spec
    if not isinstance(D, Window):
        image = frozenset(spec.phi(d) for d in D)
        try:
            return set_pow(image, power, gamma, cap)
        except CapExceeded:
            if not allow_window:
                raise
        return Window.of(image, gamma).power(power)
    return D.project().power(power)


def build_levels(spec: GroupSpec, schedule: GrowthSchedule, L: int, *,
                 cap: int = DEFAULT_CAP, regions: str = "explicit",
                 lock_horizon: int = 100_000) -> list[ConstructionLevel]:
    """Build levels 1..L.  ``regions`` is ``"explicit"`` or ``"auto"``."""
    if L < 1:
        raise ValueError("L must be >= 1")
    if regions not in ("explicit", "auto"):
        raise ValueError("regions must be 'explicit' or 'auto'")
    auto = regions == "auto"
    enum = enumeration_for(spec, range(L))
    gamma = spec.factor_spec
    A = frozenset({spec.identity})
    levels = []
    for i in range(1, L + 1):
        c = enum[i - 1]
        ci = spec.inv(c)
        try:
            target = folner_target(A, c, spec, schedule.folner_exponent(i), cap, auto)
            F = find_folner(target, schedule.folner_delta(i), spec,
                            cap=None if auto else cap)
            small = F.size <= cap and not isinstance(A, Window)
            if small:
                Fm = F.members(cap)
                Fi = set_inv(Fm, spec)
                D = Fi | Fm | A | {c, ci}
            else:
                D = F.inverse_window() | F.window() | _window(A, spec) | Window.of([c, ci], spec)
            lt = lock_target(D, spec, schedule.lock_exponent(i), cap, auto)
            if isinstance(lt, Window):
                b = _lift(window_lock(lt), spec)
                route = "window"
            else:
                b = _lift(find_lock(lt, gamma, lock_horizon, cap), spec)
                route = "exhaustive"
            bi = spec.inv(b)
            if small:
                A_next = D | set_mul([b], Fi, spec, cap) | set_mul(Fm, [bi], spec, cap)
            else:
                bw = Window.of([b], spec)
                A_next = (_window(D, spec) | (bw * F.inverse_window())
                          | (F.window() * bw.inverse()))
        except ResourceLimitError as exc:
            if isinstance(exc, LevelResourceError):
                raise
            raise LevelResourceError(i, exc) from exc
        levels.append(ConstructionLevel(i, A, F, D, b, c, route))
        A = A_next
    return levels


def next_A(level: ConstructionLevel, spec: GroupSpec, cap: int = DEFAULT_CAP):
    if level.explicit:
        Fm = level.F_members(cap)
        Fi = set_inv(Fm, spec)
        bi = spec.inv(level.b)
        return level.D | set_mul([level.b], Fi, spec, cap) | set_mul(Fm, [bi], spec, cap)
    bw = Window.of([level.b], spec)
    return (_window(level.D, spec) | (bw * level.F.inverse_window())
            | (level.F.window() * bw.inverse()))


# ---------------------------------------------------------------------------
# verification


@dataclass
class LevelCheck:
    index: int
    folner: bool
    folner_ratio: float
    delta: Fraction
    lock: bool
    lock_route: str
    structure: bool
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.folner and self.lock and self.structure


def verify_levels(levels: Sequence[ConstructionLevel], spec: GroupSpec,
                  schedule: GrowthSchedule, cap: int = DEFAULT_CAP) -> list[LevelCheck]:
    """Re-derive every level invariant from scratch."""
    enum = enumeration_for(spec, levels)
    gamma = spec.factor_spec
    checks = []
    expected_A = frozenset({spec.identity})
    for lv in levels:
        i = lv.index
        notes = []
        structure = lv.c == enum[i - 1]
        if not structure:
            notes.append("c_i is not the i-th enumerated element")
        if isinstance(lv.A, Window) or isinstance(expected_A, Window):
            ok = isinstance(lv.A, Window) == isinstance(expected_A, Window) and lv.A == expected_A
        else:
            ok = lv.A == expected_A and spec.identity in lv.A
        if not ok:
            structure = False
            notes.append("A_i does not match the recursion")
        c, ci = lv.c, spec.inv(lv.c)
        target = folner_target(lv.A, c, spec, schedule.folner_exponent(i), cap, True)
        delta = schedule.folner_delta(i)
        frep = verify_folner(lv.F, target, delta)
        if lv.explicit:
            Fm = lv.F_members(cap)
            D = set_inv(Fm, spec) | Fm | lv.A | {c, ci}
            if D != lv.D:
                structure = False
                notes.append("D_i does not match its definition")
        else:
            D = lv.D
            want = (lv.F.inverse_window() | lv.F.window() | _window(lv.A, spec)
                    | Window.of([c, ci], spec))
            if D != want:
                structure = False
                notes.append("window of D_i does not match its definition")
        lt = lock_target(D, spec, schedule.lock_exponent(i), cap, True)
        if isinstance(lt, Window):
            lrep = verify_window_lock(spec.phi(lv.b), lt)
            route = "window"
        else:
            lrep = verify_lock(spec.phi(lv.b), lt, gamma)
            route = "exhaustive"
        if not lrep.passed:
            notes.append(f"lock witness: {lrep.witness}")
        nxt = next_A(lv, spec, cap)
        if not isinstance(nxt, Window) and not isinstance(lv.A, Window):
            if not lv.A <= nxt:
                structure = False
                notes.append("A_i is not contained in A_{i+1}")
        checks.append(LevelCheck(i, frep.passed, frep.worst[1], delta, lrep.passed,
                                 route, structure, notes))
        expected_A = nxt
    return checks


# ---------------------------------------------------------------------------
# the truncated step law


@dataclass
class TruncatedMeasure:
    """Finitely many atoms plus the mass that is not represented."""

    atoms: dict
    deficit: float = 0.0
    eps: float = 0.0  # sparsification threshold used to produce this measure

    @property
    def mass(self) -> float:
        return math.fsum(self.atoms.values())

    def normalization_error(self) -> float:
        return abs(self.mass + self.deficit - 1.0)

    def inverse(self, spec: GroupSpec) -> TruncatedMeasure:
        return TruncatedMeasure({spec.inv(g): m for g, m in self.atoms.items()},
                                self.deficit, self.eps)

    def __len__(self) -> int:
        return len(self.atoms)


def measure_atoms(levels: Sequence[ConstructionLevel], k_max: int, spec: GroupSpec,
                  cap: int = DEFAULT_CAP) -> TruncatedMeasure:
    """Law of X restricted to ``K <= k_max``."""
    if k_max > len(levels):
        raise ValueError("k_max exceeds the number of built levels")
    atoms: dict = {}
    for lv in levels[:k_max]:
        i = lv.index
        p = k_pmf(i)
        red = p * 2.0 ** -i
        atoms[lv.c] = atoms.get(lv.c, 0.0) + red
        Fm = lv.F_members(cap)
        each = (p - red) / len(Fm)
        for f in Fm:
            x = spec.mul(lv.b, spec.inv(f))
            atoms[x] = atoms.get(x, 0.0) + each
    return TruncatedMeasure(atoms, k_survival(k_max))


# ---------------------------------------------------------------------------
# cache


def _region_json(region, spec: GroupSpec):
    if isinstance(region, Window):
        return {"window": region.describe()}
    return encode_set(region, spec)


def _region_from_json(data, spec: GroupSpec):
    if isinstance(data, dict):
        return Window.from_description(data["window"])
    return decode_set(data, spec)


def levels_to_json(levels: Sequence[ConstructionLevel], spec: GroupSpec,
                   schedule: GrowthSchedule, extra: dict | None = None) -> str:
    doc = {
        "version": CACHE_VERSION,
        "spec_digest": spec.digest(),
        "schedule_digest": schedule.digest(),
        "spec": spec.describe(),
        "schedule": schedule.describe(),
        "levels": [
            {
                "index": lv.index,
                "A": _region_json(lv.A, spec),
                "F": {"box": lv.F.describe()},
                "D": _region_json(lv.D, spec),
                "b": spec.to_json(lv.b),
                "c": spec.to_json(lv.c),
                "lock_route": lv.lock_route,
            }
            for lv in levels
        ],
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def levels_from_json(text: str) -> tuple[list[ConstructionLevel], GroupSpec, GrowthSchedule, dict]:
    doc = json.loads(text)
    if doc.get("version") != CACHE_VERSION:
        raise ValueError(f"unsupported cache version {doc.get('version')}")
    spec = GroupSpec.from_description(doc["spec"])
    schedule = GrowthSchedule.from_description(doc["schedule"])
    if spec.digest() != doc["spec_digest"] or schedule.digest() != doc["schedule_digest"]:
        raise ValueError("cache digests do not match its contents")
    levels = [
        ConstructionLevel(
            int(d["index"]),
            _region_from_json(d["A"], spec),
            Box.from_description(d["F"]["box"]),
            _region_from_json(d["D"], spec),
            spec.from_json(d["b"]),
            spec.from_json(d["c"]),
            d["lock_route"],
        )
        for d in doc["levels"]
    ]
    return levels, spec, schedule, doc


def cache_key(spec: GroupSpec, schedule: GrowthSchedule, L: int, regions: str = "explicit",
              cap: int = DEFAULT_CAP, lock_horizon: int = 100_000) -> str:
    return _digest([spec.digest(), schedule.digest(), L, regions, cap, lock_horizon,
                    CACHE_VERSION])


def cached_build(cache_dir: str | os.PathLike, spec: GroupSpec, schedule: GrowthSchedule,
                 L: int, **kwargs) -> tuple[list[ConstructionLevel], Path]:
    """``build_levels`` with an on-disk cache keyed by a digest of its inputs."""
    regions = kwargs.get("regions", "explicit")
    path = Path(cache_dir) / f"levels-{cache_key(spec, schedule, L, **kwargs)}.json"
    if path.exists():
        levels, *_ = levels_from_json(path.read_text())
        return levels, path
    levels = build_levels(spec, schedule, L, **kwargs)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(levels_to_json(levels, spec, schedule, {"regions": regions}))
    tmp.replace(path)
    return levels, path
