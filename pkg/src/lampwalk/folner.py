"""Almost-invariant (Følner) sets.

Følner sets are parametric boxes whose cardinality is known in closed form,
so ``|aF \\ F|`` is counted exactly without listing ``F``:

* lamplighter: ``{(t, L) : |t| <= R, L ⊆ [t - S, t + S]}`` -- the lamp window
  travels with the lamplighter, which is what makes the box invariant under
  *left* multiplication;
* product: ``[-Rz, Rz] x`` the lamplighter box;
* free-abelian: the cube ``[-R, R]^d``.

Large subsets of the lamplighter are summarized by a :class:`Window`, a box
``{(t, L) : |t| <= radius, L ⊆ [lo, hi]}`` in absolute lamp coordinates that
is closed under the set operations used by the construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, NamedTuple

from .group import (
    DEFAULT_CAP,
    CapExceeded,
    GroupElement,
    GroupSpec,
    ResourceLimitError,
)


@dataclass(frozen=True)
class Window:
    """Bounding box of a set of lamplighter (or product) elements.

    ``lo > hi`` encodes "no lamp is ever lit".  ``zr`` bounds the Z
    coordinate of product-family elements and is 0 otherwise.
    """

    radius: int
    lo: int
    hi: int
    zr: int = 0

    @property
    def has_lamps(self) -> bool:
        return self.lo <= self.hi

    @classmethod
    def of(cls, elements: Iterable, spec: GroupSpec) -> Window:
        radius, zr, lo, hi = 0, 0, 0, -1
        for x in elements:
            if spec.family == "product":
                zr = max(zr, abs(x[0]))
                x = x[1]
            radius = max(radius, abs(x.shift))
            if x.mask:
                if lo > hi:
                    lo, hi = x.lo, x.hi
                else:
                    lo, hi = min(lo, x.lo), max(hi, x.hi)
        return cls(radius, lo, hi, zr)

    def union(self, other: Window) -> Window:
        if not self.has_lamps:
            lo, hi = other.lo, other.hi
        elif not other.has_lamps:
            lo, hi = self.lo, self.hi
        else:
            lo, hi = min(self.lo, other.lo), max(self.hi, other.hi)
        return Window(max(self.radius, other.radius), lo, hi, max(self.zr, other.zr))

    def __or__(self, other: Window) -> Window:
        return self.union(other)

    def __mul__(self, other: Window) -> Window:
        # L1 ^ (s1 + L2) with |s1| <= radius
        r = self.radius
        if other.has_lamps:
            moved = Window(0, other.lo - r, other.hi + r)
            lamps = Window(0, self.lo, self.hi) | moved
        else:
            lamps = self
        return Window(r + other.radius, lamps.lo, lamps.hi, self.zr + other.zr)

    def inverse(self) -> Window:
        if not self.has_lamps:
            return self
        return Window(self.radius, self.lo - self.radius, self.hi + self.radius, self.zr)

    def power(self, k: int) -> Window:
        out = self
        for _ in range(k - 1):
            out = out * self
        return out

    def project(self) -> Window:
        return Window(self.radius, self.lo, self.hi)

    def contains(self, x, spec: GroupSpec) -> bool:
        if spec.family == "product":
            if abs(x[0]) > self.zr:
                return False
            x = x[1]
        if abs(x.shift) > self.radius:
            return False
        return not x.mask or (self.has_lamps and self.lo <= x.lo and x.hi <= self.hi)

    def describe(self) -> dict:
        return {"radius": self.radius, "lo": self.lo, "hi": self.hi, "zr": self.zr}

    @classmethod
    def from_description(cls, d: dict) -> Window:
        return cls(int(d["radius"]), int(d["lo"]), int(d["hi"]), int(d.get("zr", 0)))


def _good_shifts(R: int, S: int, s: int, lo: int | None, hi: int | None) -> int:
    """Number of box positions t that a translate by (s, lamps in [lo, hi]) keeps inside."""
    upper = min(R, R - s)
    lower = max(-R, -R - s)
    if lo is not None:
        upper = min(upper, lo - s + S)
        lower = max(lower, hi - s - S)
    return max(0, upper - lower + 1)


@dataclass(frozen=True)
class Box:
    """Parametric Følner box of a built-in family (see module docstring)."""

    family: str
    R: int
    S: int = 0
    Rz: int = 0
    rank: int = 1

    @property
    def size(self) -> int:
        if self.family == "free-abelian":
            return (2 * self.R + 1) ** self.rank
        n = (2 * self.R + 1) << (2 * self.S + 1)
        if self.family == "product":
            n *= 2 * self.Rz + 1
        return n

    def contains(self, x) -> bool:
        if self.family == "free-abelian":
            return all(abs(v) <= self.R for v in x)
        if self.family == "product":
            if abs(x[0]) > self.Rz:
                return False
            x = x[1]
        t = x.shift
        if abs(t) > self.R:
            return False
        return not x.mask or (t - self.S <= x.lo and x.hi <= t + self.S)

    def outside_count(self, a) -> int:
        """Exact ``|aF \\ F|``."""
        if self.family == "free-abelian":
            side = 2 * self.R + 1
            inside = 1
            for v in a:
                inside *= max(0, side - abs(v))
            return self.size - inside
        z = 0
        if self.family == "product":
            z, a = a
        if a.mask:
            good = _good_shifts(self.R, self.S, a.shift, a.lo, a.hi)
        else:
            good = _good_shifts(self.R, self.S, a.shift, None, None)
        inside = good << (2 * self.S + 1)
        if self.family == "product":
            inside *= max(0, 2 * self.Rz + 1 - abs(z))
        return self.size - inside

    def worst_over_window(self, w: Window) -> tuple[int, GroupElement | tuple]:
        """Largest ``|aF \\ F|`` over every ``a`` in the window, with a maximizer."""
        if self.family == "free-abelian":
            raise TypeError("windows are defined for lamplighter families only")
        lo, hi = (w.lo, w.hi) if w.has_lamps else (None, None)
        candidates = {-w.radius, w.radius, 0}
        if lo is not None:
            candidates |= {lo + self.S - self.R, hi - self.S + self.R}
        best = None
        for s in sorted(c for c in candidates if -w.radius <= c <= w.radius):
            good = _good_shifts(self.R, self.S, s, lo, hi)
            if best is None or good < best[0]:
                best = (good, s)
        good, s = best
        witness = GroupElement(s, {lo, hi} if lo is not None else ())
        inside = good << (2 * self.S + 1)
        if self.family == "product":
            inside *= max(0, 2 * self.Rz + 1 - w.zr)
            witness = (w.zr, witness)
        return self.size - inside, witness

    def window(self) -> Window:
        if self.family == "free-abelian":
            raise TypeError("windows are defined for lamplighter families only")
        return Window(self.R, -self.R - self.S, self.R + self.S, self.Rz)

    def inverse_window(self) -> Window:
        # (t, L)^-1 = (-t, L - t) and L - t ⊆ [-S, S]
        return Window(self.R, -self.S, self.S, self.Rz)

    def members(self, cap: int = DEFAULT_CAP) -> frozenset:
        if self.size > cap:
            raise CapExceeded("Følner box", self.size, cap)
        if self.family == "free-abelian":
            import itertools

            side = range(-self.R, self.R + 1)
            return frozenset(itertools.product(side, repeat=self.rank))
        width = 2 * self.S + 1
        base = [
            GroupElement._raw(t, t - self.S, m)
            for t in range(-self.R, self.R + 1)
            for m in range(1 << width)
        ]
        if self.family == "product":
            return frozenset((z, g) for z in range(-self.Rz, self.Rz + 1) for g in base)
        return frozenset(base)

    def sample(self, rng):
        """Uniform element; ``rng`` is a ``numpy.random.Generator``."""
        if self.family == "free-abelian":
            return tuple(int(v) for v in rng.integers(-self.R, self.R + 1, size=self.rank))
        z = int(rng.integers(-self.Rz, self.Rz + 1)) if self.family == "product" else 0
        t = int(rng.integers(-self.R, self.R + 1))
        mask = _random_bits(rng, 2 * self.S + 1)
        g = GroupElement._raw(t, t - self.S, mask)
        return (z, g) if self.family == "product" else g

    def describe(self) -> dict:
        return {"family": self.family, "R": self.R, "S": self.S, "Rz": self.Rz,
                "rank": self.rank}

    @classmethod
    def from_description(cls, d: dict) -> Box:
        return cls(d["family"], int(d["R"]), int(d["S"]), int(d["Rz"]), int(d["rank"]))


def _random_bits(rng, n: int) -> int:
    words = (n + 31) // 32
    out = 0
    for w in rng.integers(0, 1 << 32, size=words, dtype="uint64"):
        out = (out << 32) | int(w)
    return out >> (32 * words - n)


# ---------------------------------------------------------------------------


class FolnerReport(NamedTuple):
    passed: bool
    worst: tuple  # (element, ratio |aF\F| / |F|)


def verify_folner(F, A, delta, spec: GroupSpec | None = None) -> FolnerReport:
    """Check ``|aF \\ F| < delta |F|`` for every ``a`` in ``A``.

    ``F`` is a :class:`Box` or an explicit set (then ``spec`` is required);
    ``A`` is an explicit set or a :class:`Window` (boxes only).
    """
    delta = Fraction(delta)
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if isinstance(F, Box):
        size = F.size
        if isinstance(A, Window):
            worst_count, worst_a = F.worst_over_window(A)
        else:
            worst_count, worst_a = -1, None
            for a in A:
                n = F.outside_count(a)
                if n > worst_count:
                    worst_count, worst_a = n, a
    else:
        if not F:
            raise ValueError("F must be nonempty")
        if spec is None:
            raise ValueError("explicit F needs a group spec")
        F = frozenset(F)
        size = len(F)
        worst_count, worst_a = -1, None
        for a in A:
            n = sum(1 for f in F if spec.mul(a, f) not in F)
            if n > worst_count:
                worst_count, worst_a = n, a
    if worst_a is None:
        return FolnerReport(True, (None, 0.0))
    ratio = Fraction(worst_count, size)
    return FolnerReport(ratio < delta, (worst_a, float(ratio)))


def _profiles(A, spec: GroupSpec) -> set:
    """Reduce an explicit set to the data ``outside_count`` depends on."""
    out = set()
    for a in A:
        if spec.family == "free-abelian":
            out.add(tuple(sorted(abs(v) for v in a)))
            continue
        z = 0
        if spec.family == "product":
            z, a = abs(a[0]), a[1]
        if a.mask:
            out.add((z, GroupElement._raw(a.shift, a.lo, 1 | (1 << (a.hi - a.lo)))))
        else:
            out.add((z, GroupElement(a.shift)))
    return out


def _box_candidates(spec: GroupSpec, limit: int):
    if spec.family == "free-abelian":
        for R in range(limit + 1):
            yield Box("free-abelian", R, rank=spec.rank)
        return
    for S in range(limit + 1):
        for R in range(limit + 1):
            if spec.family == "product":
                for Rz in range(limit + 1):
                    yield Box("product", R, S, Rz)
            else:
                yield Box("lamplighter", R, S)


def find_folner(A, delta, spec: GroupSpec, cap: int | None = None,
                search_limit: int = 4096) -> Box:
    """Smallest box (by cardinality, then parameters) that is ``(A, delta)``-invariant.

    ``cap`` bounds the cardinality of the returned box; ``None`` allows boxes
    that are only ever handled parametrically.
    """
    delta = Fraction(delta)
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    p, q = delta.numerator, delta.denominator
    if isinstance(A, Window):
        lamps = A.has_lamps
        lo, hi = (A.lo, A.hi) if lamps else (None, None)
        shifts = {-A.radius, A.radius, 0}
        product = spec.family == "product"

        def passes(R, S, Rz):
            # |aF \ F| / |F| = 1 - good / (2R+1) (times the Z factor for products)
            cands = shifts | ({lo + S - R, hi - S + R} if lamps else set())
            good = min(_good_shifts(R, S, c, lo, hi) for c in cands if -A.radius <= c <= A.radius)
            if product:
                zs = 2 * Rz + 1
                good_all, total = good * max(0, zs - A.zr), (2 * R + 1) * zs
            else:
                good_all, total = good, 2 * R + 1
            return (total - good_all) * q < p * total
    else:
        profiles = _profiles(A, spec)
        if spec.family == "free-abelian":
            probes = [tuple(p) for p in profiles]
        elif spec.family == "product":
            probes = [(z, g) for z, g in profiles]
        else:
            probes = [g for _, g in profiles]
        lamps = any((g[1] if spec.family == "product" else g).mask
                    for g in probes) if spec.family != "free-abelian" else False

        def passes(R, S, Rz):
            box = Box(spec.family, R, S, Rz, spec.rank)
            size = box.size
            return all(box.outside_count(a) * q < p * size for a in probes)

    best = None
    if spec.family == "free-abelian":
        for box in _box_candidates(spec, search_limit):
            if passes(box.R, box.S, box.Rz):
                best = box
                break
    else:
        best = _search_lamplighter_boxes(spec, passes, delta, search_limit, lamps)
    if best is None:
        raise ResourceLimitError(f"no Følner box found within search limit {search_limit}")
    if cap is not None and best.size > cap:
        raise CapExceeded("Følner set", best.size, cap)
    return best


def _search_lamplighter_boxes(spec, passes, delta, limit, lamps):
    product = spec.family == "product"
    best = None

    def key(b):
        return (b.size, b.S, b.R, b.Rz)

    for S in range(limit + 1):
        floor = 1 << (2 * S + 1)
        if best is not None and floor > best.size:
            break
        for Rz in (range(limit + 1) if product else (0,)):
            if best is not None and floor * (2 * Rz + 1) > best.size:
                break
            zs = 2 * Rz + 1 if product else 1
            for R in range(limit + 1):
                size = (2 * R + 1) * floor * zs
                if best is not None and size > best.size:
                    break
                if passes(R, S, Rz if product else 0):
                    box = Box(spec.family, R, S, Rz if product else 0)
                    if best is None or key(box) < key(best):
                        best = box
                    break
                # a lit translate keeps at most 2S+1 positions, so growing R
                # past this point only raises the escaping fraction
                if lamps and (1 - delta) * (2 * R + 1) >= 2 * S + 1:
                    break
    return best


def log2_size(box: Box) -> float:
    return math.log2(box.size)
