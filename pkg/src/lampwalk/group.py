"""Exact arithmetic for the built-in group families.

Three families are supported:

* ``lamplighter``  -- Z/2 wr Z, elements ``GroupElement(shift, lamps)``.
* ``product``      -- Z x (Z/2 wr Z), elements ``(z, GroupElement)``; the
  factor map projects onto the lamplighter coordinate.
* ``free-abelian`` -- Z^d, elements are integer tuples; used as the control
  family in which locks cannot exist.

Finite subsets are plain ``frozenset`` objects.  Every set-algebra routine
takes a cardinality cap and raises :class:`CapExceeded` instead of hanging.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from operator import itemgetter
from typing import Any, Hashable, Iterable, Sequence

DEFAULT_CAP = 10**6


class ResourceLimitError(RuntimeError):
    """A computation would exceed a configured resource bound."""


class CapExceeded(ResourceLimitError):
    def __init__(self, what: str, reached: int, cap: int):
        super().__init__(f"{what}: cardinality reached {reached} > cap {cap}")
        self.what = what
        self.reached = reached
        self.cap = cap


class GroupElement(tuple):
    """Lamplighter element: lamplighter position plus the set of lit lamps.

    Stored as the tuple ``(shift, lo, mask)``: lamps form a bit mask anchored
    at the lowest lit position, so translating a configuration is O(1) and
    products are a few integer ops.  Equality and hashing are the tuple's.
    """

    __slots__ = ()

    def __new__(cls, shift: int, lamps: Iterable[int] = ()):
        lamps = set(lamps)
        lo = min(lamps) if lamps else 0
        mask = 0
        for p in lamps:
            mask |= 1 << (p - lo)
        return _new(cls, (int(shift), lo, mask))

    @classmethod
    def _raw(cls, shift: int, lo: int, mask: int) -> GroupElement:
        return _norm(shift, lo, mask)

    def __reduce__(self):
        # the mask pickles as one integer; a lamp list would be O(lamps)
        return _norm, tuple(self)

    shift = property(itemgetter(0))
    lo = property(itemgetter(1))
    mask = property(itemgetter(2))

    @property
    def lamps(self) -> frozenset:
        out = []
        _, p, m = self
        while m:
            if m & 1:
                out.append(p)
            m >>= 1
            p += 1
        return frozenset(out)

    @property
    def hi(self) -> int:
        """Highest lit position (``lo - 1`` when no lamp is lit)."""
        return self[1] + self[2].bit_length() - 1

    def __mul__(self, other: GroupElement) -> GroupElement:
        return mul(self, other)

    def __invert__(self) -> GroupElement:
        return inv(self)

    def key(self) -> tuple:
        return (self[0], tuple(sorted(self.lamps)))

    def __lt__(self, other: GroupElement) -> bool:
        return self.key() < other.key()

    def __le__(self, other: GroupElement) -> bool:
        return self.key() <= other.key()

    def __gt__(self, other: GroupElement) -> bool:
        return self.key() > other.key()

    def __ge__(self, other: GroupElement) -> bool:
        return self.key() >= other.key()

    def __repr__(self) -> str:
        return format_element(self)


_new = tuple.__new__


def _norm(shift: int, lo: int, mask: int) -> GroupElement:
    if mask:
        if not mask & 1:
            tz = (mask & -mask).bit_length() - 1
            mask >>= tz
            lo += tz
    else:
        lo = 0
    return _new(GroupElement, (shift, lo, mask))


IDENTITY = GroupElement(0)
SHIFT = GroupElement(1)
LAMP = GroupElement(0, {0})


def mul(a: GroupElement, b: GroupElement) -> GroupElement:
    sa, la, ma = a
    sb, lb, mb = b
    if not mb:
        return _new(GroupElement, (sa + sb, la, ma))
    lb += sa
    if not ma:
        return _new(GroupElement, (sa + sb, lb, mb))
    if la < lb:
        return _new(GroupElement, (sa + sb, la, ma ^ (mb << (lb - la))))
    if la > lb:
        return _new(GroupElement, (sa + sb, lb, (ma << (la - lb)) ^ mb))
    return _norm(sa + sb, la, ma ^ mb)


def inv(a: GroupElement) -> GroupElement:
    s, lo, m = a
    return _new(GroupElement, (-s, lo - s if m else 0, m))


def format_element(a: GroupElement) -> str:
    return f"({a.shift}, [{', '.join(str(p) for p in sorted(a.lamps))}])"


# ---------------------------------------------------------------------------
# Group families


FAMILIES = ("lamplighter", "product", "free-abelian")


@dataclass(frozen=True)
class GroupSpec:
    """A built-in group family, its generating set and its factor map.

    ``generators=None`` selects the standard generators of the family.
    The factor map is the identity for ``lamplighter`` and ``free-abelian``
    and the projection onto the second coordinate for ``product``.
    """

    family: str = "lamplighter"
    rank: int = 1
    modulus: int = 2
    generators: tuple | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown group family {self.family!r}")
        if self.modulus != 2:
            raise ValueError("only lamp modulus 2 is implemented")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.family != "free-abelian" and self.rank != 1:
            raise ValueError("lamplighter families have base rank 1")
        if self.generators is None:
            object.__setattr__(self, "generators", self.default_generators())
        else:
            object.__setattr__(self, "generators", tuple(self.generators))

    # -- structure ----------------------------------------------------------

    def default_generators(self) -> tuple:
        if self.family == "lamplighter":
            return (SHIFT, LAMP)
        if self.family == "product":
            return ((1, IDENTITY), (0, SHIFT), (0, LAMP))
        return tuple(
            tuple(1 if j == i else 0 for j in range(self.rank)) for i in range(self.rank)
        )

    @property
    def identity(self) -> Hashable:
        if self.family == "lamplighter":
            return IDENTITY
        if self.family == "product":
            return (0, IDENTITY)
        return (0,) * self.rank

    @property
    def factor_spec(self) -> GroupSpec:
        """The group receiving the factor map."""
        if self.family == "product":
            return GroupSpec("lamplighter")
        return self

    @property
    def icc(self) -> bool:
        return self.factor_spec.family == "lamplighter"

    @property
    def mul_fn(self):
        """The bare product function, for hot loops."""
        if self.family == "lamplighter":
            return mul
        return self.mul

    def mul(self, a, b):
        if self.family == "lamplighter":
            return mul(a, b)
        if self.family == "product":
            return (a[0] + b[0], mul(a[1], b[1]))
        return tuple(x + y for x, y in zip(a, b))

    def inv(self, a):
        if self.family == "lamplighter":
            return inv(a)
        if self.family == "product":
            return (-a[0], inv(a[1]))
        return tuple(-x for x in a)

    def phi(self, a):
        if self.family == "product":
            return a[1]
        return a

    def order_key(self, a) -> tuple:
        if self.family == "lamplighter":
            return a.key()
        if self.family == "product":
            return (a[0],) + a[1].key()
        return tuple(a)

    def product(self, elements: Iterable):
        out = self.identity
        for x in elements:
            out = self.mul(out, x)
        return out

    # -- serialization -------------------------------------------------------

    def to_json(self, a) -> Any:
        if self.family == "lamplighter":
            return [a.shift, sorted(a.lamps)]
        if self.family == "product":
            return [a[0], [a[1].shift, sorted(a[1].lamps)]]
        return list(a)

    def from_json(self, data) -> Any:
        if self.family == "lamplighter":
            return GroupElement(int(data[0]), frozenset(int(p) for p in data[1]))
        if self.family == "product":
            return (int(data[0]), GroupSpec("lamplighter").from_json(data[1]))
        return tuple(int(x) for x in data)

    def format(self, a) -> str:
        if self.family == "lamplighter":
            return format_element(a)
        if self.family == "product":
            return f"({a[0]}, {format_element(a[1])})"
        return str(tuple(a))

    def describe(self) -> dict:
        return {
            "family": self.family,
            "rank": self.rank,
            "modulus": self.modulus,
            "generators": [self.to_json(g) for g in self.generators],
        }

    @classmethod
    def from_description(cls, data: dict) -> GroupSpec:
        base = cls(data.get("family", "lamplighter"), int(data.get("rank", 1)),
                   int(data.get("modulus", 2)))
        gens = data.get("generators")
        if gens is None:
            return base
        return cls(base.family, base.rank, base.modulus,
                   tuple(base.from_json(g) for g in gens))

    def digest(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


LAMPLIGHTER = GroupSpec("lamplighter")


def phi(a, spec: GroupSpec = LAMPLIGHTER):
    return spec.phi(a)


# ---------------------------------------------------------------------------
# Enumeration


def enumerate_elements(spec: GroupSpec, n: int) -> list:
    """First ``n`` elements in breadth-first word-length order.

    Within a sphere elements are sorted by ``spec.order_key``; the result is
    therefore prefix-stable in ``n``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    steps = list(spec.generators) + [spec.inv(g) for g in spec.generators]
    out = [spec.identity]
    seen = {spec.identity}
    sphere = [spec.identity]
    while len(out) < n:
        nxt = set()
        for x in sphere:
            for s in steps:
                y = spec.mul(x, s)
                if y not in seen:
                    nxt.add(y)
        if not nxt:
            break  # finite group exhausted
        sphere = sorted(nxt, key=spec.order_key)
        seen.update(sphere)
        out.extend(sphere)
    return out[:n]


def word_ball(spec: GroupSpec, radius: int) -> frozenset:
    steps = list(spec.generators) + [spec.inv(g) for g in spec.generators]
    ball = {spec.identity}
    sphere = {spec.identity}
    for _ in range(radius):
        sphere = {spec.mul(x, s) for x in sphere for s in steps} - ball
        ball |= sphere
    return frozenset(ball)


# ---------------------------------------------------------------------------
# Finite-set algebra


def set_mul(A: Iterable, B: Iterable, spec: GroupSpec = LAMPLIGHTER,
            cap: int = DEFAULT_CAP) -> frozenset:
    B = list(B)
    out = set()
    m = spec.mul_fn
    for a in A:
        out.update([m(a, b) for b in B])
        if len(out) > cap:
            raise CapExceeded("set product", len(out), cap)
    return frozenset(out)


def set_inv(A: Iterable, spec: GroupSpec = LAMPLIGHTER) -> frozenset:
    return frozenset(spec.inv(a) for a in A)


def set_pow(A: Iterable, k: int, spec: GroupSpec = LAMPLIGHTER,
            cap: int = DEFAULT_CAP) -> frozenset:
    """k-fold product set ``A^k`` (``A^1 = A``)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    A = frozenset(A)
    if len(A) > cap:
        raise CapExceeded("set power", len(A), cap)
    out = A
    for _ in range(k - 1):
        nxt = set_mul(out, A, spec, cap)
        if nxt == out:
            break  # stabilized, e.g. a finite subgroup
        out = nxt
    return out


def sorted_elements(A: Iterable, spec: GroupSpec = LAMPLIGHTER) -> list:
    return sorted(A, key=spec.order_key)


def encode_set(A: Iterable, spec: GroupSpec = LAMPLIGHTER) -> list:
    return [spec.to_json(a) for a in sorted_elements(A, spec)]


def decode_set(data: Sequence, spec: GroupSpec = LAMPLIGHTER) -> frozenset:
    return frozenset(spec.from_json(x) for x in data)
