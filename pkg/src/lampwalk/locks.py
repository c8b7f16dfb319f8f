"""Locks: elements b for which (a1, a2) -> a1 b a2 is injective on A x A
and A b A misses A.

Two independent routes are provided.  :func:`verify_lock` is the exhaustive
O(|A|^2) check.  :func:`find_lock` scans candidates with the equivalent
conjugation test

    b is an A-lock  <=>  b A ∩ A^-1 A = ∅  and  b^-1 (A^-1 A \\ {e}) b ∩ A A^-1 = ∅,

which needs the two difference sets once and then O(|A| + |A^-1 A|) work per
candidate.  For sets only known through a bounding :class:`Window`,
:func:`window_lock` builds a lock from inequalities on the window and
:func:`verify_window_lock` re-checks those inequalities.
"""

from __future__ import annotations

from typing import NamedTuple

from .folner import Window
from .group import (
    DEFAULT_CAP,
    GroupElement,
    GroupSpec,
    ResourceLimitError,
    enumerate_elements,
    set_inv,
    set_mul,
)


class SearchHorizonError(ResourceLimitError):
    def __init__(self, horizon: int, size: int):
        super().__init__(f"no lock among the first {horizon} enumerated elements (|A| = {size})")
        self.horizon = horizon
        self.size = size


class LockReport(NamedTuple):
    passed: bool
    witness: tuple | None


def verify_lock(b, A, spec: GroupSpec) -> LockReport:
    """Exhaustive check; ``spec`` is the group that ``b`` and ``A`` live in."""
    A = frozenset(A)
    seen = {}
    for a1 in A:
        left = spec.mul(a1, b)
        for a2 in A:
            g = spec.mul(left, a2)
            if g in A:
                return LockReport(False, ("meets A", g, (a1, a2)))
            prev = seen.setdefault(g, (a1, a2))
            if prev != (a1, a2):
                return LockReport(False, ("collision", g, prev, (a1, a2)))
    return LockReport(True, None)


def _is_lock_fast(b, A, U, Un, V, spec: GroupSpec) -> bool:
    m = spec.mul_fn
    for a in A:
        if m(b, a) in U:
            return False
    bi = spec.inv(b)
    for u in Un:
        if m(m(bi, u), b) in V:
            return False
    return True


def find_lock(A, spec: GroupSpec, horizon: int = 100_000,
              cap: int = DEFAULT_CAP) -> object:
    """First non-identity element in enumeration order that is an ``A``-lock.

    ``spec`` is the group containing ``A`` (the factor group, when locks are
    sought for a factor map).  Raises :class:`SearchHorizonError` when none of
    the first ``horizon`` elements qualifies.
    """
    A = frozenset(A)
    Ai = set_inv(A, spec)
    U = set_mul(Ai, A, spec, cap)
    V = U if Ai == A else set_mul(A, Ai, spec, cap)
    Un = U - {spec.identity}
    for b in enumerate_elements(spec, horizon):
        if b == spec.identity:
            continue
        if _is_lock_fast(b, A, U, Un, V, spec):
            return b
    raise SearchHorizonError(horizon, len(A))


# ---------------------------------------------------------------------------
# Window certificates (lamplighter)


def _lock_conditions(b: GroupElement, w: Window):
    R = w.radius
    U = w.inverse() * w
    V = w * w.inverse()
    s = b.shift
    yield "A b A misses A", abs(s) > 3 * R
    if U.has_lamps and V.has_lamps:
        # u with no shift: b^-1 u b = (0, L_u - s)
        yield "shiftless conjugates leave A A^-1", U.hi - s < V.lo or U.lo - s > V.hi
    if b.mask != 1:
        yield "single lamp", False
        return
    x = b.lo
    # u with shift: the lamp x of b survives in b^-1 u b at x - s
    outside_u = not U.has_lamps or x > U.hi + U.radius or x < U.lo - U.radius
    yield "lamp of b clear of A^-1 A", outside_u
    yield "surviving lamp leaves A A^-1", not V.has_lamps or x - s < V.lo or x - s > V.hi


def verify_window_lock(b: GroupElement, w: Window) -> LockReport:
    """Sufficient condition for ``b`` to be a lock for every subset of ``w``."""
    for name, ok in _lock_conditions(b, w):
        if not ok:
            return LockReport(False, ("certificate", name))
    return LockReport(True, None)


def window_lock(w: Window) -> GroupElement:
    """A single-lamp element certified by :func:`verify_window_lock`."""
    U = w.inverse() * w
    V = w * w.inverse()
    x = (U.hi + U.radius + 1) if U.has_lamps else 0
    s = 3 * w.radius + 1
    if U.has_lamps and V.has_lamps:
        s = max(s, U.hi - V.lo + 1)
    if V.has_lamps:
        s = max(s, x - V.lo + 1)
    b = GroupElement(s, {x})
    assert verify_window_lock(b, w).passed
    return b
