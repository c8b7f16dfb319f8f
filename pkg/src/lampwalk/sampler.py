"""The coupled step process (K, Y, X) and prefix products of its walks.

``P(K = k) = k^(-5/4) / c`` with ``c = zeta(5/4)``; given ``K = k`` the colour
is red with probability ``2^-k``; a red step is the k-th enumerated element
and a blue step is uniform on ``b_k F_k^-1``.

Random streams are numpy ``Philox`` generators (a counter-based bit
generator, identical output on every platform) keyed by
``SeedSequence([master_seed, trajectory_index])``.
"""

from __future__ import annotations

import decimal
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

EXPONENT = 1.25
RED, BLUE = "red", "blue"

# Cumulative-sum table for inverse-CDF sampling; larger k use the
# Euler-Maclaurin tail, whose truncation error is below 1e-13 relative there.
_TABLE_SIZE = 1 << 16
_EM_FROM = 64


def _em_tail(k: float, s: float = EXPONENT) -> float:
    """sum_{j > k} j^-s by Euler-Maclaurin (integral minus boundary corrections)."""
    return (k ** (1 - s) / (s - 1) - 0.5 * k ** -s + s * k ** (-s - 1) / 12
            - s * (s + 1) * (s + 2) * k ** (-s - 3) / 720)


@lru_cache(maxsize=None)
def normalizer() -> float:
    """``c = sum_k k^(-5/4)``: exact partial sum plus Euler-Maclaurin tail."""
    n = 10_000
    head = math.fsum(k ** -EXPONENT for k in range(1, n + 1))
    return head + _em_tail(n)


@lru_cache(maxsize=None)
def _head_sums() -> np.ndarray:
    """``H[k] = sum_{j <= k} j^-s`` for ``k < _TABLE_SIZE``."""
    k = np.arange(1, _TABLE_SIZE, dtype=np.float64)
    return np.concatenate(([0.0], np.cumsum(k ** -EXPONENT)))


def _tail_mass(k: int) -> float:
    """Unnormalized ``sum_{j > k} j^-s``."""
    if k < _EM_FROM:
        return normalizer() - math.fsum(j ** -EXPONENT for j in range(1, k + 1))
    return _em_tail(float(k))


def k_pmf(k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return k ** -EXPONENT / normalizer()


def k_survival(k: int) -> float:
    """``P(K > k)``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return 1.0
    return _tail_mass(k) / normalizer()


def k_cdf(k: int) -> float:
    return 1.0 - k_survival(k)


def red_probability(k: int) -> float:
    return 2.0 ** -k


# ---------------------------------------------------------------------------
# sampling


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Independent, reproducible stream for trajectory ``index``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


@lru_cache(maxsize=None)
def _tail_table() -> np.ndarray:
    c = normalizer()
    head = _head_sums()
    tail = c - head
    k = np.arange(_TABLE_SIZE, dtype=np.float64)
    big = k >= _EM_FROM
    tail[big] = _em_tail(k[big])
    return tail  # tail[k] = sum_{j > k} j^-s, decreasing


def _invert_tail(target: np.ndarray) -> np.ndarray:
    """Smallest k with ``_em_tail(k) <= target`` beyond the table.

    Moderate targets use a vectorized bisection in float64; past 2^53
    neighbouring k are no longer distinguished, far below the resolution of a
    double-precision uniform.  Tiny targets invert the leading term exactly."""
    target = np.asarray(target, dtype=np.float64)
    out = np.empty(target.shape, dtype=object)
    # beyond ~2^240 the leading term 4 k^(-1/4) is exact to 1e-60 relative
    huge = target < 2.0 ** -58
    if huge.any():
        out[huge] = [_invert_leading(t) for t in target[huge]]
    if not huge.all():
        out[~huge] = _bisect_tail(target[~huge])
    return out


def _invert_leading(target: float) -> int:
    """Smallest k with ``4 k^(-1/4) <= target``."""
    t = decimal.Decimal(target)
    with decimal.localcontext() as ctx:
        ctx.prec = 60
        return int(((4 / t) ** 4).to_integral_value(decimal.ROUND_CEILING))


def _bisect_tail(target: np.ndarray) -> np.ndarray:
    lo = np.full(target.shape, float(_TABLE_SIZE - 1))  # tail(lo) > target
    hi = np.maximum(lo + 1, np.floor((4.0 / target) ** 4) + 2)
    while True:
        high = _em_tail(hi) > target
        if not high.any():
            break
        hi[high] *= 2
    while True:
        mid = np.floor((lo + hi) / 2)
        open_ = (hi - lo > 1) & (mid > lo) & (mid < hi)
        if not open_.any():
            break
        below = _em_tail(mid) <= target
        hi = np.where(open_ & below, mid, hi)
        lo = np.where(open_ & ~below, mid, lo)
    return hi


def k_from_uniform(v: np.ndarray) -> list[int]:
    """Inverse CDF applied to survival levels ``v`` in (0, 1]: K = min{k : P(K > k) <= v}."""
    c = normalizer()
    target = np.asarray(v, dtype=np.float64) * c
    tail = _tail_table()
    # tail is decreasing; count entries strictly above target
    idx = np.maximum(np.searchsorted(-tail, -target, side="left"), 1)
    out = idx.astype(object)
    far = np.nonzero(idx >= _TABLE_SIZE)[0]
    if far.size:
        out[far] = [int(x) for x in _invert_tail(target[far])]
    return [int(x) for x in out]


def _survival_levels(rng: np.random.Generator, n: int) -> np.ndarray:
    # 1 - U with U in [0, 1) lies in (0, 1]
    return 1.0 - rng.random(n)


def sample_k(rng: np.random.Generator, size: int | None = None):
    ks = k_from_uniform(_survival_levels(rng, 1 if size is None else size))
    return ks[0] if size is None else ks


def sample_y(rng: np.random.Generator, k: int, size: int | None = None):
    u = rng.random(1 if size is None else size)
    colours = [RED if x < 2.0 ** -k else BLUE for x in u]
    return colours[0] if size is None else colours


# ---------------------------------------------------------------------------
# trajectories


class UnresolvedStepError(LookupError):
    def __init__(self, index: int):
        super().__init__(f"step {index} is unresolved (its level is not built)")
        self.index = index


@dataclass(frozen=True)
class Step:
    k: int
    y: str
    x: object | None  # None when the level k is not built and the step is blue

    @property
    def resolved(self) -> bool:
        return self.x is not None


@dataclass(frozen=True)
class Trajectory:
    steps: tuple
    seed: int = 0
    index: int = 0

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def ks(self) -> list[int]:
        return [s.k for s in self.steps]

    @property
    def ys(self) -> list[str]:
        return [s.y for s in self.steps]

    def first_unresolved(self, n: int | None = None) -> int | None:
        for i, s in enumerate(self.steps[:n], start=1):
            if not s.resolved:
                return i
        return None

    def replace_first(self, step: Step) -> Trajectory:
        return Trajectory((step,) + tuple(self.steps[1:]), self.seed, self.index)


def resolve_step(k: int, y: str, rng, levels: Sequence, spec, enum: Sequence) -> Step:
    """Draw X given (K, Y) = (k, y) from the construction data."""
    if y == RED:
        if k <= len(enum):
            return Step(k, y, enum[k - 1])
        return Step(k, y, None)
    if k <= len(levels):
        lv = levels[k - 1]
        f = lv.F.sample(rng)
        return Step(k, y, spec.mul(lv.b, spec.inv(f)))
    return Step(k, y, None)


def sample_step(rng, levels: Sequence, spec, enum: Sequence) -> Step:
    k = sample_k(rng)
    y = sample_y(rng, k)
    return resolve_step(k, y, rng, levels, spec, enum)


def sample_trajectory(rng_or_seed, n: int, levels: Sequence, spec,
                      enum: Sequence | None = None, index: int = 0) -> Trajectory:
    """``n`` i.i.d. steps.  Pass a master seed (int) to derive the stream from
    ``(seed, index)``, or a ready generator."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(rng_or_seed, (int, np.integer)):
        seed = int(rng_or_seed)
        rng = stream(seed, index)
    else:
        seed, rng = -1, rng_or_seed
    if enum is None:
        from .construction import enumeration_for

        enum = enumeration_for(spec, levels)
    # stream layout: n survival levels, n colour uniforms, then blue X draws
    ks = sample_k(rng, n)
    u = rng.random(n)
    steps = tuple(resolve_step(k, RED if v < 2.0 ** -k else BLUE, rng, levels, spec, enum)
                  for k, v in zip(ks, u))
    return Trajectory(steps, seed, index)


def right_products(t: Trajectory, spec, n: int | None = None) -> list:
    out = []
    z = spec.identity
    for i, s in enumerate(t.steps[:n], start=1):
        if s.x is None:
            raise UnresolvedStepError(i)
        z = spec.mul(z, s.x)
        out.append(z)
    return out


def left_products(t: Trajectory, spec, n: int | None = None) -> list:
    out = []
    z = spec.identity
    for i, s in enumerate(t.steps[:n], start=1):
        if s.x is None:
            raise UnresolvedStepError(i)
        z = spec.mul(s.x, z)
        out.append(z)
    return out


# ---------------------------------------------------------------------------
# dump format: "i, k, y, (shift, [lamps])|unresolved"


def dump_trajectory(t: Trajectory, spec) -> str:
    lines = []
    for i, s in enumerate(t.steps, start=1):
        x = "unresolved" if s.x is None else spec.format(s.x)
        lines.append(f"{i}, {s.k}, {s.y}, {x}")
    return "\n".join(lines) + "\n"


def parse_trajectory(text: str, spec, seed: int = 0, index: int = 0) -> Trajectory:
    import ast

    steps = []
    for line in text.strip().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        i, k, y, rest = (p.strip() for p in line.split(",", 3))
        if rest == "unresolved":
            x = None
        else:
            x = spec.from_json(_literal_to_json(ast.literal_eval(rest), spec))
        steps.append(Step(int(k), y, x))
    return Trajectory(tuple(steps), seed, index)


def _literal_to_json(value, spec):
    if spec.family == "product":
        return [value[0], list(value[1])]
    return list(value)
