"""Command-line driver: ``lampwalk {build,sample,tv,tau,verify,report}``.

Every run is described by a :class:`RunConfig`.  Its digest is written into
the header of every output file, and ``report`` refuses outputs whose digest
does not match the current configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import __version__
from .construction import (
    PRESETS,
    GrowthSchedule,
    LevelResourceError,
    cached_build,
    cache_key,
    enumeration_for,
    levels_from_json,
    measure_atoms,
    verify_levels,
)
from .diagnostics import (
    InsufficientSampleError,
    StructurallyInapplicableError,
    convolution_powers,
    curve_trend_violations,
    left_walk_tv_curve,
    nondegeneracy_test,
    opposite_measure,
    perturbation_experiment,
    read_csv_header,
    write_histogram_csv,
    write_tv_csv,
)
from .folner import Window
from .group import DEFAULT_CAP, GroupSpec, ResourceLimitError
from .locks import SearchHorizonError
from .sampler import dump_trajectory, sample_trajectory
from .tail import AmbiguityError, Decomposer

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_VERIFY = 4
EXIT_SAMPLES = 5
EXIT_INAPPLICABLE = 6


class ConfigError(ValueError):
    pass


class CommandError(RuntimeError):
    def __init__(self, code: int, message: str, cause: Exception | None = None):
        super().__init__(message)
        self.code = code
        self.cause = cause


@dataclass
class RunConfig:
    family: str = "lamplighter"
    rank: int = 1
    preset: str = "desk"
    schedule: dict | None = None  # inline schedule, overrides the preset
    seed: int = 0
    levels: int = 4
    regions: str = "auto"
    cap: int = DEFAULT_CAP
    lock_horizon: int = 100_000
    k_max: int = 2
    tv_n_max: int = 3
    tv_level: int = 2  # the TV curve is computed for every g in A_{tv_level}
    tv_cap: int = 10_000_000  # bound on atom products per convolution
    eps: float = 0.0
    horizon: int = 100
    samples: int = 10_000
    dump: int = 20
    m: int = 2
    min_freq: float = 0.01
    out: str = "lampwalk-out"
    jobs: int = 1

    # fields that do not influence any output
    _UNDIGESTED = ("out", "jobs")

    def __post_init__(self):
        if self.preset not in PRESETS and self.schedule is None:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.regions not in ("explicit", "auto"):
            raise ConfigError("regions must be 'explicit' or 'auto'")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for name in ("levels", "cap", "k_max", "tv_n_max", "tv_level", "horizon",
                     "samples", "jobs", "m", "lock_horizon", "tv_cap"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.k_max > self.levels or self.tv_level > self.levels:
            raise ConfigError("k_max and tv_level cannot exceed levels")
        try:
            self.group_spec()
            self.growth()
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def group_spec(self) -> GroupSpec:
        return GroupSpec(self.family, self.rank)

    def growth(self) -> GrowthSchedule:
        if self.schedule is not None:
            return GrowthSchedule.from_description(self.schedule)
        return PRESETS[self.preset]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def digest(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k not in self._UNDIGESTED}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def header(self, command: str) -> dict:
        return {"lampwalk": f"{__version__} {command}", "config-digest": self.digest(),
                "tv-convention": "l1 (maximum 2)"}

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def cache_dir(self) -> Path:
        return self.out_dir / "cache"

    def cache_path(self) -> Path:
        key = cache_key(self.group_spec(), self.growth(), self.levels, self.regions,
                        self.cap, self.lock_horizon)
        return self.cache_dir / f"levels-{key}.json"


# ---------------------------------------------------------------------------
# shared steps


def _build(cfg: RunConfig):
    spec = cfg.group_spec()
    try:
        levels, path = cached_build(cfg.cache_dir, spec, cfg.growth(), cfg.levels,
                                    regions=cfg.regions, cap=cfg.cap,
                                    lock_horizon=cfg.lock_horizon)
    except LevelResourceError as exc:
        if isinstance(exc.cause, SearchHorizonError) and not spec.icc:
            raise CommandError(EXIT_INAPPLICABLE,
                               f"no lock exists in an abelian factor group ({exc})", exc) from exc
        raise CommandError(EXIT_RESOURCE, str(exc), exc) from exc
    return levels, path


def _load(cfg: RunConfig):
    if not cfg.group_spec().icc:
        raise CommandError(EXIT_INAPPLICABLE,
                           "the factor group is abelian: the construction stops at find_lock")
    path = cfg.cache_path()
    if not path.exists():
        raise CommandError(EXIT_CONFIG, f"no cache at {path}; run 'lampwalk build' first")
    try:
        levels, spec, schedule, _ = levels_from_json(path.read_text())
    except (ValueError, KeyError) as exc:
        raise CommandError(EXIT_CONFIG, f"unusable cache {path}: {exc}", exc) from exc
    if spec != cfg.group_spec() or schedule != cfg.growth() or len(levels) != cfg.levels:
        raise CommandError(EXIT_CONFIG, f"cache {path} was built for another configuration")
    return levels


def _sample_chunk(args):
    cache_text, seed, lo, hi, horizon = args
    levels, spec, *_ = levels_from_json(cache_text)
    enum = enumeration_for(spec, levels)
    return [sample_trajectory(seed, horizon, levels, spec, enum, index=j) for j in range(lo, hi)]


def _sample(cfg: RunConfig, levels, count: int):
    spec = cfg.group_spec()
    if cfg.jobs == 1:
        enum = enumeration_for(spec, levels)
        return [sample_trajectory(cfg.seed, cfg.horizon, levels, spec, enum, index=j)
                for j in range(count)]
    text = cfg.cache_path().read_text()
    bounds = [count * w // cfg.jobs for w in range(cfg.jobs + 1)]
    tasks = [(text, cfg.seed, lo, hi, cfg.horizon) for lo, hi in zip(bounds, bounds[1:])]
    with ProcessPoolExecutor(cfg.jobs) as pool:
        chunks = list(pool.map(_sample_chunk, tasks))
    return [t for c in chunks for t in c]


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _header_text(cfg: RunConfig, command: str) -> str:
    return "".join(f"# {k}: {v}\n" for k, v in cfg.header(command).items())


# ---------------------------------------------------------------------------
# commands


def cmd_build(cfg: RunConfig) -> Path:
    _, path = _build(cfg)
    print(f"cache: {path}")
    return path


def cmd_sample(cfg: RunConfig) -> Path:
    levels = _load(cfg)
    spec = cfg.group_spec()
    trajs = _sample(cfg, levels, min(cfg.dump, cfg.samples))
    parts = [_header_text(cfg, "sample")]
    for t in trajs:
        parts.append(f"# trajectory {t.index} seed {t.seed}\n")
        parts.append(dump_trajectory(t, spec))
    path = cfg.out_dir / "trajectories.txt"
    _write(path, "".join(parts))
    print(f"trajectories: {path}")
    return path


def cmd_tv(cfg: RunConfig) -> Path:
    levels = _load(cfg)
    spec = cfg.group_spec()
    tested = levels[cfg.tv_level - 1].A
    if isinstance(tested, Window):
        raise CommandError(EXIT_RESOURCE, f"A_{cfg.tv_level} is not held explicitly")
    try:
        mu = opposite_measure(levels, cfg.k_max, spec, cfg.cap)
        powers = convolution_powers(mu, cfg.tv_n_max, spec, cfg.tv_cap, cfg.eps)
    except ResourceLimitError as exc:
        raise CommandError(EXIT_RESOURCE, str(exc), exc) from exc
    curves = [left_walk_tv_curve(g, cfg.tv_n_max, levels, cfg.k_max, spec, powers=powers)
              for g in sorted(tested, key=spec.order_key)]
    worst = [max((c[n] for c in curves), key=lambda e: e.value) for n in range(cfg.tv_n_max)]
    header = cfg.header("tv")
    header["tested"] = f"every g in A_{cfg.tv_level} ({len(curves)} elements); worst value per n"
    header["k_max"] = cfg.k_max
    header["eps"] = cfg.eps
    path = cfg.out_dir / "tv.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_tv_csv(path, worst, header)
    for e in worst:
        ok = e.value <= e.paper_bound + e.error_bound
        print(f"n={e.n} tv={e.value:.6f} error_bound={e.error_bound:.6f} "
              f"paper_bound={e.paper_bound:.6f} {'within' if ok else 'ABOVE'} bound")
    rising = sorted({n for c in curves for n in curve_trend_violations(c)})
    print("value+error non-increasing within 0.05: "
          + ("yes" if not rising else f"no (rises at n = {rising})"))
    print(f"tv curve: {path}")
    return path


def cmd_tau(cfg: RunConfig) -> Path:
    levels = _load(cfg)
    spec = cfg.group_spec()
    trajs = _sample(cfg, levels, cfg.samples)
    dec = Decomposer(levels, spec, cfg.growth(), cfg.cap)
    try:
        res = perturbation_experiment(trajs, levels, spec, cfg.horizon, cfg.m, dec)
        report = nondegeneracy_test(res.pooled, cfg.min_freq)
    except InsufficientSampleError as exc:
        raise CommandError(EXIT_SAMPLES, str(exc), exc) from exc
    except StructurallyInapplicableError as exc:
        raise CommandError(EXIT_INAPPLICABLE, str(exc), exc) from exc
    except AmbiguityError as exc:
        raise CommandError(EXIT_VERIFY, f"lock violated: {exc}", exc) from exc
    header = cfg.header("tau")
    header["anchor"] = (f"trajectory {res.anchor}: i0={res.i0} i1={res.i1} i2={res.i2} "
                        f"level={res.level}")
    header["replacement"] = f"k={res.replacement.k} y={res.replacement.y} x={spec.format(res.replacement.x)}"
    header["measure-ratio"] = str(res.constant)
    header["kept"] = res.kept
    path = cfg.out_dir / "tau.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_histogram_csv(path, res.pooled, spec, header)
    lines = [
        f"designated level: {res.level}",
        f"trajectories in S: {res.kept} of {len(trajs)}",
        f"values on S: {len(res.original.counts)}, on T(S): {len(res.perturbed.counts)}",
        f"disjoint: {res.disjoint}",
        f"nondegenerate at min_freq {cfg.min_freq}: {report.passed}",
    ]
    _write(cfg.out_dir / "tau_report.txt", _header_text(cfg, "tau") + "\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"tau histogram: {path}")
    if not (res.disjoint and report.passed):
        raise CommandError(EXIT_VERIFY, "tau values are not separated by the perturbation")
    return path


def cmd_verify(cfg: RunConfig) -> Path:
    levels = _load(cfg)
    spec = cfg.group_spec()
    checks = verify_levels(levels, spec, cfg.growth(), cfg.cap)
    lines = []
    ok = True
    for c in checks:
        ok &= c.passed
        lines.append(f"level {c.index}: folner {c.folner} ({float(c.folner_ratio):.6f} < "
                     f"{c.delta}), lock {c.lock} [{c.lock_route}], structure {c.structure}"
                     + (f" {c.notes}" if c.notes else ""))
    explicit = 0
    for lv in levels:
        if lv.F.size > cfg.cap:
            break
        explicit += 1
    if explicit:
        m = measure_atoms(levels, explicit, spec, cfg.cap)
        err = m.normalization_error()
        ok &= err <= 1e-12
        lines.append(f"measure normalization (K <= {explicit}): error {err:.3e}")
    lines.append("PASS" if ok else "FAIL")
    path = cfg.out_dir / "verify.txt"
    _write(path, _header_text(cfg, "verify") + "\n".join(lines) + "\n")
    print("\n".join(lines))
    if not ok:
        raise CommandError(EXIT_VERIFY, "verification failed")
    return path


def _svg_chart(title: str, series: dict, width: int = 480, height: int = 300) -> str:
    """A minimal line chart: ``series`` maps a label to [(x, y), ...]."""
    pts = [p for s in series.values() for p in s]
    if not pts:
        return ""
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = 0.0, max(max(p[1] for p in pts), 1e-12)
    pad = 40
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]

    def sx(x):
        return pad + (x - x0) / ((x1 - x0) or 1) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<text x="{pad}" y="20" font-size="14">{title}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="4" y="{pad}" font-size="10">{y1:.3g}</text>']
    for i, (label, s) in enumerate(series.items()):
        c = colours[i % len(colours)]
        poly = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in s)
        out.append(f'<polyline fill="none" stroke="{c}" points="{poly}"/>')
        out.append(f'<text x="{width - pad - 120}" y="{pad + 14 * i}" font-size="11" fill="{c}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _read_rows(path: Path) -> list[list[str]]:
    import csv

    with open(path) as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    return rows[1:]


def cmd_report(cfg: RunConfig, svg: bool = False) -> Path:
    parts = [_header_text(cfg, "report")]
    digest = cfg.digest()
    for name in ("verify.txt", "tv.csv", "tau.csv", "tau_report.txt"):
        p = cfg.out_dir / name
        if not p.exists():
            parts.append(f"\n[{name}] missing\n")
            continue
        found = read_csv_header(p).get("config-digest")
        if found != digest:
            raise CommandError(EXIT_CONFIG,
                               f"{p} was written under config {found}, not {digest}")
        body = "".join(line for line in p.read_text().splitlines(True) if not line.startswith("#"))
        parts.append(f"\n[{name}]\n{body}")
    path = cfg.out_dir / "report.txt"
    _write(path, "".join(parts))
    if svg:
        tv = cfg.out_dir / "tv.csv"
        if tv.exists():
            rows = _read_rows(tv)
            series = {
                "tv": [(int(r[0]), float(r[1])) for r in rows],
                "tv + error": [(int(r[0]), float(r[1]) + float(r[2])) for r in rows],
            }
            _write(cfg.out_dir / "tv.svg", _svg_chart("left walk TV", series))
        tau = cfg.out_dir / "tau.csv"
        if tau.exists():
            rows = [r for r in _read_rows(tau) if r[1] != "unresolved"]
            series = {"count": [(i, float(r[2])) for i, r in enumerate(rows)]}
            _write(cfg.out_dir / "tau.svg", _svg_chart("tau histogram (values in CSV order)", series))
    print(f"report: {path}")
    return path


# ---------------------------------------------------------------------------
# argument handling


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lampwalk", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("build", "sample", "tv", "tau", "verify", "report"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--preset", choices=sorted(PRESETS))
        s.add_argument("--family", choices=["lamplighter", "product", "free-abelian"])
        s.add_argument("--seed", type=int)
        s.add_argument("--levels", type=int)
        s.add_argument("--out")
        s.add_argument("--jobs", type=int)
        if name == "report":
            s.add_argument("--svg", action="store_true", help="also write SVG charts")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    data = asdict(base)
    for key in ("preset", "family", "seed", "levels", "out", "jobs"):
        v = getattr(args, key, None)
        if v is not None:
            data[key] = v
    return RunConfig.from_dict(data)


COMMANDS = {"build": cmd_build, "sample": cmd_sample, "tv": cmd_tv, "tau": cmd_tau,
            "verify": cmd_verify}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.command == "report":
            cmd_report(cfg, svg=args.svg)
        else:
            COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CommandError as exc:
        cause = f" ({type(exc.cause).__name__})" if exc.cause else ""
        print(f"error{cause}: {exc}", file=sys.stderr)
        return exc.code
    except ResourceLimitError as exc:
        print(f"resource limit ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
