"""Acceptance suite.  Each test records one PASS/FAIL line, printed in the
terminal summary under "acceptance criteria"."""

import json
import time

import numpy as np
import pytest
from scipy.stats import chi2

from lampwalk.cli import EXIT_INAPPLICABLE, EXIT_OK, RunConfig, main
from lampwalk.construction import DESK, LevelResourceError, build_levels
from lampwalk.diagnostics import (
    convolution_powers,
    curve_trend_violations,
    left_walk_tv_curve,
    nondegeneracy_test,
    opposite_measure,
    perturbation_experiment,
)
from lampwalk.group import IDENTITY, LAMPLIGHTER, GroupElement, GroupSpec, inv, mul
from lampwalk.locks import SearchHorizonError
from lampwalk.sampler import (
    k_cdf,
    k_pmf,
    k_survival,
    sample_k,
    sample_trajectory,
    stream,
)
from lampwalk.tail import AmbiguityError, Decomposer, tau

G = LAMPLIGHTER
Z = GroupSpec("free-abelian", 1)
HORIZON = 100
SAMPLES = 10_000


# -- shared runs -------------------------------------------------------------


def _pipeline(root, jobs):
    """Fresh build, verify, tv, tau and sample under the default config."""
    cfg = RunConfig(out=str(root / "out"), jobs=jobs)
    path = root / "config.json"
    path.write_text(cfg.to_json())
    codes, times = {}, {}
    for command in ("build", "verify", "tv", "tau", "sample"):
        start = time.perf_counter()
        codes[command] = main([command, "--config", str(path)])
        times[command] = time.perf_counter() - start
    return cfg, codes, times


@pytest.fixture(scope="module")
def pipelines(tmp_path_factory):
    first = _pipeline(tmp_path_factory.mktemp("run-a"), jobs=1)
    second = _pipeline(tmp_path_factory.mktemp("run-b"), jobs=2)
    return first, second


@pytest.fixture(scope="module")
def samples(desk):
    levels, _ = desk
    return [sample_trajectory(0, HORIZON, levels, G, index=j) for j in range(SAMPLES)]


@pytest.fixture(scope="module")
def decomposer(desk):
    return Decomposer(desk[0], G, DESK)


# -- 1. group algebra --------------------------------------------------------


@pytest.mark.criterion(1)
def test_group_algebra(criterion):
    rng = np.random.default_rng(1)

    def element():
        lamps = np.nonzero(rng.random(21) < 0.3)[0] - 10
        return GroupElement(int(rng.integers(-10, 11)), lamps.tolist())

    triples = [(element(), element(), element()) for _ in range(10_000)]
    start = time.perf_counter()
    failures = 0
    for a, b, c in triples:
        failures += mul(mul(a, b), c) != mul(a, mul(b, c))
        failures += mul(a, IDENTITY) != a or mul(IDENTITY, a) != a
        failures += mul(a, inv(a)) != IDENTITY or mul(inv(a), a) != IDENTITY
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 1.0
    criterion.record(ok, f"{failures} failures on 10^4 triples in {elapsed:.2f} s (< 1 s)")
    assert ok


# -- 2. sampler fidelity -----------------------------------------------------


@pytest.mark.criterion(2)
def test_sampler_fidelity(criterion):
    n = 10**6
    start = time.perf_counter()
    rng = stream(2)
    # same draw order and colour rule as a trajectory
    ks = np.minimum(np.array(sample_k(rng, n), dtype=object), 21).astype(np.int64)
    u = rng.random(n)
    observed = np.bincount(ks, minlength=22)[1:]
    expected = np.array([k_pmf(k) for k in range(1, 21)] + [k_survival(20)]) * n
    stat = float(((observed - expected) ** 2 / expected).sum())
    p_value = float(chi2.sf(stat, df=len(expected) - 1))
    worst = 0.0
    for k in range(1, 11):
        sel = ks == k
        p = 2.0 ** -k
        se = np.sqrt(p * (1 - p) / sel.sum())
        worst = max(worst, abs(np.mean(u[sel] < p) - p) / se)
    elapsed = time.perf_counter() - start
    ok = p_value >= 1e-3 and worst <= 4 and elapsed < 30
    criterion.record(ok, f"chi2 p = {p_value:.3g} (>= 1e-3), red fraction worst {worst:.2f} SE "
                         f"(<= 4), {elapsed:.1f} s (< 30 s)")
    assert ok


# -- 3. record oracle --------------------------------------------------------


@pytest.mark.criterion(3)
def test_record_oracle(criterion):
    start = time.perf_counter()
    trials = 10_000
    worst = 0.0
    for n in (10, 100, 1000):
        hits = sum(max(sample_k(stream(3 + n, j), n)) <= n for j in range(trials))
        exact = k_cdf(n) ** n
        se = np.sqrt(exact * (1 - exact) / trials)
        worst = max(worst, abs(hits / trials - exact) / se)
    elapsed = time.perf_counter() - start
    ok = worst <= 4 and elapsed < 60
    criterion.record(ok, f"worst deviation {worst:.2f} SE over n in {{10, 100, 1000}} (<= 4), "
                         f"{elapsed:.1f} s (< 60 s)")
    assert ok


# -- 4. construction integrity -----------------------------------------------


@pytest.mark.criterion(4)
def test_construction_integrity(criterion, pipelines, tmp_path):
    (cfg, codes, times), _ = pipelines
    report = (cfg.out_dir / "verify.txt").read_text()
    verified = codes["build"] == EXIT_OK and codes["verify"] == EXIT_OK
    verified &= report.rstrip().endswith("PASS") and "error 0.000e+00" in report
    exhaustive = report.count("[exhaustive]")
    # negative control: the first lock search in Z already has |A| >= 2
    try:
        build_levels(Z, DESK, 2, lock_horizon=2000)
        control = False
    except LevelResourceError as exc:
        control = isinstance(exc.cause, SearchHorizonError)
    ab = RunConfig(family="free-abelian", levels=2, k_max=1, tv_level=1, lock_horizon=2000,
                   out=str(tmp_path))
    path = tmp_path / "abelian.json"
    path.write_text(ab.to_json())
    control &= main(["build", "--config", str(path)]) == EXIT_INAPPLICABLE
    elapsed = times["build"] + times["verify"]
    ok = verified and exhaustive >= 2 and control and elapsed < 600
    criterion.record(ok, f"verify {'passes' if verified else 'fails'} ({exhaustive} exhaustive "
                         f"lock checks), abelian control {'fires' if control else 'silent'}, "
                         f"{elapsed:.0f} s (< 600 s)")
    assert ok


# -- 5. Liouville direction --------------------------------------------------


@pytest.mark.criterion(5)
def test_liouville_direction(criterion, desk):
    levels, _ = desk
    cfg = RunConfig()
    mu = opposite_measure(levels, cfg.k_max, G)
    powers = convolution_powers(mu, cfg.tv_n_max, G, cfg.tv_cap)
    tested = sorted(levels[cfg.tv_level - 1].A, key=G.order_key)
    curves = [left_walk_tv_curve(g, cfg.tv_n_max, levels, cfg.k_max, G, powers=powers)
              for g in tested]
    above = [(e.g, e.n) for c in curves for e in c if e.value > e.paper_bound + e.error_bound]
    rising = sorted({n for c in curves for n in curve_trend_violations(c)})
    ok = len(powers) >= 3 and not above and not rising
    criterion.record(ok, f"n <= {len(powers)}, {len(tested)} elements of A_{cfg.tv_level}: "
                         f"{len(above)} bound violations; value+error rises by more than "
                         f"0.05 at n = {rising}")
    assert not above
    assert not rising, "value + error_bound is not non-increasing within 0.05"


# -- 6. non-triviality direction ---------------------------------------------


@pytest.mark.criterion(6)
def test_nontriviality_direction(criterion, desk, samples, decomposer):
    levels, _ = desk
    res = perturbation_experiment(samples, levels, G, HORIZON, 2, decomposer)
    report = nondegeneracy_test(res.pooled, 0.01)
    different = G.phi(res.replacement.x) != G.phi(samples[res.anchor].steps[0].x)
    ok = (len(samples) >= 10**4 and res.kept > 0 and different and res.disjoint
          and report.passed)
    freqs = ", ".join(f"{f:.3f}" for _, f in report.top2)
    criterion.record(ok, f"{res.kept} of {len(samples)} in S at level {res.level}, "
                         f"disjoint {res.disjoint}, top frequencies {freqs} (>= 0.01)")
    assert ok


# -- 7. tau structural suite -------------------------------------------------


@pytest.mark.criterion(7)
def test_tau_structure(criterion, samples, decomposer):
    feasible = set(decomposer.feasible_levels)
    unique = monotone = compared = ambiguous = 0
    checked = agreed = 0
    for t in samples:
        try:
            full = tau(t, HORIZON, G, decomposer)
            half = tau(t, HORIZON // 2, G)
        except AmbiguityError:
            ambiguous += 1
            continue
        unique += all(n == e.level for n, e in full.entries.items())
        if full.i0 is not None and half.i0 == full.i0:
            compared += 1
            monotone += half.issubset(full)
        for n, e in full.entries.items():
            if n in feasible and e.value is not None:
                checked += 1
                agreed += e.brute == "agree"
    ok = (unique == len(samples) and monotone == compared and agreed == checked
          and checked > 0 and ambiguous == 0)
    criterion.record(ok, f"uniqueness {unique}/{len(samples)}, monotonicity {monotone}/{compared}, "
                         f"brute force agrees {agreed}/{checked} at levels {sorted(feasible)}, "
                         f"{ambiguous} ambiguity errors")
    assert ok


# -- 8. determinism ----------------------------------------------------------


@pytest.mark.criterion(8)
def test_determinism(criterion, pipelines):
    (a, codes_a, _), (b, codes_b, _) = pipelines
    names = ["tv.csv", "tau.csv", "trajectories.txt", "verify.txt"]
    same = a.cache_path().read_bytes() == b.cache_path().read_bytes()
    same &= all((a.out_dir / n).read_bytes() == (b.out_dir / n).read_bytes() for n in names)
    clean = all(c == EXIT_OK for c in [*codes_a.values(), *codes_b.values()])
    ok = same and clean
    criterion.record(ok, f"cache and {len(names)} outputs byte-identical: {same} "
                         f"(jobs 1 vs 2), exit codes {json.dumps(codes_a)}")
    assert ok
