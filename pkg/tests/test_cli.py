import json
import shutil
import xml.etree.ElementTree as ET

import pytest

from lampwalk.cli import (
    EXIT_CONFIG,
    EXIT_INAPPLICABLE,
    EXIT_OK,
    EXIT_SAMPLES,
    ConfigError,
    RunConfig,
    _parser,
    _sample,
    config_from_args,
    main,
)
from lampwalk.diagnostics import read_csv_header


@pytest.fixture
def run(tmp_path, desk):
    """Write a config under tmp_path with the session desk cache already in place."""

    def make(**overrides):
        data = {"out": str(tmp_path / "out"), **overrides}
        cfg = RunConfig.from_dict(data)
        target = cfg.cache_path()
        if cfg.family == "lamplighter" and cfg.preset == "desk" and cfg.levels == 4:
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(desk[1], target)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(data))
        return cfg, str(path)

    return make


# -- configuration -----------------------------------------------------------


def test_default_config_is_valid_and_roundtrips():
    cfg = RunConfig()
    assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg


@pytest.mark.parametrize("bad", [
    {"preset": "huge"},
    {"regions": "sometimes"},
    {"seed": -1},
    {"seed": 2**64},
    {"levels": 0},
    {"k_max": 5, "levels": 4},
    {"family": "heisenberg"},
    {"unknown_key": 1},
    {"schedule": {"name": "x", "delta": [0, 0]}},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_config_errors_exit_with_code_two(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"levels": 0}')
    assert main(["build", "--config", str(bad)]) == EXIT_CONFIG
    bad.write_text("not json")
    assert main(["build", "--config", str(bad)]) == EXIT_CONFIG
    bad.write_text("[1, 2]")
    assert main(["build", "--config", str(bad)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_digest_ignores_output_location_and_jobs():
    a = RunConfig(out="x", jobs=1)
    assert a.digest() == RunConfig(out="y", jobs=3).digest()
    assert a.digest() != RunConfig(seed=1).digest()
    assert a.digest() != RunConfig(samples=10).digest()


def test_flags_override_the_config_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 4, "levels": 3, "horizon": 50}))
    args = _parser().parse_args(["sample", "--config", str(path), "--seed", "9",
                                 "--out", "elsewhere", "--jobs", "2"])
    cfg = config_from_args(args)
    assert (cfg.seed, cfg.levels, cfg.horizon, cfg.out, cfg.jobs) == (9, 3, 50, "elsewhere", 2)


def test_cache_path_tracks_build_inputs():
    base = RunConfig().cache_path()
    assert base == RunConfig(seed=3, samples=7).cache_path()
    assert base != RunConfig(levels=3).cache_path()
    assert base != RunConfig(preset="paper").cache_path()


# -- commands ----------------------------------------------------------------


def test_verify_passes_on_the_desk_cache(run, capsys):
    cfg, path = run()
    assert main(["verify", "--config", path]) == EXIT_OK
    text = (cfg.out_dir / "verify.txt").read_text()
    assert text.rstrip().endswith("PASS")
    assert read_csv_header(cfg.out_dir / "verify.txt")["config-digest"] == cfg.digest()
    assert "[exhaustive]" in text and "[window]" in text


def test_missing_cache_is_a_config_error(tmp_path):
    assert main(["verify", "--out", str(tmp_path), "--levels", "3"]) == EXIT_CONFIG


def test_corrupt_cache_is_a_config_error(run):
    cfg, path = run()
    p = cfg.cache_path()
    text = p.read_text()
    p.write_text(text[: len(text) // 2])
    assert main(["verify", "--config", path]) == EXIT_CONFIG


def test_cache_for_another_schedule_is_rejected(run):
    cfg, path = run()
    other = RunConfig.from_dict({**json.loads(cfg.to_json()), "preset": "paper"})
    other.cache_path().parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(cfg.cache_path(), other.cache_path())
    assert main(["verify", "--config", path, "--preset", "paper"]) == EXIT_CONFIG


def test_abelian_control_is_structurally_inapplicable(run):
    _, path = run(family="free-abelian", levels=2, k_max=1, tv_level=1, lock_horizon=500)
    assert main(["tau", "--config", path]) == EXIT_INAPPLICABLE
    assert main(["build", "--config", path]) == EXIT_INAPPLICABLE


def test_too_few_samples(run):
    _, path = run(samples=5)
    assert main(["tau", "--config", path]) == EXIT_SAMPLES


def test_sample_writes_dumps(run):
    cfg, path = run(dump=3, horizon=40)
    assert main(["sample", "--config", path]) == EXIT_OK
    text = (cfg.out_dir / "trajectories.txt").read_text()
    assert text.count("# trajectory ") == 3
    body = [line for line in text.splitlines() if not line.startswith("#")]
    assert len(body) == 3 * 40


def test_parallel_sampling_matches_serial(run, desk):
    cfg, _ = run(horizon=60)
    levels, _ = desk
    serial = _sample(cfg, levels, 12)
    parallel = _sample(RunConfig.from_dict({**json.loads(cfg.to_json()), "jobs": 3}), levels, 12)
    assert serial == parallel


def test_tau_report_and_replay_rejection(run):
    cfg, path = run(samples=2000, tv_n_max=1)
    assert main(["tau", "--config", path]) == EXIT_OK
    assert main(["tv", "--config", path]) == EXIT_OK
    assert main(["report", "--config", path, "--svg"]) == EXIT_OK
    report = (cfg.out_dir / "report.txt").read_text()
    assert "[tau.csv]" in report and "[tv.csv]" in report and "[verify.txt] missing" in report
    for name in ("tv.svg", "tau.svg"):
        ET.parse(cfg.out_dir / name)
    # the same outputs replayed under another configuration are rejected
    assert main(["report", "--config", path, "--seed", "1"]) == EXIT_CONFIG


def test_outputs_are_deterministic(run):
    cfg, path = run(samples=1500, tv_n_max=1)
    outputs = []
    for _ in range(2):
        assert main(["tau", "--config", path]) == EXIT_OK
        assert main(["tv", "--config", path]) == EXIT_OK
        outputs.append([(cfg.out_dir / n).read_bytes() for n in ("tau.csv", "tv.csv")])
    assert outputs[0] == outputs[1]
