import json
from pathlib import Path

import numpy as np
import pytest

from sparseflock.config import (
    ConfigError,
    build_control,
    build_initial_configuration,
    build_kernel,
    build_limit_spec,
    config_hash,
    emit_config,
    validate_config,
    validate_config_text,
)
from sparseflock.runner import run, run_config_file

SIMULATE_TOML = """
mode = "simulate"

[kernel]
family = "cucker_smale"
K = 1.0
sigma = 1.0
beta = 0.45
sign = -1.0

[initial]
dimension = 2
leaders_y = [[1.0, 0.0], [-1.0, 0.0]]
leaders_w = [[0.0, 0.3], [0.0, -0.3]]
followers_family = "gaussian_truncated"
followers_n = 16
mean = [0.0, 0.0, 0.5, 0.0]
scale = 0.4
radius = 1.5

[control]
n_cells = 2
U = 1.0
values = [[[0.4, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]

[grid]
T = 1.0
n_steps = 20

[experiment]
seed = 3
"""

MEANFIELD_TOML = SIMULATE_TOML.replace('mode = "simulate"', 'mode = "meanfield"') + """
eval_times = [0.0, 0.5, 1.0]
N_list = [8, 32]
N_ref = 128
"""

SWEEP_TOML = """
mode = "sweep"

[kernel]
family = "cucker_smale"
K = 1.0
sigma = 1.0
beta = 0.0
sign = -1.0

[initial]
dimension = 2
leaders_y = [[1.0, 0.0], [-1.0, 0.0]]
leaders_w = [[0.0, 0.3], [0.0, -0.3]]
followers_family = "gaussian_truncated"
mean = [0.0, 0.0, 0.5, 0.0]
scale = 0.4
radius = 1.5

[control]
n_cells = 2
U = 1.0

[cost]
family = "leader_tracking"
gamma = 1.0
target_y = [[1.5, 0.5], [-0.5, -0.5]]
target_w = [[0.0, 0.0], [0.0, 0.0]]

[grid]
T = 1.0
n_steps = 16

[experiment]
seed = 1
N_list = [4, 8]
N_ref = 32
gamma_list = [0.0, 2.0]

[optimizer]
max_iters = 30
"""


def test_valid_simulate_config_parses():
    cfg = validate_config_text(SIMULATE_TOML)
    assert cfg.mode == "simulate"
    kernel = build_kernel(cfg)
    assert kernel.family == "cucker_smale"
    c0 = build_initial_configuration(cfg)
    assert c0.m == 2 and c0.n_followers == 16
    u = build_control(cfg)
    assert u.n_cells == 2 and u.cell_values[0, 0, 0] == 0.4


def test_unknown_key_diagnostic():
    bad = SIMULATE_TOML + "\n[output]\nbogus_key = 1\n"
    with pytest.raises(ConfigError) as err:
        validate_config_text(bad)
    diags = err.value.diagnostics
    assert any(d.code == "unknown-key" and "bogus_key" in d.path for d in diags)


def test_negative_radius_diagnostic():
    bad = SIMULATE_TOML.replace("U = 1.0", "U = -1.0")
    with pytest.raises(ConfigError) as err:
        validate_config_text(bad)
    assert any(d.path.startswith("control") and d.code == "invalid-value" for d in err.value.diagnostics)


def test_unsorted_n_list_diagnostic():
    bad = MEANFIELD_TOML.replace("N_list = [8, 32]", "N_list = [128, 32]")
    with pytest.raises(ConfigError) as err:
        validate_config_text(bad)
    assert any("increasing" in d.message for d in err.value.diagnostics)


def test_parse_error_diagnostic():
    with pytest.raises(ConfigError) as err:
        validate_config_text("mode = [unclosed")
    assert err.value.diagnostics[0].code == "parse-error"


def test_missing_cost_for_sweep():
    bad = SWEEP_TOML.replace("[cost]", "[cost_ignored]").replace(
        'family = "leader_tracking"', "x = 1", 1
    )
    with pytest.raises(ConfigError):
        validate_config_text(bad)


def test_emit_roundtrip():
    cfg = validate_config_text(SWEEP_TOML)
    text = emit_config(cfg)
    again = validate_config_text(text)
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)


def test_config_hash_ignores_output_table():
    cfg1 = validate_config_text(SIMULATE_TOML)
    cfg2 = validate_config_text(SIMULATE_TOML + '\n[output]\ndirectory = "elsewhere"\n')
    assert config_hash(cfg1) == config_hash(cfg2)


def test_limit_spec_builder():
    spec = build_limit_spec(validate_config_text(MEANFIELD_TOML))
    assert spec.n_list == (8, 32)
    assert spec.n_ref == 128
    assert spec.eval_times == (0.0, 0.5, 1.0)


# -- runner ----------------------------------------------------------------------


def test_run_simulate_writes_artifacts(tmp_path):
    cfg = validate_config_text(SIMULATE_TOML)
    result = run(cfg, out_dir=tmp_path)
    assert result.exit_code == 0
    assert result.run_dir is not None and result.run_dir.is_dir()
    names = set(result.artifacts)
    assert {"trajectory.csv", "report.json"} <= names
    manifest = json.loads((result.run_dir / "manifest.json").read_text())
    assert manifest["failure"] is None
    assert manifest["seed"] == 3
    assert manifest["mode"] == "simulate"
    report = json.loads((result.run_dir / "report.json").read_text())
    assert report["within_envelope"] is True


def test_run_seed_override_changes_run_dir(tmp_path):
    cfg = validate_config_text(SIMULATE_TOML)
    a = run(cfg, out_dir=tmp_path)
    b = run(cfg, out_dir=tmp_path, seed=99)
    assert a.run_dir != b.run_dir
    assert "s99" in b.run_dir.name


def test_rerun_is_byte_identical(tmp_path):
    cfg = validate_config_text(SIMULATE_TOML)
    a = run(cfg, out_dir=tmp_path / "a")
    b = run(cfg, out_dir=tmp_path / "b")
    for name in a.artifacts:
        if name in ("manifest.json", "timings.csv"):
            continue
        assert (a.run_dir / name).read_bytes() == (b.run_dir / name).read_bytes()


def test_run_meanfield_report(tmp_path):
    cfg = validate_config_text(MEANFIELD_TOML)
    result = run(cfg, out_dir=tmp_path)
    assert result.exit_code == 0
    report = json.loads((result.run_dir / "report.json").read_text())
    values = [row["value"] for row in report["rows"]]
    assert len(values) == 2
    assert report["verdicts"]["decreasing"] in (True, False)
    csv_text = (result.run_dir / "report.csv").read_text()
    assert csv_text.splitlines()[0].startswith("n,value")
    assert "wall" not in csv_text  # timing lives in timings.csv only


def test_run_sweep_reports_and_controls(tmp_path):
    cfg = validate_config_text(SWEEP_TOML)
    result = run(cfg, out_dir=tmp_path)
    assert result.exit_code == 0
    report = json.loads((result.run_dir / "report.json").read_text())
    assert report["verdicts"]["all_zero_at_gamma_zero"] is True
    assert any(name.startswith("control_") for name in result.artifacts)


def test_runtime_failure_leaves_manifest(tmp_path):
    text = SIMULATE_TOML.replace('family = "cucker_smale"', 'family = "repulsion_attraction"')
    text = text.replace("K = 1.0", "sigma_r = 1e300").replace("sigma = 1.0", "regularizer = 1e-9")
    text = text.replace("beta = 0.45", "growth_constant = 1e308").replace("sign = -1.0", "")
    cfg = validate_config_text(text)
    result = run(cfg, out_dir=tmp_path)
    assert result.exit_code == 1
    manifest = json.loads((result.run_dir / "manifest.json").read_text())
    assert manifest["failure"] is not None
    assert "IntegrationError" in manifest["failure"]


def test_run_config_file_validation_failure(tmp_path):
    cfg_path = tmp_path / "bad.toml"
    cfg_path.write_text(SIMULATE_TOML.replace("U = 1.0", "U = -2.0"))
    result = run_config_file(cfg_path)
    assert result.exit_code == 2
    assert result.diagnostics


def test_run_config_file_validate_only(tmp_path):
    cfg_path = tmp_path / "ok.toml"
    cfg_path.write_text(SIMULATE_TOML)
    result = run_config_file(cfg_path, validate_only=True)
    assert result.exit_code == 0
    assert result.summary["valid"] is True
    assert result.run_dir is None


def test_output_env_var_used(tmp_path, monkeypatch):
    from sparseflock.runner import OUTPUT_ENV_VAR, resolve_out_dir

    monkeypatch.setenv(OUTPUT_ENV_VAR, str(tmp_path / "envout"))
    cfg = validate_config_text(SIMULATE_TOML)
    assert resolve_out_dir(cfg, None) == Path(tmp_path / "envout")
    assert resolve_out_dir(cfg, "explicit") == Path("explicit")
