import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from neuralpde.cli import load_config, main
from neuralpde.io import load_fields


def _cfg(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _run(tmp_path, text, out="out", extra=()):
    cfg = _cfg(tmp_path, text)
    return main(["run", cfg, "--out", str(tmp_path / out), *extra])


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_malformed_yaml_exits_2(tmp_path, capsys):
    assert _run(tmp_path, "experiment: [unclosed\n") == 2
    assert _error(capsys)["error"] == "parse"
    assert not (tmp_path / "out").exists()


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("text", [
    "experiment: wave-free\nparams: {bogus: 1}\n",
    "experiment: wave-free\nparams: {basis: {n_max: 2.5}}\n",
    "experiment: nonsense\n",
    "experiment: wave-free\nseed: -1\n",
    "experiment: wave-free\nextra: 1\n",
    "experiment: gradcheck\nparams: {fd_step: -1.0}\n",
])
def test_invalid_parameters_exit_3(tmp_path, capsys, text):
    assert _run(tmp_path, text) == 3
    assert _error(capsys)["error"] == "validation"
    assert not (tmp_path / "out").exists()


def test_invalid_flags_exit_3(tmp_path):
    assert _run(tmp_path, "experiment: wave-free\n", extra=["--threads", "0"]) == 3
    assert _run(tmp_path, "experiment: wave-free\n", extra=["--seed", str(2**64)]) == 3


def test_numerical_failure_exits_4_without_outputs(tmp_path, capsys):
    assert _run(tmp_path, "experiment: saturate-plan\nparams: {eps: 1.0e-9, T_budget: 1.0e-6}\n") == 4
    assert _error(capsys)["error"] == "numerical"
    assert not (tmp_path / "out").exists()
    assert not [p for p in os.listdir(tmp_path) if p.startswith(".neuralpde-")]


def test_wave_free_bundle_and_closure(tmp_path, capsys):
    assert _run(tmp_path, "experiment: wave-free\nseed: 3\n") == 0
    assert capsys.readouterr().out.startswith("wave-free: ")
    out = tmp_path / "out"
    bundle = json.loads((out / "bundle.json").read_text())
    assert sorted(os.listdir(out)) == sorted(bundle["files"])
    assert bundle["seed"] == 3 and bundle["metrics"]["max_drift"] <= 1e-12
    # the echoed config reproduces the run exactly
    echo = out / "config.echo"
    assert load_config(str(echo)) == yaml.safe_load(echo.read_text())
    assert main(["run", str(echo), "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "result.csv").read_bytes() == (out / "result.csv").read_bytes()


def test_gradcheck_linear(tmp_path):
    assert _run(tmp_path, "experiment: gradcheck\nseed: 7\nparams: {n_probes: 5}\n") == 0
    bundle = json.loads((tmp_path / "out" / "bundle.json").read_text())
    assert bundle["metrics"]["max_rel_err"] <= 1e-8
    assert "gradcheck.csv" in bundle["files"]


def test_seed_determinism(tmp_path):
    text = ("experiment: train-parabolic\nseed: 11\nparams: {grid: {n_half: 8}, nt: 10, "
            "train: {max_iters: 5}}\n")
    assert _run(tmp_path, text, out="a") == 0
    assert _run(tmp_path, text, out="b") == 0
    for name in ("result.csv", "history.csv", "coefficients.npde", "trajectory.npde"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    c = load_fields(tmp_path / "a" / "coefficients.npde")
    assert np.all(np.isfinite(c.alpha))


def test_seed_flag_overrides_config(tmp_path):
    assert _run(tmp_path, "experiment: wave-free\nseed: 1\n", extra=["--seed", "9"]) == 0
    echo = yaml.safe_load((tmp_path / "out" / "config.echo").read_text())
    assert echo["seed"] == 9


def test_console_script_entry_point(tmp_path):
    cfg = _cfg(tmp_path, "experiment: stencil-convergence\nparams: {resolutions: [8, 16, 32]}\n")
    proc = subprocess.run([sys.executable, "-m", "neuralpde.cli", "run", cfg, "--out", str(tmp_path / "o"),
                           "--threads", "1"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "order_1d=" in proc.stdout


@pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "configs").glob("*.yaml")),
                         ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = load_config(str(path))
    assert cfg["experiment"] == path.stem
