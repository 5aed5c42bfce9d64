import json
import subprocess
import sys
from pathlib import Path

import pytest

from photoeffect.cli import main
from photoeffect.config import ConfigError, config_hash, load_config, parse_config

ROOT = Path(__file__).resolve().parents[1]
BASE = """
schema_version = 1
[potential]
kind = "coulomb"
Z = 1.0
[[pulses]]
omega_min = 0.45
omega_max = 0.55
vector = [0.0, 0.0, 1.0]
[cutoff]
scale = 10.0
"""


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(tmp_path, command, text, *extra, out="out"):
    return main([command, "--config", write(tmp_path, text), "--out", str(tmp_path / out), *extra])


# ------------------------------------------------------------------ config

def test_example_config_loads():
    cfg = load_config(ROOT / "configs" / "coulomb.toml")
    assert cfg.potential.kind == "coulomb" and len(cfg.pulses) == 1


def test_hash_ignores_key_order_and_formatting():
    a = parse_config({"potential": {"kind": "coulomb", "Z": 1.0}, "cutoff": {"scale": 10}})
    b = parse_config({"cutoff": {"scale": 10.0}, "potential": {"Z": 1, "kind": "coulomb"}})
    c = parse_config({"cutoff": {"scale": 11.0}, "potential": {"Z": 1, "kind": "coulomb"}})
    assert config_hash(a) == config_hash(b) != config_hash(c)


@pytest.mark.parametrize("data, field", [
    ({}, "potential"),
    ({"potential": {"kind": "yukawa"}}, "potential.kind"),
    ({"potential": {"kind": "coulomb", "Z": 0}}, "potential.Z"),
    ({"potential": {"kind": "coulomb"}, "pulses": [{"omega_min": 0.5}]}, "pulses[0].omega_max"),
    ({"potential": {"kind": "coulomb"}, "pulses": [{"omega_min": 0.5, "omega_max": 0.4}]}, "pulses[0]"),
    ({"potential": {"kind": "coulomb"}, "pulses": [{"omega_min": 0.4, "omega_max": 0.5,
                                                    "smoothness": 1}]}, "pulses[0].smoothness"),
    ({"potential": {"kind": "coulomb"}, "grids": {"stepp": 0.1}}, "grids"),
    ({"potential": {"kind": "coulomb"}, "verify": {"checks": ["nope"]}}, "verify.checks"),
    ({"potential": {"kind": "coulomb"}, "decay": {"t_min": 10, "t_max": 50}}, "decay"),
    ({"potential": {"kind": "coulomb"}, "schema_version": 2}, "schema_version"),
])
def test_validation_names_the_field(data, field):
    with pytest.raises(ConfigError, match=field.replace("[", r"\[").replace("]", r"\]")):
        parse_config(data)


def test_toml_syntax_error_has_position(tmp_path):
    with pytest.raises(ConfigError, match="line 2"):
        load_config(write(tmp_path, "[potential]\nkind = = 1\n"))


def test_json_config(tmp_path):
    cfg = load_config(write(tmp_path, json.dumps({"potential": {"kind": "gaussian", "depth": 5.0}}),
                            "run.json"))
    assert cfg.potential.kind == "gaussian" and cfg.potential.depth == 5.0


# --------------------------------------------------------------- commands

def test_eigen_json(tmp_path):
    assert run(tmp_path, "eigen", BASE) == 0
    doc = json.loads((tmp_path / "out" / "eigen.json").read_text())
    assert abs(doc["ground_energy"] + 0.25) < 1e-9
    assert doc["config_hash"] == load_config(tmp_path / "run.toml").hash
    assert "units" in doc and doc["phase_shifts"]


def test_eigen_csv(tmp_path):
    assert run(tmp_path, "eigen", BASE, "--format", "csv") == 0
    lines = (tmp_path / "out" / "eigen_levels.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash: ") and lines[1].startswith("# units: ")
    assert "l,radial_nodes,energy" in lines
    assert (tmp_path / "out" / "phase_shifts.csv").exists()


def test_rate_outputs_are_reproducible(tmp_path):
    assert run(tmp_path, "rate", BASE, out="a") == 0
    assert run(tmp_path, "rate", BASE, "--threads", "2", out="b") == 0
    for name in ("rate.json", "spectrum_0.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    doc = json.loads((tmp_path / "a" / "rate.json").read_text())
    assert doc["total"] == pytest.approx(18.98755626, rel=1e-8)
    assert "O(alpha^4)" in doc["caveat"]
    assert b"\r\n" not in (tmp_path / "a" / "spectrum_0.csv").read_bytes()
    header = [l for l in (tmp_path / "a" / "spectrum_0.csv").read_text().splitlines()
              if not l.startswith("#")][0]
    assert header == "q,dPdq"


def test_rate_text_and_prefix(tmp_path):
    text = BASE + '[output]\nprefix = "h_"\n'
    assert run(tmp_path, "rate", text, "--format", "text") == 0
    assert (tmp_path / "out" / "h_rate.txt").read_text().startswith("leading-order ionization")


def test_below_threshold_rate(tmp_path):
    text = BASE.replace("0.45", "0.1").replace("0.55", "0.2")
    assert run(tmp_path, "rate", text) == 0
    doc = json.loads((tmp_path / "out" / "rate.json").read_text())
    assert doc["total"] == 0.0 and doc["all_below_threshold"]


def test_exit_codes(tmp_path):
    assert run(tmp_path, "rate", BASE.replace("Z = 1.0", "Z = -1.0")) == 2
    two = BASE + "[[pulses]]\nomega_min = 0.5\nomega_max = 0.6\n"
    assert run(tmp_path, "rate", two) == 3
    assert run(tmp_path, "rate", BASE.replace("kind", "knd")) == 1
    assert run(tmp_path, "rate", BASE, "--threads", "0") == 1
    assert run(tmp_path, "rate", BASE, "--tolerance", "-1") == 1
    assert main(["rate", "--config", str(tmp_path / "missing.toml")]) == 1


def test_verify_empty_and_selected_checks(tmp_path):
    assert run(tmp_path, "verify", BASE + "[verify]\nchecks = []\n") == 0
    sel = BASE + '[verify]\nchecks = ["ground_state", "dipole_identity", "p3"]\n'
    assert run(tmp_path, "verify", sel) == 0
    doc = json.loads((tmp_path / "out" / "verify.json").read_text())
    assert doc["passed"] and [c["name"] for c in doc["checks"]] == ["ground_state", "dipole_identity", "p3"]


def test_verify_fails_on_coarse_grid(tmp_path):
    text = BASE + '[grids]\nstep = 0.5\n[verify]\nchecks = ["ground_state", "dipole_identity"]\n'
    assert run(tmp_path, "verify", text) == 4
    doc = json.loads((tmp_path / "out" / "verify.json").read_text())
    assert doc["failed"] == ["ground_state", "dipole_identity"]
    assert "ResolutionError" in doc["checks"][1]["error"]


def test_decay_command(tmp_path):
    assert run(tmp_path, "decay", BASE + '[decay]\nn = 3\n', "--format", "csv") == 0
    lines = (tmp_path / "out" / "decay.csv").read_text().splitlines()
    assert "t,envelope" in lines


def test_escape_command(tmp_path):
    text = BASE + "[escape]\nR = [10.0, 20.0]\ntau = [0.0, 200.0]\n"
    assert run(tmp_path, "escape", text) == 0
    doc = json.loads((tmp_path / "out" / "escape.json").read_text())
    assert doc["monotone_in_R"]
    assert doc["escape"][1][1] == pytest.approx(doc["p3"], rel=0.02)


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "photoeffect.cli", "eigen", "--config",
                           write(tmp_path, BASE), "--out", str(tmp_path / "o"), "--format", "text"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "eigen.txt").exists()
