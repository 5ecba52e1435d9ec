import csv
import json
import math

import pytest

from fastslow.cli import COMMANDS, main, validate_config
from fastslow.errors import ConfigError


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_variance_command(tmp_path):
    cfg = _write(tmp_path / "v.json", {"system": {"preset": "doubling-cos"}, "theta0": 0.5, "T": 1.0})
    assert main(["variance", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = _rows(tmp_path / "o" / "variance.csv")
    assert rows[0] == ["t", "var_t"]
    assert float(rows[-1][1]) == pytest.approx((1 - math.exp(-2 * math.pi)) / (4 * math.pi), abs=1e-4)
    man = json.loads((tmp_path / "o" / "variance.manifest.json").read_text())
    assert man["command"] == "variance" and man["config"]["theta0"] == 0.5


def test_manifest_rerun_is_identical(tmp_path):
    cfg = _write(tmp_path / "s.json", {"system": {"preset": "perturbed-doubling"}, "eps": 0.01,
                                       "theta0": 0.2, "seed": 17})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    man = str(tmp_path / "a" / "simulate.manifest.json")
    assert main(["simulate", "--config", man, "--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "simulate.csv").read_bytes()
    assert first == (tmp_path / "b" / "simulate.csv").read_bytes()
    assert main(["simulate", "--config", man, "--seed", "18", "--out", str(tmp_path / "c")]) == 0
    assert first != (tmp_path / "c" / "simulate.csv").read_bytes()


def test_rate_table_command(tmp_path):
    cfg = _write(tmp_path / "r.json", {"system": {"preset": "doubling-cos"}, "theta0": 0.5})
    assert main(["rate-table", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "rate-table.csv")
    assert rows[0] == ["theta", "b", "Z", "sigma_star", "converged"]
    z = {round(float(r[1]), 6): float(r[2]) for r in rows[1:]}
    assert z[0.0] == pytest.approx(0.0, abs=1e-8)
    assert all(v >= 0 for v in z.values())


def test_custom_expressions(tmp_path):
    cfg = _write(tmp_path / "c.json", {"system": {"f": "3*x", "omega": "sin(2*pi*x)"}, "theta0": 0.1})
    assert main(["domain", "--config", cfg, "--out", str(tmp_path)]) == 0


def test_unknown_command():
    with pytest.raises(SystemExit) as exc:
        main(["plot"])
    assert exc.value.code == 2


@pytest.mark.parametrize("cfg", [
    {"nope": 1},
    {"system": {"preset": "tent"}},
    {"eps": "small"},
    {"params": {"dt": 0.1, "extra": 2}},
    {"system": {"f": "2*x +", "omega": "cos(2*pi*x)"}},
    {"system": {"f": "0.5*x", "omega": "cos(2*pi*x)"}},
])
def test_config_errors_exit_2(tmp_path, capsys, cfg):
    path = _write(tmp_path / "bad.json", cfg)
    assert main(["variance", "--config", path, "--out", str(tmp_path)]) == 2
    assert "fastslow variance:" in capsys.readouterr().err


def test_every_command_has_parameters():
    for cmd in COMMANDS:
        cfg = validate_config({}, cmd)
        assert set(cfg) >= {"system", "eps", "theta0", "T", "seed", "params"}


def test_validate_rejects_bad_seed():
    with pytest.raises(ConfigError):
        validate_config({"seed": -1}, "simulate")
