import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from axivortex.cli import SERIES_KEYS, run_cli
from axivortex.config import load_config, parse_config, random_sigma
from axivortex.core import ConfigError
from axivortex.measure import ParticleMeasure

ROOT = Path(__file__).resolve().parents[1]
CANONICAL = ROOT / "configs" / "canonical.ini"

SMALL = """
[solver]
n_z = 128
[time]
N = 4
[output]
fields_n_r = 16
fields_n_z = 16
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return str(p)


class TestConfig:
    def test_canonical_matches_defaults(self):
        rc, d = load_config(CANONICAL), parse_config("")
        assert rc.model == d.model and rc.solver == d.solver and rc.sigma == d.sigma
        assert rc.model.theorem_precondition()

    def test_overrides(self):
        rc = parse_config("[model]\nr0 = 2\nI0 = 1.5 3\n[ambient]\nfamily = linear\na = 2\nb = 0.5\n"
                          "[forcing]\nkind = zero\n[solver]\nmethod = gradient\n")
        assert rc.model.r0 == 2 and rc.model.I0 == (1.5, 3.0)
        assert rc.ambient.theta0(1.0) == 2.5
        assert rc.forcing.F0(0.0, 2.0, 0.5) == 0
        assert rc.solver.method == "gradient"

    @pytest.mark.parametrize("text", [
        "[model]\nr0 = -1\n", "[model]\nr0 = abc\n", "[nosuch]\nx = 1\n",
        "[ambient]\nfamily = cubic\n", "[forcing]\nkind = wind\n", "[solver]\nmethod = magic\n",
        "[solver]\nn_z = 1\n", "[model]\nI0 = 1\n", "[sigma]\nr_min = 0.6\n",
        "[sigma]\nangle_max = 2\n", "[output]\nmeridional = maybe\n", "[output]\nfields_n_r = 1\n",
        "[model\n", "[time]\nN = 0\n"])
    def test_errors(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "none.ini")

    def test_random_sigma(self):
        rc = parse_config("")
        a, b = random_sigma(rc.sigma, 7), random_sigma(rc.sigma, 7)
        assert a.atoms.tobytes() == b.atoms.tobytes()
        assert len(a) == 8 and np.all(np.hypot(*a.atoms.T) <= 0.5)
        assert np.all(a.weights == 1 / 8)


class TestCli:
    def test_validate(self, tmp_path, capsys):
        assert run_cli(["validate", "--config", str(CANONICAL), "--out", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "assumptions.json").read_text())
        assert rep["passed"] and rep["theorem_precondition"]
        a1 = rep["checks"]["A1'"]
        assert abs(a1["margin"] - 1.0) <= 1e-12
        assert "pass" in capsys.readouterr().out

    def test_simulate_precondition(self, tmp_path):
        p = tmp_path / "bad.ini"
        p.write_text("[forcing]\nM = 1\n[time]\nT = 1\nl0 = 1\nl = 1\n")
        assert run_cli(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 4

    def test_bad_config_exit(self, tmp_path):
        p = tmp_path / "bad.ini"
        p.write_text("[model]\nr0 = -1\n")
        assert run_cli(["solve", "--config", str(p), "--out", str(tmp_path)]) == 2
        assert run_cli(["solve", "--config", str(tmp_path / "x.ini"), "--out", str(tmp_path)]) == 2
        assert run_cli(["report", "--out", str(tmp_path / "empty")]) == 2
        assert run_cli(["solve", "--seed", "-1", "--out", str(tmp_path)]) == 2

    def test_solve_outputs(self, tmp_path, small_cfg):
        assert run_cli(["solve", "--config", small_cfg, "--out", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "solve_report.json").read_text())
        assert rep["converged"] and rep["max_mass_error"] <= 1e-4
        with open(tmp_path / "psi.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["i", "upsilon", "zed", "psi"] and len(rows) == 9
        sig = ParticleMeasure.from_csv(tmp_path / "particles.csv")
        assert np.array_equal(sig.atoms, random_sigma(parse_config(SMALL).sigma, 0).atoms)
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["exit_code"] == 0 and man["command"] == "solve"
        for name in man["artifacts"]:
            assert (tmp_path / name).is_file()
        assert {"boundary.csv", "fields_t0.csv"} <= set(man["artifacts"])

    def test_atoms_file(self, tmp_path, small_cfg):
        sig = ParticleMeasure.create([[0.1, 0.2], [0.2, 0.1]], [0.3, 0.7])
        sig.to_csv(tmp_path / "a.csv")
        out = tmp_path / "o"
        assert run_cli(["solve", "--config", small_cfg, "--atoms", str(tmp_path / "a.csv"),
                        "--out", str(out)]) == 0
        assert ParticleMeasure.from_csv(out / "particles.csv").weights.tolist() == [0.3, 0.7]

    def test_simulate_report_deterministic(self, tmp_path, small_cfg):
        outs = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            assert run_cli(["simulate", "--config", small_cfg, "--out", str(out), "--seed", "5"]) == 0
            assert run_cli(["report", "--out", str(out)]) == 0
            outs.append(out)
        names = sorted(p.name for p in outs[0].iterdir())
        assert names == sorted(p.name for p in outs[1].iterdir())
        for n in names:
            if n != "manifest.json":
                assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes(), n
        with open(outs[0] / "series.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == SERIES_KEYS and len(rows) == 6
        assert {"particles_t4.csv", "meridional_t3.csv", "fields_t4.csv", "summary.txt"} <= set(names)
        man = json.loads((outs[0] / "manifest.json").read_text())
        assert man["command"] == "report" and man["artifacts"] == ["series.csv", "summary.txt"]

    def test_oracle(self, tmp_path):
        assert run_cli(["oracle", "--out", str(tmp_path)]) == 0
        res = json.loads((tmp_path / "oracle.json").read_text())
        assert res["passed"] and len(res["checks"]) == 10

    def test_module_entry_and_log(self, tmp_path):
        env = {"VORTEX_LOG": "INFO", "PATH": "/usr/bin:/bin"}
        p = subprocess.run([sys.executable, "-m", "axivortex", "validate", "--out", str(tmp_path)],
                           capture_output=True, text=True, env=env)
        assert p.returncode == 0
        assert "theorem precondition" in p.stdout
        v = subprocess.run([sys.executable, "-m", "axivortex", "--version"], capture_output=True,
                           text=True)
        assert v.returncode == 0 and v.stdout.startswith("axivortex")
