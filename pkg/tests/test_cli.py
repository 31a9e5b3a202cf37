import json
from pathlib import Path

import pytest

from coagfrag.cli import EXIT_AUDIT, EXIT_INVALID, EXIT_OK, EXIT_STIFF, main
from coagfrag.io import read_moments_csv

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def write(tmp_path, raw, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


SMALL = {
    "truncation": {"n": 16},
    "time": {"T": 0.5},
    "domain": {"dim": 1, "lengths": [1.0], "cells": [4]},
    "coagulation": {"type": "power_law", "C_Q": 0.5, "alpha": 0.5, "beta": 0.5},
    "fragmentation": {"type": "power_law", "C_F": 0.2, "gamma": 2.0},
    "outputs": {"samples": 6},
}


class TestRun:
    def test_outputs(self, tmp_path):
        out = tmp_path / "o"
        assert main(["run", "--scenario", write(tmp_path, SMALL), "--out", str(out)]) == EXIT_OK
        assert {p.name for p in out.iterdir()} == {"moments.csv", "profile_0.5.csv", "run_meta.json"}
        meta = json.loads((out / "run_meta.json").read_text())
        assert meta["scenario"]["truncation"]["n"] == 16
        m = read_moments_csv(out / "moments.csv")
        assert len(m["t"]) == 6 and abs(m["total_mass"][-1] - m["total_mass"][0]) < 1e-12

    def test_byte_identical(self, tmp_path):
        s = write(tmp_path, SMALL)
        main(["run", "--scenario", s, "--out", str(tmp_path / "a")])
        main(["run", "--scenario", s, "--out", str(tmp_path / "b")])
        for name in ("moments.csv", "profile_0.5.csv", "run_meta.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_two_dimensional_profile(self, tmp_path):
        raw = dict(SMALL, domain={"dim": 2, "lengths": [1.0, 1.0], "cells": [3, 2]},
                   outputs={"samples": 2, "snapshot_times": [0.25]})
        out = tmp_path / "o"
        assert main(["run", "--scenario", write(tmp_path, raw), "--out", str(out)]) == EXIT_OK
        lines = (out / "profile_0.25.csv").read_text().splitlines()
        assert lines[0] == "i,cell_index,x,y,value" and len(lines) == 1 + 16 * 6

    @pytest.mark.parametrize("raw", [{"truncation": {"n": 1}, "time": {"T": 1}}, {"time": {"T": 1}}])
    def test_invalid_scenario(self, tmp_path, raw, capsys):
        assert main(["run", "--scenario", write(tmp_path, raw), "--out", str(tmp_path)]) == EXIT_INVALID
        assert capsys.readouterr().err.startswith("error: truncation")

    def test_missing_file_and_bad_flags(self, tmp_path):
        assert main(["run", "--scenario", str(tmp_path / "nope.json")]) == EXIT_INVALID
        assert main(["run"]) == EXIT_INVALID
        assert main(["frobnicate"]) == EXIT_INVALID
        assert main(["run", "--scenario", write(tmp_path, SMALL), "--threads", "0"]) == EXIT_INVALID

    def test_stiffness_exit(self, tmp_path, capsys):
        code = main(["run", "--scenario", str(SCENARIOS / "stiff.json"), "--out", str(tmp_path)])
        assert code == EXIT_STIFF
        err = capsys.readouterr().err
        payload = json.loads(err.split("stiffness payload: ", 1)[1])
        assert payload["dt"] < payload["dt_floor"]

    def test_zero_horizon(self, tmp_path):
        raw = dict(SMALL, time={"T": 0.0})
        out = tmp_path / "o"
        assert main(["run", "--scenario", write(tmp_path, raw), "--out", str(out)]) == EXIT_OK
        assert len(read_moments_csv(out / "moments.csv")["t"]) == 1


def test_sweep(tmp_path):
    raw = {"truncation": {"n": 16, "mode": "full_loss"}, "time": {"T": 2.0, "dt_max": 0.02},
           "domain": {"dim": 1, "lengths": [1.0], "cells": [1]},
           "coagulation": {"type": "power_law", "C_Q": 0.5, "alpha": 1.0, "beta": 1.0},
           "outputs": {"samples": 21}}
    out = tmp_path / "o"
    assert main(["sweep", "--scenario", write(tmp_path, raw), "--out", str(out),
                 "--levels", "16,32,64"]) == EXIT_OK
    names = {p.name for p in out.iterdir()}
    for mode in ("full_loss", "conservative"):
        assert {f"moments_{mode}_n{n}.csv" for n in (16, 32, 64)} <= names
    gel = json.loads((out / "gel_report.json").read_text())
    assert gel["levels"] == [16, 32, 64]
    g = gel["final_gel_fraction"]
    assert all(abs(v - 0.5) < 0.02 for v in g.values()) and gel["verdict"] == "gelling"
    stab = json.loads((out / "stability.json").read_text())
    assert all(v < 1e-10 for v in stab["conservation_drift"].values())
    assert len(stab["refinement"]) == 2


def test_sweep_bad_levels(tmp_path):
    assert main(["sweep", "--scenario", write(tmp_path, SMALL), "--levels", "8,16"]) == EXIT_INVALID
    assert main(["sweep", "--scenario", write(tmp_path, SMALL), "--levels", "8,x,16"]) == EXIT_INVALID


class TestAudit:
    FAST = {"closed_form": False, "elem1_samples": 2000, "elem2_trials": 100, "i_max": 200}

    def test_passes(self, tmp_path):
        raw = dict(SMALL, outputs={"samples": 11, "audit": dict(self.FAST, l=2.0)})
        out = tmp_path / "o"
        assert main(["audit", "--scenario", write(tmp_path, raw), "--out", str(out)]) == EXIT_OK
        records = json.loads((out / "audit.json").read_text())
        checks = {r["check"] for r in records}
        assert {"dissipation", "interpolation_alpha+1", "mass_conservation",
                "homogeneous_consistency", "bound_elem1", "bound_elem2"} <= checks

    def test_from_run_directory(self, tmp_path):
        raw = dict(SMALL, outputs={"samples": 6, "audit": self.FAST})
        run_dir = tmp_path / "r"
        main(["run", "--scenario", write(tmp_path, raw), "--out", str(run_dir)])
        assert main(["audit", "--run", str(run_dir), "--out", str(tmp_path / "a")]) == EXIT_OK

    def test_bad_daughters_fail(self, tmp_path, capsys):
        raw = {"truncation": {"n": 4}, "time": {"T": 0.1},
               "daughters": {"type": "table", "values": [[0, 0, 0, 0], [2, 0, 0, 0], [1, 1, 0, 0], [1, 2.0, 0, 0]]},
               "fragmentation": {"type": "power_law", "C_F": 1.0, "gamma": 1.0},
               "outputs": {"audit": self.FAST}}
        assert main(["audit", "--scenario", write(tmp_path, raw), "--out", str(tmp_path)]) == EXIT_AUDIT
        assert "FAIL daughter_normalisation" in capsys.readouterr().out

    def test_needs_input(self, tmp_path):
        assert main(["audit", "--out", str(tmp_path)]) == EXIT_INVALID
        assert main(["audit", "--run", str(tmp_path / "none")]) == EXIT_INVALID


class TestDuality:
    def test_default_q2(self, tmp_path):
        out = tmp_path / "o"
        assert main(["duality", "--trials", "8", "--cells", "32", "--steps", "64",
                     "--out", str(out)]) == EXIT_OK
        d = json.loads((out / "kmq.json").read_text())
        assert {"m", "q", "trials", "seed", "estimate", "probes"} <= set(d)
        assert d["estimate"] <= 1.05 and len(d["probes"]) == 8

    def test_closeness(self, tmp_path):
        out = tmp_path / "o"
        assert main(["duality", "--trials", "4", "--cells", "16", "--steps", "32", "--a", "1",
                     "--b", "1", "--p", "3", "--out", str(out)]) == EXIT_OK
        d = json.loads((out / "kmq.json").read_text())
        assert d["closeness"]["pass"] and d["m"] == 1.0 and d["q"] == 1.5

    @pytest.mark.parametrize("argv", [["--trials", "0"], ["--q", "1.0"], ["--a", "2", "--b", "1", "--p", "2"],
                                      ["--a", "1"]])
    def test_invalid(self, tmp_path, argv):
        assert main(["duality", "--out", str(tmp_path)] + argv) == EXIT_INVALID
