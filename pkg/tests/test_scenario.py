import json

import numpy as np
import pytest

from coagfrag.grid import integrate
from coagfrag.io import fmt, profile_name, read_moments_csv, write_moments_csv, write_profile_csv
from coagfrag.kernels import DaughterTable, PowerLawCoagulation
from coagfrag.scenario import ScenarioConfig, ScenarioError, initial_state
from coagfrag.grid import Grid
from coagfrag.solver import run

BASE = {"truncation": {"n": 8}, "time": {"T": 1.0}}


def cfg(**blocks):
    raw = json.loads(json.dumps(BASE))
    raw.update(blocks)
    return ScenarioConfig.from_dict(raw)


class TestValidation:
    def test_defaults_resolved(self):
        d = cfg().to_dict()
        assert d["domain"] == {"dim": 1, "lengths": [1.0], "cells": [32]}
        assert d["truncation"]["mode"] == "conservative"
        assert d["kernels"]["coagulation"]["C_Q"] == 0.0
        assert d["time"]["scheme"] == "explicit"

    @pytest.mark.parametrize("raw,key", [
        ({"time": {"T": 1.0}}, "truncation"),
        ({"truncation": {"n": 8}}, "time"),
        ({"truncation": {"n": 1}, "time": {"T": 1.0}}, "truncation.n"),
        ({"truncation": {"n": 8.0}, "time": {"T": 1.0}}, "truncation.n"),
        ({"truncation": {"n": 8, "mode": "lossy"}, "time": {"T": 1.0}}, "truncation.mode"),
        ({"truncation": {"n": 8}, "time": {}}, "time.T"),
        ({"truncation": {"n": 8}, "time": {"T": -1.0}}, "time.T"),
        ({"truncation": {"n": 8}, "time": {"T": 1.0, "scheme": "rk4"}}, "time.scheme"),
        ({"truncation": {"n": 8}, "time": {"T": 1.0}, "domain": {"dim": 3}}, "domain.dim"),
        ({"truncation": {"n": 8}, "time": {"T": 1.0}, "domain": {"cells": [0]}}, "domain.cells"),
        ({"truncation": {"n": 8}, "time": {"T": 1.0}, "weather": {}}, "weather"),
        ({"truncation": {"n": 8}, "time": {"T": 1.0}, "seed": "x"}, "seed"),
        ({"truncation": {"n": 8}, "time": {"T": 1.0},
          "initial": {"type": "lognormal"}}, "initial.type"),
        ({"truncation": {"n": 8}, "time": {"T": 1.0},
          "outputs": {"sample_times": [2.0]}}, "outputs.sample_times"),
        ({"truncation": {"n": 8}, "time": {"T": 1.0},
          "diffusion": {"type": "constant", "params": {"d": 0.0}}}, "diffusion"),
        ({"truncation": {"n": 8}, "time": {"T": 1.0},
          "coagulation": {"type": "power_law", "C_Q": 1.0, "alpha": 2.0, "beta": 0.0}}, "kernels"),
    ])
    def test_errors_name_the_key(self, raw, key):
        with pytest.raises(ScenarioError) as info:
            ScenarioConfig.from_dict(raw)
        assert str(info.value).startswith(key)

    def test_kernel_block_replaced_not_merged(self):
        c = cfg(coagulation={"type": "power_law", "C_Q": 1.0, "alpha": 0.5, "beta": 0.5})
        k = c.kernels().coagulation
        assert isinstance(k, PowerLawCoagulation) and k.alpha == 0.5

    def test_table_kernels(self):
        beta = [[0, 0, 0], [2, 0, 0], [1, 1, 0]]
        c = ScenarioConfig.from_dict({"truncation": {"n": 3}, "time": {"T": 0.1},
                                      "daughters": {"type": "table", "values": beta}})
        assert isinstance(c.kernels().daughters, DaughterTable)

    def test_load_errors(self, tmp_path):
        with pytest.raises(ScenarioError, match="^scenario"):
            ScenarioConfig.load(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{\"truncation\": ")
        with pytest.raises(ScenarioError, match="invalid JSON"):
            ScenarioConfig.load(bad)

    def test_overrides(self):
        c = cfg().with_overrides(truncation={"n": 64, "mode": "full_loss"})
        assert c.n == 64 and c.mode.value == "full_loss" and c.T == 1.0


class TestConstruction:
    def test_sample_times(self):
        assert cfg(outputs={"samples": 5}).sample_times().tolist() == [0, 0.25, 0.5, 0.75, 1.0]
        c = cfg(outputs={"sample_times": [0.3, 0.1]})
        assert c.sample_times().tolist() == [0.0, 0.1, 0.3, 1.0]
        assert ScenarioConfig.from_dict({"truncation": {"n": 2}, "time": {"T": 0}}).sample_times().tolist() == [0.0]

    def test_moment_orders_cover_audits(self):
        c = cfg(coagulation={"type": "power_law", "C_Q": 0.5, "alpha": 0.5, "beta": 1.0},
                fragmentation={"type": "power_law", "C_F": 1.0, "gamma": 3.0},
                outputs={"moment_orders": [3], "audit": {"l": 2.0}})
        assert c.moment_orders() == [0.0, 1.0, 1.5, 2.0, 3.0, 4.0]

    @pytest.mark.parametrize("kind,mass", [("monodisperse", 1.0), ("per_species", 1.0 + 2 * 0.5)])
    def test_initial_mass(self, kind, mass):
        g = Grid(1, 2.0, 10)
        block = {"type": kind, "density": "uniform", "params": {"values": [1.0, 0.5]}}
        s = initial_state(g, 6, block)
        rho1 = np.tensordot(np.arange(1, 7), s.c, axes=(0, 0))
        assert integrate(rho1, g) == pytest.approx(2.0 * mass, rel=1e-15)

    def test_geometric_mass(self):
        s = initial_state(Grid(1, 1.0, 1), 200, {"type": "geometric", "density": "uniform"})
        assert float(np.arange(1, 201) @ s.c[:, 0]) == pytest.approx(1.0, rel=1e-14)

    def test_bump_is_seeded(self):
        block = {"type": "monodisperse", "density": "gaussian_bump", "params": {"noise": 0.2}}
        g = Grid(2, (1.0, 1.0), (8, 6))
        a, b = initial_state(g, 4, block, 3), initial_state(g, 4, block, 3)
        assert np.array_equal(a.c, b.c)
        assert not np.array_equal(a.c, initial_state(g, 4, block, 4).c)
        # the peak stays on one of the four cells around the centre
        ix, iy = np.unravel_index(a.c[0].argmax(), g.shape)
        assert ix in (3, 4) and iy in (2, 3)


class TestIO:
    def test_fmt(self):
        assert fmt(3) == "3" and fmt(0.1) == "0.1" and fmt(float("nan")) == "nan"
        assert float(fmt(1 / 3)) == 1 / 3
        assert profile_name(0.5) == "profile_0.5.csv"

    def test_moments_round_trip(self, tmp_path):
        res = run(cfg(coagulation={"type": "power_law", "C_Q": 0.5, "alpha": 0, "beta": 0},
                      domain={"cells": [3]}, outputs={"samples": 4}))
        path = write_moments_csv(tmp_path / "moments.csv", res)
        assert b"\r" not in path.read_bytes()
        table = read_moments_csv(path)
        np.testing.assert_array_equal(table["t"], res.times)
        np.testing.assert_array_equal(table["total_mass"], res.total_mass)
        np.testing.assert_array_equal(table["int_rho_2"], res.moment_integral(2))

    def test_profile_2d(self, tmp_path):
        g = Grid(2, (1.0, 2.0), (2, 3))
        c = np.arange(12.0).reshape(2, 2, 3)
        lines = write_profile_csv(tmp_path / "p.csv", g, c).read_text().splitlines()
        assert lines[0] == "i,cell_index,x,y,value"
        assert len(lines) == 13
        assert lines[-1] == "2,5,0.75,1.6666666666666665,11.0"
