"""Scenario files: parsing, validation and construction of the initial state.

A scenario is a JSON object with the blocks ``domain``, ``truncation``,
``coagulation``/``fragmentation``/``daughters`` (optionally nested under
``kernels``), ``diffusion``, ``initial``, ``time``, ``outputs`` and ``seed``.
All quantities are in dimensionless simulation units. Only
``truncation.n`` and ``time.T`` are mandatory; every other key has a
default, and :meth:`ScenarioConfig.to_dict` returns the fully resolved
configuration.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .grid import Grid
from .kernels import KernelSet, PowerLawCoagulation
from .reaction import TruncatedState, TruncationMode
from .solver import SCHEMES, StepperConfig, diffusion_coefficients


class ScenarioError(ValueError):
    """Invalid scenario; the message starts with the offending key."""

    def __init__(self, key: str, problem: str):
        super().__init__(f"{key}: {problem}")
        self.key = key


DEFAULTS: dict[str, Any] = {
    "domain": {"dim": 1, "lengths": [1.0], "cells": [32]},
    "truncation": {"mode": "conservative"},
    "kernels": {
        "coagulation": {"type": "power_law", "C_Q": 0.0, "alpha": 0.0, "beta": 0.0},
        "fragmentation": {"type": "power_law", "C_F": 0.0, "gamma": 1.0},
        "daughters": {"type": "power_law", "nu": 0.0},
    },
    "diffusion": {"type": "constant", "params": {"d": 1.0}},
    "initial": {"type": "monodisperse", "density": "uniform", "params": {}},
    "time": {"dt_init": 1e-3, "dt_max": 1e-2, "rtol": 1e-8, "atol": 1e-12,
             "scheme": "explicit"},
    "outputs": {"moment_orders": [0, 1, 2], "samples": 11, "snapshot_times": [],
                "keep_states": False, "audit": {"l": 2.0}},
    "seed": 0,
}

_TOP_KEYS = {"domain", "truncation", "kernels", "coagulation", "fragmentation", "daughters",
             "diffusion", "initial", "time", "outputs", "seed", "name", "description"}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _number(block: dict, key: str, where: str, positive: bool = False,
            nonneg: bool = False) -> float:
    v = block.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}.{key}", f"expected a number, got {v!r}")
    v = float(v)
    if not np.isfinite(v):
        raise ScenarioError(f"{where}.{key}", "must be finite")
    if positive and not v > 0:
        raise ScenarioError(f"{where}.{key}", f"must be positive, got {v}")
    if nonneg and v < 0:
        raise ScenarioError(f"{where}.{key}", f"must be nonnegative, got {v}")
    return v


@dataclass
class ScenarioParts:
    state: TruncatedState
    kernels: KernelSet
    d: np.ndarray
    d_bounds: tuple[float, float]
    mode: TruncationMode
    stepper: StepperConfig
    sample_times: np.ndarray
    snapshot_times: list[float]
    moment_orders: list[float]


class ScenarioConfig:
    """A validated scenario. Construct with :meth:`from_dict` or :meth:`load`."""

    def __init__(self, raw: dict[str, Any]):
        self._cfg = self._validate(raw)

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ScenarioConfig":
        return cls(raw)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ScenarioError("scenario", f"cannot read {path}: {exc.strerror}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError("scenario", f"invalid JSON ({exc.msg}, line {exc.lineno})") from None
        return cls(raw)

    def with_overrides(self, **blocks) -> "ScenarioConfig":
        """Copy with some blocks merged over, e.g. ``truncation={"n": 256}``."""
        return ScenarioConfig(_merge(self._cfg, blocks))

    # -- validation -----------------------------------------------------------

    @staticmethod
    def _validate(raw: dict[str, Any]) -> dict[str, Any]:
        if not isinstance(raw, dict):
            raise ScenarioError("scenario", "top level must be a JSON object")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ScenarioError(sorted(unknown)[0], "unknown block")
        raw = copy.deepcopy(raw)
        kern = dict(raw.pop("kernels", {}) or {})
        for blk in ("coagulation", "fragmentation", "daughters"):
            if blk in raw:
                kern[blk] = raw.pop(blk)
        raw["kernels"] = kern
        for blk in ("truncation", "time"):
            if blk not in raw:
                raise ScenarioError(blk, "missing block")
        cfg = _merge(DEFAULTS, raw)
        # families are replaced, not merged, so defaults never fill a partial kernel
        for blk, v in kern.items():
            cfg["kernels"][blk] = copy.deepcopy(v)
        if "diffusion" in raw:
            cfg["diffusion"] = {"type": raw["diffusion"].get("type", "constant"),
                                "params": copy.deepcopy(raw["diffusion"].get("params", {}))}
        if "initial" in raw and "params" in raw["initial"]:
            cfg["initial"]["params"] = copy.deepcopy(raw["initial"]["params"])

        dom = cfg["domain"]
        dim = dom.get("dim")
        if dim not in (1, 2):
            raise ScenarioError("domain.dim", f"must be 1 or 2, got {dim!r}")
        for key in ("lengths", "cells"):
            v = dom.get(key)
            if not isinstance(v, list):
                dom[key] = v = [v] * dim
            if len(v) != dim:
                raise ScenarioError(f"domain.{key}", f"needs {dim} entries")
        if any(not isinstance(x, (int, float)) or not x > 0 for x in dom["lengths"]):
            raise ScenarioError("domain.lengths", "must be positive numbers")
        if any(not isinstance(x, int) or isinstance(x, bool) or x < 1 for x in dom["cells"]):
            raise ScenarioError("domain.cells", "must be positive integers")

        tr = cfg["truncation"]
        if "n" not in tr:
            raise ScenarioError("truncation.n", "missing key")
        n = tr["n"]
        if not isinstance(n, int) or isinstance(n, bool) or n < 2:
            raise ScenarioError("truncation.n", f"must be an integer >= 2, got {n!r}")
        try:
            TruncationMode.parse(tr.get("mode"))
        except ValueError as exc:
            raise ScenarioError("truncation.mode", str(exc).split(": ", 1)[-1]) from None

        try:
            ks = KernelSet.from_dict(cfg["kernels"])
            ks.tables(n)
        except KeyError as exc:
            raise ScenarioError(str(exc.args[0]), "missing key") from None
        except (ValueError, TypeError) as exc:
            raise ScenarioError("kernels", str(exc)) from None

        dif = cfg["diffusion"]
        try:
            diffusion_coefficients(_diffusion_spec(dif), n)
        except KeyError as exc:
            raise ScenarioError(f"diffusion.params.{exc.args[0]}", "missing key") from None
        except (ValueError, TypeError) as exc:
            raise ScenarioError("diffusion", str(exc)) from None

        ini = cfg["initial"]
        if ini.get("type") not in ("monodisperse", "geometric", "per_species"):
            raise ScenarioError("initial.type", f"unknown family {ini.get('type')!r}")
        if ini.get("density") not in ("uniform", "gaussian_bump"):
            raise ScenarioError("initial.density", f"unknown profile {ini.get('density')!r}")
        if ini["type"] == "per_species" and "values" not in ini["params"]:
            raise ScenarioError("initial.params.values", "missing key")

        tm = cfg["time"]
        if "T" not in tm:
            raise ScenarioError("time.T", "missing key")
        _number(tm, "T", "time", nonneg=True)
        for key in ("dt_init", "dt_max", "rtol", "atol"):
            _number(tm, key, "time", positive=True)
        if tm["scheme"] not in SCHEMES:
            raise ScenarioError("time.scheme", f"must be one of {SCHEMES}")

        out = cfg["outputs"]
        orders = out.get("moment_orders")
        if not isinstance(orders, list) or any(
                isinstance(k, bool) or not isinstance(k, (int, float)) or k < 0 for k in orders):
            raise ScenarioError("outputs.moment_orders", "must be a list of nonnegative numbers")
        if "sample_times" in out:
            st = out["sample_times"]
            if not isinstance(st, list) or any(not isinstance(x, (int, float)) for x in st):
                raise ScenarioError("outputs.sample_times", "must be a list of numbers")
            if any(x < 0 or x > tm["T"] for x in st):
                raise ScenarioError("outputs.sample_times", "must lie in [0, T]")
        else:
            s = out.get("samples")
            if not isinstance(s, int) or s < 1:
                raise ScenarioError("outputs.samples", "must be a positive integer")
        if any(not isinstance(x, (int, float)) or x < 0 or x > tm["T"]
               for x in out.get("snapshot_times", [])):
            raise ScenarioError("outputs.snapshot_times", "must be numbers in [0, T]")
        if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
            raise ScenarioError("seed", "must be an integer")
        return cfg

    # -- accessors ------------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return copy.deepcopy(self._cfg)

    @property
    def n(self) -> int:
        return int(self._cfg["truncation"]["n"])

    @property
    def T(self) -> float:
        return float(self._cfg["time"]["T"])

    @property
    def mode(self) -> TruncationMode:
        return TruncationMode.parse(self._cfg["truncation"]["mode"])

    @property
    def seed(self) -> int:
        return int(self._cfg["seed"])

    @property
    def keep_states(self) -> bool:
        return bool(self._cfg["outputs"].get("keep_states", False))

    @property
    def audit_params(self) -> dict[str, Any]:
        return dict(self._cfg["outputs"].get("audit", {}))

    def grid(self) -> Grid:
        d = self._cfg["domain"]
        return Grid(d["dim"], tuple(d["lengths"]), tuple(d["cells"]))

    def kernels(self) -> KernelSet:
        return KernelSet.from_dict(self._cfg["kernels"])

    def sample_times(self) -> np.ndarray:
        out = self._cfg["outputs"]
        if "sample_times" in out:
            return np.unique(np.concatenate([[0.0], np.asarray(out["sample_times"], float), [self.T]]))
        if self.T == 0:
            return np.array([0.0])
        return np.linspace(0.0, self.T, int(out["samples"]))

    def moment_orders(self) -> list[float]:
        orders = {float(k) for k in self._cfg["outputs"]["moment_orders"]} | {0.0, 1.0}
        ks = self.kernels()
        if isinstance(ks.coagulation, PowerLawCoagulation):
            # orders the dissipation estimate refers to, so the series can be audited
            l = float(self.audit_params.get("l", 2.0))
            c, f = ks.coagulation, ks.fragmentation
            gamma = getattr(f, "gamma", None)
            orders |= {l, c.alpha + 1, c.beta + 1, c.alpha + l - 1, c.beta + l - 1}
            if gamma is not None:
                orders.add(gamma + l - 1)
        return sorted(k for k in orders if k >= 0)

    def initial_state(self) -> TruncatedState:
        return initial_state(self.grid(), self.n, self._cfg["initial"], self.seed)

    def build(self) -> ScenarioParts:
        tm = self._cfg["time"]
        d, a, b = diffusion_coefficients(_diffusion_spec(self._cfg["diffusion"]), self.n)
        stepper = StepperConfig(rtol=tm["rtol"], atol=tm["atol"], dt_init=tm["dt_init"],
                                dt_max=tm["dt_max"], scheme=tm["scheme"])
        snaps = [float(s) for s in self._cfg["outputs"].get("snapshot_times", [])]
        return ScenarioParts(self.initial_state(), self.kernels(), d, (a, b), self.mode,
                             stepper, self.sample_times(), snaps, self.moment_orders())


def _diffusion_spec(block: dict) -> dict:
    spec = {"type": block.get("type", "constant")}
    spec.update(block.get("params", {}))
    return spec


def density_profile(grid: Grid, density: str, params: dict, rng: np.random.Generator) -> np.ndarray:
    """Mass density ``rho(x)`` at cell centres.

    ``uniform``: ``mass``. ``gaussian_bump``: ``base + amplitude *
    exp(-|x - center|^2 / (2 width^2))``. A positive ``noise`` multiplies
    the profile by ``1 + noise * U(-1, 1)`` per cell.
    """
    if density == "uniform":
        rho = np.full(grid.shape, float(params.get("mass", 1.0)))
    else:
        base = float(params.get("base", 0.5))
        amp = float(params.get("amplitude", 1.0))
        width = float(params.get("width", 0.1))
        center = params.get("center", [L / 2 for L in grid.lengths])
        center = center if isinstance(center, list) else [center]
        r2 = np.zeros(grid.shape)
        for x, x0 in zip(grid.mesh(), center):
            r2 = r2 + (x - x0) ** 2
        rho = base + amp * np.exp(-r2 / (2 * width**2))
    noise = float(params.get("noise", 0.0))
    if noise:
        rho = rho * (1 + noise * rng.uniform(-1, 1, grid.shape))
    if np.any(rho < 0):
        raise ScenarioError("initial.params", "density must be nonnegative")
    return rho


def initial_state(grid: Grid, n: int, block: dict, seed: int = 0) -> TruncatedState:
    """Initial concentrations from an ``initial`` block.

    ``monodisperse``: ``c_1 = rho``. ``geometric``: ``c_i = rho 2^-i / 2``
    (mass ``rho`` summed over all sizes). ``per_species``: ``c_i = v_i rho``
    with ``v`` from ``params.values``, zero beyond its length.
    """
    rng = np.random.default_rng(seed)
    params = block.get("params", {})
    rho = density_profile(grid, block.get("density", "uniform"), params, rng)
    kind = block.get("type", "monodisperse")
    w = np.zeros(n)
    if kind == "monodisperse":
        w[0] = 1.0
    elif kind == "geometric":
        w = 0.5 * 2.0 ** -np.arange(1, n + 1, dtype=float)
    else:
        v = np.asarray(params["values"], dtype=float)
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ScenarioError("initial.params.values", "must be finite and nonnegative")
        m = min(n, v.size)
        w[:m] = v[:m]
    c = w.reshape((-1,) + (1,) * grid.dim) * rho[None]
    return TruncatedState(n, grid, c, 0.0)
