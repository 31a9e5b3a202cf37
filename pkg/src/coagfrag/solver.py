"""Time integration of the truncated reaction-diffusion system.

One outer step is a Strang splitting: half a backward-Euler diffusion
step, a full reaction step integrated adaptively cell by cell, and a second
diffusion half step. The reaction ODE is advanced with the Dormand-Prince
5(4) pair. When fragmentation is stiff the ``"split"`` scheme removes it
from the explicit stages: the linear fragmentation flow is applied exactly
through its matrix exponential on either side of the explicit coagulation
integration.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.linalg import expm

from .grid import Grid, diffuse, integrate
from .kernels import KernelSet
from .reaction import ReactionOperator, TruncatedState, TruncationMode

log = logging.getLogger(__name__)

SCHEMES = ("explicit", "split")


class StiffnessError(RuntimeError):
    """The adaptive reaction step fell below the step-size floor."""

    def __init__(self, message: str, **payload: Any):
        super().__init__(message)
        self.payload = payload


@dataclass
class StepperConfig:
    rtol: float = 1e-8
    atol: float = 1e-12
    dt_init: float = 1e-3
    dt_max: float = 1e-2
    atol_neg: float = 1e-13
    safety: float = 0.9
    scheme: str = "explicit"

    def __post_init__(self):
        for name in ("rtol", "atol", "dt_init", "dt_max", "atol_neg", "safety"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"time.{name} must be positive, got {v}")
        if not self.safety < 1:
            raise ValueError("time.safety must be below 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"time.scheme must be one of {SCHEMES}, got {self.scheme!r}")


def diffusion_coefficients(spec, n: int) -> tuple[np.ndarray, float, float]:
    """Resolve a diffusion specification into ``(d_1..d_n, min d, max d)``.

    Accepted forms: a positive number, ``{"type": "constant", "d": ...}``,
    ``{"type": "convergent", "d_inf": ..., "d_1": ...}`` giving
    ``d_i = d_inf + (d_1 - d_inf)/i``, or ``{"type": "list", "values": [...],
    "tail": ...}``.
    """
    if isinstance(spec, (int, float)):
        spec = {"type": "constant", "d": spec}
    kind = spec.get("type", "constant")
    if kind == "constant":
        d = np.full(n, float(spec.get("d", spec.get("value", 1.0))))
    elif kind == "convergent":
        d_inf, d_1 = float(spec["d_inf"]), float(spec["d_1"])
        d = d_inf + (d_1 - d_inf) / np.arange(1, n + 1)
    elif kind == "list":
        vals = np.asarray(spec["values"], dtype=float)
        tail = float(spec.get("tail", vals[-1] if vals.size else np.nan))
        d = np.full(n, tail)
        m = min(n, vals.size)
        d[:m] = vals[:m]
    else:
        raise ValueError(f"diffusion.type: unknown specification {kind!r}")
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise ValueError("diffusion coefficients must be positive")
    return d, float(d.min()), float(d.max())


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = _DP_B - np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    negative_rejections: int = 0
    outer_steps: int = 0
    clamped_mass: float = 0.0
    min_dt: float = np.inf

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "rejected": self.rejected,
            "negative_rejections": self.negative_rejections,
            "outer_steps": self.outer_steps,
            "clamped_mass": self.clamped_mass,
            "min_dt": None if not np.isfinite(self.min_dt) else self.min_dt,
        }


class ReactionIntegrator:
    """Adaptive integrator for the pure-reaction ODE ``dc/dt = Q(c) + F(c)`` in every cell."""

    def __init__(self, op: ReactionOperator, grid: Grid, cfg: StepperConfig,
                 t_final: float = 1.0):
        self.op = op
        self.grid = grid
        self.cfg = cfg
        self.dt_floor = 1e-14 * max(t_final, 1e-300)
        self.h = cfg.dt_init
        self.stats = StepStats()
        self._sizes = op.sizes.reshape((-1,) + (1,) * grid.dim)
        self._prop_cache: OrderedDict[float, np.ndarray] = OrderedDict()
        explicit = cfg.scheme == "explicit"
        self._f = op.rhs if explicit else op.coag_rhs
        self._zero_explicit = (not explicit) and not np.any(op.A_loss) and not np.any(op.A)

    # -- fragmentation propagator (split scheme) ------------------------------

    def frag_propagator(self, h: float) -> np.ndarray:
        """``exp(h F)`` with round-off negatives removed and column masses restored."""
        key = float(h)
        P = self._prop_cache.get(key)
        if P is not None:
            self._prop_cache.move_to_end(key)
            return P
        P = expm(h * self.op.frag_matrix)
        P[P < 0] = 0.0
        s = self.op.sizes
        colmass = s @ P
        drift = np.abs(colmass - s) / s
        if np.all(drift < 1e-10):
            # put the residual on the monomer row, whose weight is 1
            P[0] += s - colmass
            P[0] = np.maximum(P[0], 0.0)
        self._prop_cache[key] = P
        if len(self._prop_cache) > 8:
            self._prop_cache.popitem(last=False)
        return P

    def _apply_frag(self, c: np.ndarray, h: float) -> np.ndarray:
        if not np.any(self.op.B):
            return c
        P = self.frag_propagator(h)
        return (P @ c.reshape(self.op.n, -1)).reshape(c.shape)

    # -- explicit adaptive integration ----------------------------------------

    def _neg_tol(self, c: np.ndarray) -> np.ndarray:
        rho1 = np.sum(self._sizes * np.abs(c), axis=0)
        return self.cfg.atol_neg * np.maximum(rho1, 1e-300)

    def _explicit(self, c: np.ndarray, T: float, t0: float = 0.0) -> np.ndarray:
        cfg = self.cfg
        t = 0.0
        y = c
        k1 = None
        h = min(self.h, T)
        while t < T:
            last = False
            if t + h >= T * (1 - 1e-14) or t + h >= T:
                h = T - t
                last = True
            if h < self.dt_floor and not last:
                raise StiffnessError(
                    f"reaction step size {h:.3e} fell below the floor {self.dt_floor:.3e}",
                    time=t0 + t, dt=h, dt_floor=self.dt_floor,
                    accepted=self.stats.accepted, rejected=self.stats.rejected,
                )
            if k1 is None:
                k1 = self._f(y)
            ks = [k1]
            for s in range(1, 7):
                acc = y.copy()
                for a, k in zip(_DP_A[s], ks):
                    if a:
                        acc += (h * a) * k
                ks.append(self._f(acc) if s < 6 else None)
                if s == 6:
                    y_new = acc
                    ks[6] = self._f(y_new)
            err_vec = h * sum(e * k for e, k in zip(_DP_E, ks) if e)
            scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
            finite = np.all(np.isfinite(y_new))
            err = float(np.max(np.abs(err_vec) / scale)) if finite else np.inf

            if err <= 1.0:
                negtol = self._neg_tol(y)
                if np.any(y_new < -negtol):
                    self.stats.rejected += 1
                    self.stats.negative_rejections += 1
                    h *= 0.5
                    continue
                neg = y_new < 0
                if np.any(neg):
                    removed = np.sum(self._sizes * np.where(neg, -y_new, 0.0), axis=0)
                    self.stats.clamped_mass += float(integrate(removed, self.grid))
                    # zero the negatives, then rescale the cell so its mass is unchanged
                    m_all = np.sum(self._sizes * y_new, axis=0)
                    y_new = np.where(neg, 0.0, y_new)
                    m_pos = m_all + removed
                    y_new = y_new * np.where(m_pos > 0, m_all / np.where(m_pos > 0, m_pos, 1.0), 1.0)
                    k1 = None
                else:
                    k1 = ks[6]
                t = T if last else t + h
                y = y_new
                self.stats.accepted += 1
                self.stats.min_dt = min(self.stats.min_dt, h)
                fac = 5.0 if err == 0 else min(5.0, max(0.2, cfg.safety * err ** -0.2))
                h_next = h * fac
                if not last:
                    self.h = h_next
                h = h_next
            else:
                self.stats.rejected += 1
                fac = 0.2 if not np.isfinite(err) else max(0.2, cfg.safety * err ** -0.2)
                h *= min(fac, 0.5)
        return y

    def advance(self, c: np.ndarray, dt: float, t0: float = 0.0) -> np.ndarray:
        """Integrate the reaction ODE over ``dt`` starting from ``c``."""
        if not dt > 0:
            raise ValueError("reaction step needs dt > 0")
        if self.cfg.scheme == "explicit":
            return self._explicit(c, dt, t0)
        c = self._apply_frag(c, 0.5 * dt)
        if not self._zero_explicit:
            c = self._explicit(c, dt, t0)
        return self._apply_frag(c, 0.5 * dt)


def reaction_step(state: TruncatedState, kernels: KernelSet, mode, dt: float,
                  cfg: StepperConfig | None = None, t_final: float | None = None,
                  integrator: ReactionIntegrator | None = None) -> TruncatedState:
    """Advance the pure-reaction part over ``dt``; returns a new state."""
    cfg = cfg or StepperConfig()
    if integrator is None:
        op = ReactionOperator(kernels, state.n, TruncationMode.parse(mode))
        integrator = ReactionIntegrator(op, state.grid, cfg, t_final or max(dt, state.time + dt))
    c = integrator.advance(state.c, dt, state.time)
    return TruncatedState(state.n, state.grid, c, state.time + dt)


def step(state: TruncatedState, kernels: KernelSet, d, mode, dt: float,
         cfg: StepperConfig | None = None, integrator: ReactionIntegrator | None = None,
         t_final: float | None = None) -> TruncatedState:
    """One Strang step: diffusion(dt/2), reaction(dt), diffusion(dt/2)."""
    cfg = cfg or StepperConfig()
    d = np.broadcast_to(np.asarray(d, dtype=float), (state.n,))
    if integrator is None:
        op = ReactionOperator(kernels, state.n, TruncationMode.parse(mode))
        integrator = ReactionIntegrator(op, state.grid, cfg, t_final or max(dt, state.time + dt))
    c = diffuse(state.c, state.grid, d, 0.5 * dt)
    c = integrator.advance(c, dt, state.time)
    c = diffuse(c, state.grid, d, 0.5 * dt)
    integrator.stats.outer_steps += 1
    return TruncatedState(state.n, state.grid, c, state.time + dt)


# ----------------------------------------------------------------------------
# run driver
# ----------------------------------------------------------------------------

@dataclass
class RunResult:
    grid: Grid
    n: int
    mode: TruncationMode
    d: np.ndarray
    times: np.ndarray
    series: dict[str, np.ndarray]
    moments: dict[float, np.ndarray]
    initial_mass: float
    stats: StepStats
    states: list[np.ndarray] | None = None
    snapshots: dict[float, np.ndarray] = field(default_factory=dict)
    config: dict | None = None

    @property
    def total_mass(self) -> np.ndarray:
        return self.series["total_mass"]

    @property
    def gel_fraction(self) -> np.ndarray:
        return self.series["gel_fraction"]

    def moment_integral(self, k: float) -> np.ndarray:
        """``int rho_k`` at the sample times, from the record or the stored states."""
        k = float(k)
        for key, v in self.moments.items():
            if abs(key - k) < 1e-12:
                return v
        if self.states is None:
            raise KeyError(f"moment order {k} was not recorded and states were not kept")
        w = np.arange(1, self.n + 1, dtype=float) ** k
        vals = np.array([integrate(np.tensordot(w, c, axes=(0, 0)), self.grid)
                         for c in self.states])
        self.moments[k] = vals
        return vals

    def state_at(self, index: int) -> TruncatedState:
        if self.states is None:
            raise KeyError("states were not kept for this run")
        return TruncatedState(self.n, self.grid, self.states[index], float(self.times[index]))


def _sample_record(c: np.ndarray, grid: Grid, sizes: np.ndarray, d: np.ndarray,
                   orders: Sequence[float]) -> dict[str, float]:
    n = sizes.size
    sh = (-1,) + (1,) * grid.dim
    rho1 = np.tensordot(sizes, c, axes=(0, 0))
    total = float(integrate(rho1, grid))
    tail = sizes > n / 2
    tail_mass = float(integrate(np.tensordot(sizes[tail], c[tail], axes=(0, 0)), grid))
    num = np.tensordot(sizes * d, c, axes=(0, 0))
    m1 = np.where(rho1 > 1e-300, num / np.where(rho1 > 1e-300, rho1, 1.0), d[0])
    rec = {
        "total_mass": total,
        "tail_fraction": tail_mass / total if total > 0 else 0.0,
        "M1_min": float(m1.min()),
        "M1_max": float(m1.max()),
        "min_concentration": float(c.min()),
    }
    for k in orders:
        w = sizes**k
        rec[f"rho_{k}"] = float(integrate(np.tensordot(w, c, axes=(0, 0)), grid))
    return rec


def simulate(state: TruncatedState, kernels: KernelSet, d, mode, T: float,
             cfg: StepperConfig | None = None, sample_times: Sequence[float] | None = None,
             snapshot_times: Sequence[float] = (), moment_orders: Sequence[float] = (0, 1, 2),
             keep_states: bool = True, coag_path: str = "auto") -> RunResult:
    """Integrate ``state`` to time ``T`` and record diagnostics at the sample times.

    Outer steps are shortened so that every sample and snapshot time is hit
    exactly; recorded values are therefore step states, not interpolants.
    """
    cfg = cfg or StepperConfig()
    mode = TruncationMode.parse(mode)
    d = np.broadcast_to(np.asarray(d, dtype=float), (state.n,)).copy()
    if T < 0:
        raise ValueError("final time must be nonnegative")
    if sample_times is None:
        sample_times = np.linspace(0.0, T, 11) if T > 0 else [0.0]
    samples = np.unique(np.clip(np.asarray(sample_times, dtype=float), 0.0, T))
    if samples[0] != 0.0:
        samples = np.concatenate([[0.0], samples])
    snaps = sorted({float(s) for s in snapshot_times if 0 <= s <= T})
    stops = np.unique(np.concatenate([samples, snaps, [T]])) if T > 0 else np.array([0.0])

    orders = sorted({0.0, 1.0, *map(float, moment_orders)})
    sizes = np.arange(1, state.n + 1, dtype=float)
    op = ReactionOperator(kernels, state.n, mode, coag_path)
    integ = ReactionIntegrator(op, state.grid, cfg, T if T > 0 else 1.0)

    records: list[dict[str, float]] = []
    states: list[np.ndarray] = []
    snapshots: dict[float, np.ndarray] = {}
    initial_mass = float(integrate(np.tensordot(sizes, state.c, axes=(0, 0)), state.grid))
    sample_set = set(samples.tolist())
    snap_set = set(snaps)

    def record(s: TruncatedState, dt_used: float):
        rec = _sample_record(s.c, s.grid, sizes, d, orders)
        rec["t"] = s.time
        rec["dt"] = dt_used
        rec["gel_fraction"] = 1.0 - rec["total_mass"] / initial_mass if initial_mass > 0 else 0.0
        rec["clamped_mass_cum"] = integ.stats.clamped_mass
        records.append(rec)
        if keep_states:
            states.append(s.c.copy())

    cur = state.copy()
    cur.time = 0.0
    if 0.0 in snap_set:
        snapshots[0.0] = cur.c.copy()
    record(cur, 0.0)
    last_dt = 0.0
    for target in stops[1:]:
        while cur.time < target:
            dt = min(cfg.dt_max, target - cur.time)
            # avoid a sliver step right before the target
            if target - (cur.time + dt) < 1e-9 * cfg.dt_max:
                dt = target - cur.time
            nxt = step(cur, kernels, d, mode, dt, cfg, integ)
            if target - nxt.time < 1e-12 * max(1.0, target):
                nxt.time = float(target)
            cur = nxt
            last_dt = dt
        t = float(target)
        if t in sample_set:
            record(cur, last_dt)
        if t in snap_set:
            snapshots[t] = cur.c.copy()

    keys = records[0].keys()
    series = {k: np.array([r[k] for r in records]) for k in keys}
    moments = {k: series.pop(f"rho_{k}") for k in orders}
    times = series.pop("t")
    return RunResult(state.grid, state.n, mode, d, times, series, moments, initial_mass,
                     integ.stats, states if keep_states else None, snapshots)


def run(cfg, keep_states: bool | None = None) -> RunResult:
    """Run a :class:`~coagfrag.scenario.ScenarioConfig` end to end."""
    parts = cfg.build()
    keep = cfg.keep_states if keep_states is None else keep_states
    res = simulate(parts.state, parts.kernels, parts.d, parts.mode, cfg.T, parts.stepper,
                   parts.sample_times, parts.snapshot_times, parts.moment_orders,
                   keep_states=keep)
    res.config = cfg.to_dict()
    return res
