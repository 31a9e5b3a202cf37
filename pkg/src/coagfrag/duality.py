"""Empirical maximal-regularity ratios for the Neumann heat equation.

For ``dv/dt - m Lap v = f`` with ``v(0) = 0`` the ratio

    (||dv/dt||_q^q + m^q ||Lap v||_q^q)^(1/q) / ||f||_q

is measured on a backward-Euler discretisation in which the discrete time
derivative and Laplacian satisfy ``D v - m L v = f`` exactly at every step.
Maximising over random forcings gives a lower estimate of the best
constant ``K_{m,q}``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .grid import Grid, diffuse, integrate, laplacian, neumann_eigenvalue

N_MODES = 8
N_INTERVALS = 16


@dataclass(frozen=True)
class Forcing:
    """Band-limited forcing ``f(t, x) = amp * sum_k a[p(t), k] phi_k(x)``.

    ``phi_k`` are the lowest Neumann cosine modes of the grid and ``p(t)``
    the index of one of ``a.shape[0]`` equal time intervals.
    """

    coeffs: np.ndarray
    amplitude: float = 1.0
    time_scale: float = 1.0
    seed: int | None = None

    @classmethod
    def random(cls, seed, n_modes: int = N_MODES, n_intervals: int = N_INTERVALS) -> "Forcing":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((n_intervals, n_modes)),
                   seed=seed if isinstance(seed, int) else None)

    @classmethod
    def constant(cls, value: float = 1.0) -> "Forcing":
        return cls(np.array([[value]]))

    def to_dict(self) -> dict:
        return {"kind": "band_limited", "modes": int(self.coeffs.shape[1]),
                "intervals": int(self.coeffs.shape[0]), "amplitude": self.amplitude,
                "seed": self.seed}


def neumann_modes(grid: Grid, count: int) -> np.ndarray:
    """The ``count`` lowest discrete Neumann eigenmodes, shape ``(count,) + grid.shape``."""
    if grid.dim == 1:
        idx = [(k,) for k in range(count)]
    else:
        lam = []
        Nx, Ny = grid.cells
        hx, hy = grid.spacing
        for kx in range(min(Nx, count)):
            for ky in range(min(Ny, count)):
                lam.append((-(neumann_eigenvalue(kx, Nx, hx) + neumann_eigenvalue(ky, Ny, hy)), kx, ky))
        lam.sort()
        idx = [(kx, ky) for _, kx, ky in lam[:count]]
    out = np.ones((len(idx),) + grid.shape)
    for r, ks in enumerate(idx):
        for ax, (k, x, L) in enumerate(zip(ks, grid.centers, grid.lengths)):
            shape = [1] * grid.dim
            shape[ax] = -1
            out[r] = out[r] * np.cos(k * np.pi * x / L).reshape(shape)
    return out


@dataclass(frozen=True)
class MRProbe:
    m: float
    q: float
    grid: Grid
    T: float
    forcing: Forcing
    steps: int = 256

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("m must be positive")
        if not self.q > 1:
            raise ValueError("q must exceed 1")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.steps < 1:
            raise ValueError("need at least one time step")

    @property
    def conjugate(self) -> float:
        """``q/(q-1)``."""
        return self.q / (self.q - 1.0)

    def rescaled(self, lam: float) -> "MRProbe":
        """Probe with ``m -> lam m``, ``T -> T/lam`` and forcing ``lam f(lam t)``.

        The continuous ratio is unchanged, and with the same number of
        steps the discrete iterates coincide as well.
        """
        f = replace(self.forcing, amplitude=self.forcing.amplitude * lam)
        return replace(self, m=self.m * lam, T=self.T / lam, forcing=f)


def _forcing_fields(probes: list[MRProbe]) -> np.ndarray:
    """Forcing at every step for a batch of probes sharing grid, T and steps.

    Returns shape ``(steps, batch) + grid.shape``.
    """
    p0 = probes[0]
    steps = p0.steps
    # each backward-Euler step uses the interval containing its midpoint
    mid = (np.arange(steps) + 0.5) / steps
    out = np.empty((steps, len(probes)) + p0.grid.shape)
    mode_cache: dict[int, np.ndarray] = {}
    for b, pr in enumerate(probes):
        a = np.asarray(pr.forcing.coeffs, dtype=float)
        nm = a.shape[1]
        if nm not in mode_cache:
            mode_cache[nm] = neumann_modes(pr.grid, nm)
        per = np.minimum((mid * a.shape[0]).astype(int), a.shape[0] - 1)
        fields = np.tensordot(a, mode_cache[nm], axes=(1, 0))
        out[:, b] = pr.forcing.amplitude * fields[per]
    return out


def heat_mr_ratios(probes: list[MRProbe]) -> np.ndarray:
    """Ratios for a batch of probes that share ``grid``, ``T``, ``steps`` and ``m``."""
    p0 = probes[0]
    for p in probes[1:]:
        if (p.grid, p.T, p.steps, p.m) != (p0.grid, p0.T, p0.steps, p0.m):
            raise ValueError("batched probes must share grid, T, steps and m")
    q = np.array([p.q for p in probes])
    grid, m = p0.grid, p0.m
    dt = p0.T / p0.steps
    F = _forcing_fields(probes)
    B = len(probes)
    sq = (B,) + (1,) * grid.dim
    v = np.zeros((B,) + grid.shape)
    acc_t = np.zeros(B)
    acc_l = np.zeros(B)
    acc_f = np.zeros(B)
    qq = q.reshape(sq)
    for k in range(p0.steps):
        f = F[k]
        v_new = diffuse(v + dt * f, grid, m, dt)
        D = (v_new - v) / dt
        L = m * laplacian(v_new, grid)
        acc_t += dt * integrate(np.abs(D) ** qq, grid)
        acc_l += dt * integrate(np.abs(L) ** qq, grid)
        acc_f += dt * integrate(np.abs(f) ** qq, grid)
        v = v_new
    if np.any(acc_f <= 0):
        raise ValueError("forcing is identically zero")
    return ((acc_t + acc_l) / acc_f) ** (1.0 / q)


def heat_mr_ratio(probe: MRProbe) -> float:
    return float(heat_mr_ratios([probe])[0])


@dataclass
class KmqEstimate:
    m: float
    q: float
    trials: int
    seed: int
    estimate: float
    ratios: list[float]
    grid: Grid
    T: float
    steps: int

    @property
    def running_max(self) -> np.ndarray:
        return np.maximum.accumulate(np.asarray(self.ratios))

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "q": self.q,
            "trials": self.trials,
            "seed": self.seed,
            "estimate": self.estimate,
            "kind": "lower_bound",
            "grid": self.grid.to_dict(),
            "T": self.T,
            "steps": self.steps,
            "probes": [{"index": i, "ratio": r} for i, r in enumerate(self.ratios)],
        }


def probe_seeds(seed: int, trials: int) -> list[int]:
    """Per-trial seeds; trial ``k`` gets the same seed whatever ``trials`` is."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(trials)]


def estimate_Kmq(m: float, q: float, trials: int, seed: int, grid: Grid, T: float = 1.0,
                 steps: int = 256, batch: int = 128) -> KmqEstimate:
    """Largest ratio over ``trials`` random band-limited forcings.

    This is a lower estimate of ``K_{m,q}``: a supremum cannot be certified
    by sampling.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    seeds = probe_seeds(seed, trials)
    probes = [MRProbe(m, q, grid, T, Forcing.random(s), steps) for s in seeds]
    ratios: list[float] = []
    for k in range(0, trials, batch):
        ratios.extend(heat_mr_ratios(probes[k:k + batch]).tolist())
    return KmqEstimate(m, q, trials, seed, float(max(ratios)), ratios, grid, T, steps)


@dataclass
class ClosenessReport:
    a: float
    b: float
    p: float
    K_estimate: float
    factor: float
    value: float
    margin: float
    passed: bool
    advisory: bool = True

    def to_dict(self) -> dict:
        return {"check": "closeness", "params": {"a": self.a, "b": self.b, "p": self.p,
                                                 "K_estimate": self.K_estimate,
                                                 "factor": self.factor, "advisory": self.advisory},
                "margin": self.margin, "pass": self.passed}


def closeness_check(a: float, b: float, p: float, K_estimate: float) -> ClosenessReport:
    """``(b - a)/(b + a) * K < 1`` with ``K`` an estimate of ``K_{(a+b)/2, p'}``.

    Advisory only: ``K_estimate`` is a lower estimate, so a pass does not
    certify the condition.
    """
    if not (0 < a <= b):
        raise ValueError("need 0 < a <= b")
    if not p > 1:
        raise ValueError("p must exceed 1")
    factor = (b - a) / (b + a)
    value = factor * K_estimate
    return ClosenessReport(a, b, p, float(K_estimate), factor, value, 1.0 - value, value < 1.0)


@dataclass
class StabilityReport:
    p: float
    levels: list[int]
    norms: list[float]
    initial_norm: float
    variation: float
    passed: bool
    threshold: float = 0.05

    def to_dict(self) -> dict:
        return {"p": self.p, "levels": self.levels, "norms": self.norms,
                "initial_norm": self.initial_norm, "variation": self.variation,
                "threshold": self.threshold, "pass": self.passed}


def mass_lp_stability(runs, p: float, threshold: float = 0.05) -> StabilityReport:
    """``||rho_1^n||_{L^p(Omega_T)}`` per level and its relative change over the last two levels."""
    from .diagnostics import lp_spacetime_norm, moment_field
    from .reaction import TruncationMode

    runs = sorted(runs, key=lambda r: r.n)
    if len(runs) < 2:
        raise ValueError("need at least two truncation levels")
    base = runs[0]
    for r in runs:
        if r.mode is not TruncationMode.CONSERVATIVE:
            raise ValueError("mass_lp_stability needs conservative runs")
        if r.states is None:
            raise ValueError("runs must keep their sampled states")
        if r.grid != base.grid or r.times.shape != base.times.shape or np.any(r.times != base.times):
            raise ValueError("runs do not share a scenario")
    norms = [lp_spacetime_norm([moment_field(c, 1.0) for c in r.states], r.times, r.grid, p)
             for r in runs]
    rho_in = moment_field(base.states[0], 1.0)
    init = float(integrate(np.abs(rho_in) ** p, base.grid) ** (1.0 / p))
    var = abs(norms[-1] - norms[-2]) / max(abs(norms[-1]), 1e-300)
    return StabilityReport(p, [r.n for r in runs], norms, init, var, var < threshold, threshold)
