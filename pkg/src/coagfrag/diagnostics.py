"""Moments, norms, gelation detection and numerical audits of the moment estimates.

Most routines read a finished :class:`~coagfrag.solver.RunResult`; the
audits that need products of moment fields (rather than their integrals)
require the run to have kept its sampled states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import Grid, integrate
from .kernels import superadditivity_constant
from .reaction import TruncatedState, TruncationMode
from .report import AuditReport

RHO_FLOOR = 1e-300


def _powers(n: int, k: float) -> np.ndarray:
    # i^k = exp(k log i); exact for k = 0 and for i = 1
    i = np.arange(1, n + 1, dtype=float)
    return np.exp(k * np.log(i))


def moment_field(c: np.ndarray, k: float) -> np.ndarray:
    """``sum_i i^k c_i`` for a species-major array ``c``."""
    c = np.asarray(c, dtype=float)
    return np.tensordot(_powers(c.shape[0], k), c, axes=(0, 0))


def moment(s: TruncatedState, k: float) -> np.ndarray:
    """Per-cell moment ``rho_k = sum_i i^k c_i``."""
    if k < 0:
        raise ValueError("moment order must be nonnegative")
    return moment_field(s.c, k)


def _trapezoid(y: np.ndarray, t: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def lp_spacetime_norm(fields, times, grid: Grid, p: float) -> float:
    """``(int_0^T int_Omega |f|^p)^(1/p)``: midpoint in space, trapezoid in time.

    ``fields`` has one spatial field per sample time.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise ValueError("need at least two sample times")
    f = np.asarray(fields, dtype=float)
    if f.shape[0] != times.size:
        raise ValueError("one field per sample time expected")
    per_t = integrate(np.abs(f) ** p, grid)
    return _trapezoid(per_t, times) ** (1.0 / p)


def m_ratio(s: TruncatedState, k: float, d) -> np.ndarray:
    """``M_k = sum i^k d_i c_i / sum i^k c_i`` per cell.

    Empty cells (``rho_k < 1e-300``) report ``d_1``.
    """
    d = np.broadcast_to(np.asarray(d, dtype=float), (s.n,))
    w = _powers(s.n, k)
    den = np.tensordot(w, s.c, axes=(0, 0))
    num = np.tensordot(w * d, s.c, axes=(0, 0))
    ok = den >= RHO_FLOOR
    out = np.where(ok, num / np.where(ok, den, 1.0), d[0])
    if np.all(s.c >= 0):
        lo, hi = d.min(), d.max()
        tol = 1e-12 * hi
        if np.any(out[ok] < lo - tol) or np.any(out[ok] > hi + tol):
            raise AssertionError("M_k left the range of the diffusion coefficients")
    return out


@dataclass
class MomentSeries:
    """Space-integrated moments of a run at its sample times."""

    times: np.ndarray
    values: dict[float, np.ndarray]
    gel_fraction: np.ndarray
    tail_fraction: np.ndarray
    M1_min: np.ndarray
    M1_max: np.ndarray

    @property
    def orders(self) -> list[float]:
        return sorted(self.values)

    def __getitem__(self, k: float) -> np.ndarray:
        for key, v in self.values.items():
            if abs(key - k) < 1e-12:
                return v
        raise KeyError(f"moment order {k} not recorded")

    @classmethod
    def from_run(cls, run) -> "MomentSeries":
        s = run.series
        return cls(np.asarray(run.times), dict(run.moments), s["gel_fraction"],
                   s["tail_fraction"], s["M1_min"], s["M1_max"])


def weighted_moment_integral(run, k: float, gamma: float, m: int) -> float:
    """Time-trapezoid of ``t^(m-1) int rho_{k + m(gamma-1)}``."""
    if int(m) != m or m < 1:
        raise ValueError("m must be a positive integer")
    order = k + m * (gamma - 1)
    vals = run.moment_integral(order)
    t = np.asarray(run.times, dtype=float)
    return _trapezoid(t ** (m - 1) * vals, t)


# -- gelation -----------------------------------------------------------------

@dataclass
class GelReport:
    levels: list[int]
    times: np.ndarray
    gel_fraction: dict[int, np.ndarray]
    tail_fraction: dict[int, np.ndarray]
    mass: dict[int, np.ndarray]
    extrapolated: np.ndarray
    gel_time: float | None
    gel_time_uncertainty: float | None
    final_mass_extrapolated: float
    verdict: str
    delta: float

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "delta": self.delta,
            "verdict": self.verdict,
            "gel_time": self.gel_time,
            "gel_time_uncertainty": self.gel_time_uncertainty,
            "final_gel_fraction": {str(n): float(g[-1]) for n, g in self.gel_fraction.items()},
            "final_tail_fraction": {str(n): float(g[-1]) for n, g in self.tail_fraction.items()},
            "final_mass_extrapolated": self.final_mass_extrapolated,
            "times": self.times.tolist(),
            "extrapolated_gel_fraction": self.extrapolated.tolist(),
        }


def extrapolate(g1, g2, g3):
    """Refinement limit from three levels by an estimated geometric rate.

    With ``r = (g3 - g2)/(g2 - g1)`` in ``(0, 0.9]`` the limit is
    ``g3 + (g3 - g2) r/(1 - r)``; otherwise ``g3`` is returned.
    """
    g1, g2, g3 = (np.asarray(v, dtype=float) for v in (g1, g2, g3))
    d1, d2 = g2 - g1, g3 - g2
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(np.abs(d1) > 1e-14, d2 / d1, 0.0)
    ok = (r > 0) & (r <= 0.9)
    return np.where(ok, g3 + d2 * r / (1 - np.where(ok, r, 0.0)), g3)


def _first_crossing(t: np.ndarray, g: np.ndarray, delta: float) -> float | None:
    above = np.nonzero(g > delta)[0]
    if above.size == 0:
        return None
    k = int(above[0])
    if k == 0:
        return float(t[0])
    # linear interpolation between the bracketing samples
    g0, g1 = g[k - 1], g[k]
    return float(t[k - 1] + (delta - g0) * (t[k] - t[k - 1]) / (g1 - g0))


def _check_same_scenario(runs) -> None:
    base = runs[0]
    for r in runs[1:]:
        if r.grid != base.grid:
            raise ValueError("runs use different grids")
        if r.times.shape != base.times.shape or np.any(np.abs(r.times - base.times) > 1e-12):
            raise ValueError("runs use different sample times")
        if r.mode is not base.mode:
            raise ValueError("runs use different truncation modes")


def gel_report(runs: Sequence, delta: float = 0.05, tol: float = 1e-12) -> GelReport:
    """Gelation verdict from runs that differ only in the truncation size.

    The last three levels (sorted by ``n``) decide. ``tol`` is the absolute
    slack allowed when checking that the gel fraction decreases with ``n``.
    """
    runs = sorted(runs, key=lambda r: r.n)
    if len(runs) < 3:
        raise ValueError("gel_report needs at least three truncation levels")
    _check_same_scenario(runs)
    levels = [r.n for r in runs]
    if len(set(levels)) != len(levels):
        raise ValueError("truncation levels must differ")
    t = np.asarray(runs[0].times, dtype=float)
    g = {r.n: np.asarray(r.series["gel_fraction"]) for r in runs}
    tau = {r.n: np.asarray(r.series["tail_fraction"]) for r in runs}
    mass = {r.n: np.asarray(r.series["total_mass"]) for r in runs}
    n1, n2, n3 = levels[-3:]
    ext = np.clip(extrapolate(g[n1], g[n2], g[n3]), 0.0, 1.0)
    gT1, gT2, gT3 = g[n1][-1], g[n2][-1], g[n3][-1]

    if gT3 > delta and abs(gT3 - gT2) < abs(gT2 - gT1):
        verdict = "gelling"
    elif gT3 < delta and gT2 <= gT1 + tol and gT3 <= gT2 + tol:
        verdict = "non-gelling"
    else:
        verdict = "inconclusive"

    t_ext = _first_crossing(t, ext, delta)
    t_fine = _first_crossing(t, g[n3], delta)
    unc = abs(t_ext - t_fine) if t_ext is not None and t_fine is not None else None
    return GelReport(levels, t, g, tau, mass, ext, t_ext, unc, float(1.0 - ext[-1]),
                     verdict, delta)


# -- dissipation audit --------------------------------------------------------

def _fd_derivative(t: np.ndarray, f: np.ndarray):
    """First derivative of a sampled series with an error allowance per point.

    Interior points use the three-point centred formula with allowance
    ``2 dt^2 |f'''|``; the end points use one-sided differences with
    allowance ``2 dt |f''|``.
    """
    N = t.size
    der = np.empty(N)
    tol = np.empty(N)
    if N < 3:
        raise ValueError("need at least three samples for the derivative")
    h = np.diff(t)
    # second differences at interior points
    d2 = np.zeros(N)
    for k in range(1, N - 1):
        h0, h1 = h[k - 1], h[k]
        der[k] = (
            -h1 / (h0 * (h0 + h1)) * f[k - 1]
            + (h1 - h0) / (h0 * h1) * f[k]
            + h0 / (h1 * (h0 + h1)) * f[k + 1]
        )
        d2[k] = 2 * ((f[k + 1] - f[k]) / h1 - (f[k] - f[k - 1]) / h0) / (h0 + h1)
    d2[0], d2[-1] = d2[1], d2[-2]
    d3 = np.zeros(N)
    for k in range(1, N - 1):
        lo, hi = max(k - 1, 1), min(k + 1, N - 2)
        if hi > lo:
            d3[k] = max(abs(d2[hi] - d2[k]) / (t[hi] - t[k]) if hi > k else 0.0,
                        abs(d2[k] - d2[lo]) / (t[k] - t[lo]) if k > lo else 0.0)
    for k in range(1, N - 1):
        dt = max(h[k - 1], h[k])
        tol[k] = 2 * dt**2 * d3[k]
    der[0] = (f[1] - f[0]) / h[0]
    der[-1] = (f[-1] - f[-2]) / h[-1]
    tol[0] = 2 * h[0] * abs(d2[1])
    tol[-1] = 2 * h[-1] * abs(d2[-2])
    return der, tol


def dissipation_audit(run, l: float, alpha: float, beta: float, gamma: float,
                      C_Q: float, C_F: float, i_max: int = 2000) -> AuditReport:
    """Check the moment-dissipation inequality along a recorded run.

    At every sample time ``t``::

        d/dt int rho_l + C_F C_Fl int rho_{gamma+l-1}
            <= C_Q C_Ql int (rho_{alpha+l-1} rho_{beta+1} + rho_{alpha+1} rho_{beta+l-1})
               + C_F C_Fl int c_1

    with ``C_Fl = min(l-1, 1)`` and ``C_Ql`` the superadditivity constant.
    The derivative comes from finite differences of the recorded series.
    """
    if not l > 1:
        raise ValueError("dissipation audit needs l > 1")
    if run.states is None:
        raise ValueError("dissipation audit needs the sampled states of the run")
    t = np.asarray(run.times, dtype=float)
    C_Fl = min(l - 1.0, 1.0)
    C_Ql = superadditivity_constant(l, i_max) if C_Q else 0.0
    grid = run.grid
    lhs_l = np.empty(t.size)
    frag = np.empty(t.size)
    coag = np.empty(t.size)
    c1 = np.empty(t.size)
    for k, c in enumerate(run.states):
        lhs_l[k] = integrate(moment_field(c, l), grid)
        frag[k] = integrate(moment_field(c, gamma + l - 1), grid)
        prod = (moment_field(c, alpha + l - 1) * moment_field(c, beta + 1)
                + moment_field(c, alpha + 1) * moment_field(c, beta + l - 1))
        coag[k] = integrate(prod, grid)
        c1[k] = integrate(c[0], grid)
    der, fd_tol = _fd_derivative(t, lhs_l)
    lhs = der + C_F * C_Fl * frag
    rhs = C_Q * C_Ql * coag + C_F * C_Fl * c1
    rep = AuditReport()
    for k in range(t.size):
        slack = rhs[k] - lhs[k]
        tol = fd_tol[k] + 1e-10 * (abs(rhs[k]) + abs(lhs[k]) + abs(der[k]))
        rep.add("dissipation", slack, slack >= -tol, t=float(t[k]), l=l, tolerance=tol,
                lhs=float(lhs[k]), rhs=float(rhs[k]), C_Ql=C_Ql, C_Fl=C_Fl)
    return rep


# -- interpolation audit ------------------------------------------------------

def interpolation_exponent(s: float, gamma: float, l: float) -> float:
    """``theta`` with ``s = (1-theta) 1 + theta (gamma+l-1)``."""
    return (s - 1.0) / (gamma + l - 2.0)


def interpolation_admissible(alpha: float, beta: float, gamma: float, l: float) -> bool:
    """Whether every audited order lies in ``[.., gamma+l-1]``.

    ``l > 2 - (gamma - alpha)`` and ``l > 2 - (gamma - beta)`` place
    ``alpha+1`` and ``beta+1`` below the top order; ``alpha, beta <= gamma``
    does the same for ``alpha+l-1`` and ``beta+l-1``. Outside this range
    the exponent ``theta`` exceeds 1 and Hoelder gives no bound.
    """
    return (l > 2 - (gamma - alpha) and l > 2 - (gamma - beta)
            and alpha <= gamma and beta <= gamma)


def interpolation_audit(s: TruncatedState, alpha: float, beta: float, gamma: float,
                        l: float, rtol: float = 1e-12) -> AuditReport:
    """Check the Hoelder interpolation of intermediate moments between ``rho_1`` and ``rho_{gamma+l-1}``.

    Orders ``alpha+1``, ``beta+1``, ``alpha+l-1`` and ``beta+l-1`` are
    checked per cell. An order below 1 is bounded by ``rho_1`` directly.
    Requires :func:`interpolation_admissible`.
    """
    if not interpolation_admissible(alpha, beta, gamma, l):
        raise ValueError("need l > 2 - (gamma - alpha), l > 2 - (gamma - beta) and alpha, beta <= gamma")
    top = gamma + l - 1
    rho1 = moment(s, 1.0)
    rhotop = moment(s, top)
    live = rho1 > 0
    rep = AuditReport()
    for name, order in (("alpha+1", alpha + 1), ("beta+1", beta + 1),
                        ("alpha+l-1", alpha + l - 1), ("beta+l-1", beta + l - 1)):
        lhs = moment(s, order)
        if order < 1:
            rhs = rho1
            kind = "fallback"
            theta = 0.0
        else:
            theta = interpolation_exponent(order, gamma, l)
            rhs = rho1 ** (1 - theta) * rhotop**theta
            kind = "holder"
        if np.any(live):
            rel = (rhs[live] - lhs[live]) / np.maximum(np.abs(rhs[live]), RHO_FLOOR)
            margin = float(rel.min())
        else:
            margin = 0.0
        rep.add(f"interpolation_{name}", margin, margin >= -rtol, order=order,
                theta=theta, kind=kind, l=l, t=s.time)
    return rep


# -- elementary bounds --------------------------------------------------------

def bound_elem1(C: float, theta: float) -> float:
    """If ``xi <= C + xi^(1-theta)`` then ``xi <= max(1, (1+C)^(1/theta))``."""
    if not C > 0:
        raise ValueError("C must be positive")
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    return max(1.0, (1.0 + C) ** (1.0 / theta))


def bound_elem2(C1: float, C2: float, theta: float, m: int, T: float) -> float:
    """``2 (C2 + (2 C1)^(1/theta) T^(m+1)/(m+1)!)``.

    Bounds ``int_0^T t^m/m! f`` for nonnegative ``f`` with
    ``int t^m/m! f <= C1 int t^m/m! f^(1-theta) + C2``. Zero constants are
    accepted so that the degenerate limits can be evaluated.
    """
    if C1 < 0 or C2 < 0:
        raise ValueError("C1 and C2 must be nonnegative")
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    if int(m) != m or m < 1:
        raise ValueError("m must be a positive integer")
    if not T > 0:
        raise ValueError("T must be positive")
    return 2.0 * (C2 + (2.0 * C1) ** (1.0 / theta) * T ** (m + 1) / math.factorial(m + 1))


@dataclass
class SampleSummary:
    samples: int
    violations: int
    worst_ratio: float
    counterexamples: list = field(default_factory=list)


def sample_elem1(rng: np.random.Generator, samples: int = 100_000,
                 batch: int = 50_000) -> SampleSummary:
    """Draw ``(xi, C, theta)`` satisfying the hypothesis and compare ``xi`` with the bound.

    ``xi`` is drawn up to 1.5 times the bound so that a good share of the
    draws sits right below the largest admissible value.
    """
    done = viol = 0
    worst = 0.0
    bad = []
    while done < samples:
        C = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), batch))
        theta = rng.uniform(0.02, 0.98, batch)
        bound = np.maximum(1.0, (1.0 + C) ** (1.0 / theta))
        xi = rng.uniform(0.0, 1.5, batch) * bound
        ok = xi <= C + xi ** (1 - theta)
        xi, C, theta, bound = xi[ok], C[ok], theta[ok], bound[ok]
        take = min(samples - done, xi.size)
        xi, C, theta, bound = xi[:take], C[:take], theta[:take], bound[:take]
        r = xi / bound
        worst = max(worst, float(r.max(initial=0.0)))
        v = r > 1 + 1e-12
        viol += int(v.sum())
        bad.extend(zip(xi[v][:5].tolist(), C[v][:5].tolist(), theta[v][:5].tolist()))
        done += take
    return SampleSummary(done, viol, worst, bad)


def _weight_integral(a, b, m: int):
    # int_a^b t^m/m! dt
    return (b ** (m + 1) - a ** (m + 1)) / math.factorial(m + 1)


def sample_elem2(rng: np.random.Generator, trials: int = 10_000,
                 pieces: int = 16) -> SampleSummary:
    """Random step functions ``f`` checked against :func:`bound_elem2`.

    For each draw ``C2`` is set to the smallest value (plus a random slack)
    for which the hypothesis holds, which makes the comparison as tight as
    the draw allows.
    """
    viol = 0
    worst = 0.0
    bad = []
    for _ in range(trials):
        m = int(rng.integers(1, 5))
        T = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
        theta = float(rng.uniform(0.02, 0.98))
        C1 = float(np.exp(rng.uniform(np.log(1e-2), np.log(1e2))))
        edges = np.sort(np.concatenate([[0.0, T], rng.uniform(0, T, pieces - 1)]))
        f = np.exp(rng.normal(rng.uniform(-3, 6), rng.uniform(0.1, 4.0), pieces))
        f[rng.random(pieces) < 0.2] = 0.0
        w = _weight_integral(edges[:-1], edges[1:], m)
        If = float(np.sum(w * f))
        Ig = float(np.sum(w * f ** (1 - theta)))
        C2 = max(If - C1 * Ig, 0.0) + float(rng.uniform(0, 1)) * 1e-3 * (If + 1e-12)
        C2 = max(C2, 1e-300)
        assert If <= C1 * Ig + C2 * (1 + 1e-12)
        b = bound_elem2(C1, C2, theta, m, T)
        r = If / b
        worst = max(worst, r)
        if r > 1 + 1e-12:
            viol += 1
            if len(bad) < 5:
                bad.append((m, T, theta, C1, C2, If))
    return SampleSummary(trials, viol, worst, bad)


# -- refinement ---------------------------------------------------------------

@dataclass
class RefinementResult:
    mass_difference: float
    tail_term: float
    spacetime_l1_difference: float
    n: int
    k: float

    def to_dict(self) -> dict:
        return {"n": self.n, "k": self.k, "mass_difference": self.mass_difference,
                "tail_term": self.tail_term,
                "spacetime_l1_difference": self.spacetime_l1_difference}


def refinement_convergence(run_n, run_2n, k: float) -> RefinementResult:
    """Distance between the mass histories at ``n`` and ``2n`` with the matching tail term.

    ``mass_difference`` is ``sup_t |int rho_1^n - int rho_1^2n|``;
    ``tail_term`` is ``(||rho_k^n|| + ||rho_k^2n||)/i0^(k-1)`` at ``i0 = n/2``
    with space-time L1 norms. If both runs kept states the space-time L1
    distance of ``rho_1`` is reported too (otherwise nan).
    """
    if not k > 1:
        raise ValueError("tail term needs k > 1")
    _check_same_scenario([run_n, run_2n])
    t = np.asarray(run_n.times, dtype=float)
    d = float(np.max(np.abs(run_n.total_mass - run_2n.total_mass)))
    i0 = run_n.n / 2
    if t.size > 1:
        norms = _trapezoid(run_n.moment_integral(k), t) + _trapezoid(run_2n.moment_integral(k), t)
    else:
        norms = float(run_n.moment_integral(k)[0] + run_2n.moment_integral(k)[0])
    tail = norms / i0 ** (k - 1)
    l1 = float("nan")
    if run_n.states is not None and run_2n.states is not None and t.size > 1:
        per_t = [float(integrate(np.abs(moment_field(a, 1) - moment_field(b, 1)), run_n.grid))
                 for a, b in zip(run_n.states, run_2n.states)]
        l1 = _trapezoid(np.array(per_t), t)
    return RefinementResult(d, tail, l1, run_n.n, k)


def mass_is_nonincreasing(run, rtol: float = 1e-10) -> bool:
    m = np.asarray(run.total_mass)
    return bool(np.all(np.diff(m) <= rtol * abs(m[0])))


def conservation_drift(run) -> float:
    m = np.asarray(run.total_mass)
    return float(np.max(np.abs(m - run.initial_mass)) / run.initial_mass)


__all__ = [
    "moment", "moment_field", "lp_spacetime_norm", "m_ratio", "MomentSeries",
    "weighted_moment_integral", "GelReport", "gel_report", "extrapolate",
    "dissipation_audit", "interpolation_audit", "bound_elem1", "bound_elem2",
    "sample_elem1", "sample_elem2", "refinement_convergence", "RefinementResult",
    "mass_is_nonincreasing", "conservation_drift", "TruncationMode",
]
