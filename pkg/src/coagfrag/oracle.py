"""Reference solutions used to check the solver.

The ODE integrator here is a Cash-Karp 5(4) pair with its own right-hand
side, assembled from pair lists and ``bincount`` rather than the
convolution and cumulative-sum paths of :mod:`coagfrag.reaction`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kernels import KernelSet
from .reaction import TruncatedState, TruncationMode


class OracleStiffnessError(RuntimeError):
    def __init__(self, message: str, **payload):
        super().__init__(message)
        self.payload = payload


@dataclass
class HomogeneousState:
    n: int
    c: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        if self.c.shape != (self.n,):
            raise ValueError(f"expected {self.n} concentrations, got shape {self.c.shape}")
        if not np.all(np.isfinite(self.c)) or np.any(self.c < 0):
            raise ValueError("homogeneous state must be finite and nonnegative")

    @classmethod
    def monodisperse(cls, n: int, mass: float = 1.0) -> "HomogeneousState":
        c = np.zeros(n)
        c[0] = mass
        return cls(n, c)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # shape (len(times), n)
    steps: int
    rejected: int

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"time {t} was not sampled")
        return self.states[k]


class _PairRHS:
    """Truncated reaction terms for one homogeneous cell, by explicit pair enumeration."""

    def __init__(self, kernels: KernelSet, n: int, mode: TruncationMode):
        t = kernels.tables(n)
        self.n = n
        p, q = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        p, q = p.ravel(), q.ravel()
        # sizes p+1 and q+1 merge into size p+q+2, stored at index p+q+1
        ok = p + q + 1 < n
        self.gp, self.gq = p[ok], q[ok]
        self.gdst = (p + q + 1)[ok]
        self.gw = 0.5 * t.A[self.gp, self.gq]
        if mode is TruncationMode.CONSERVATIVE:
            self.lp, self.lq = self.gp, self.gq
        else:
            self.lp, self.lq = p, q
        self.lw = t.A[self.lp, self.lq]
        self.B = t.B.copy()
        self.BbetaT = (t.beta * t.B[:, None]).T.copy()

    def __call__(self, c: np.ndarray) -> np.ndarray:
        n = self.n
        gain = np.bincount(self.gdst, self.gw * c[self.gp] * c[self.gq], minlength=n)
        loss = np.bincount(self.lp, self.lw * c[self.lp] * c[self.lq], minlength=n)
        return gain - loss + self.BbetaT @ c - self.B * c


# Cash-Karp coefficients
_CK_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (3 / 10, -9 / 10, 6 / 5),
    (-11 / 54, 5 / 2, -70 / 27, 35 / 27),
    (1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096),
)
_CK_B5 = (37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771)
_CK_B4 = (2825 / 27648, 0.0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4)


def ode_reference(kernels: KernelSet, mode, initial: HomogeneousState, T: float,
                  tol: float = 1e-10, sample_times: Sequence[float] | None = None,
                  h0: float = 1e-4) -> Trajectory:
    """Integrate the homogeneous truncated system to ``T`` with Cash-Karp steps.

    Steps are shortened to land on every sample time. The error test is
    ``|err| <= tol * (|y| + 1e-3 max|y|)`` componentwise.
    """
    if not tol >= 1e-12:
        raise ValueError("oracle tolerance must be at least 1e-12")
    mode = TruncationMode.parse(mode)
    f = _PairRHS(kernels, initial.n, mode)
    if sample_times is None:
        sample_times = [T]
    wanted = {float(s) for s in sample_times if 0 <= s <= T} | {float(T)}
    stops = sorted(wanted | {0.0})
    floor = 1e-14 * max(T, 1e-300)

    y = initial.c.copy()
    t = 0.0
    h = h0
    out_t, out_y = [0.0], [y.copy()]
    steps = rejected = 0
    for target in stops[1:]:
        while t < target:
            last = t + h >= target
            hh = target - t if last else h
            if hh < floor and not last:
                raise OracleStiffnessError("oracle step below floor", time=t, dt=hh)
            k = [f(y)]
            for s in range(1, 6):
                yi = y + hh * sum(a * kk for a, kk in zip(_CK_A[s], k))
                k.append(f(yi))
            y5 = y + hh * sum(b * kk for b, kk in zip(_CK_B5, k) if b)
            y4 = y + hh * sum(b * kk for b, kk in zip(_CK_B4, k) if b)
            sc = tol * (np.abs(y) + 1e-3 * np.max(np.abs(y)) + 1e-300)
            err = float(np.max(np.abs(y5 - y4) / sc)) if np.all(np.isfinite(y5)) else np.inf
            if err <= 1.0:
                y = y5
                t = target if last else t + hh
                steps += 1
                fac = 5.0 if err == 0 else min(5.0, 0.9 * err ** -0.2)
                if not last:
                    h = hh * fac
            else:
                rejected += 1
                h = hh * (0.2 if not np.isfinite(err) else max(0.1, 0.9 * err ** -0.25))
        out_t.append(target)
        out_y.append(y.copy())
    return Trajectory(np.array(out_t), np.array(out_y), steps, rejected)


def constant_kernel_exact(i, t):
    """``(t/2)^(i-1) / (1 + t/2)^(i+1)`` for unit-mass monomers and ``a_ij = 1``."""
    i = np.asarray(i)
    t = np.asarray(t, dtype=float)
    if np.any(i < 1) or np.any(t < 0):
        raise ValueError("need i >= 1 and t >= 0")
    s = t / 2
    # written with r = s/(1+s) < 1 so large i cannot overflow
    r = s / (1 + s)
    return r ** (i - 1) / (1 + s) ** 2


def brute_force_weak_rate(state, kernels: KernelSet, phi, mode=TruncationMode.CONSERVATIVE) -> float:
    """``sum_i phi_i (Q_i + F_i)`` for one homogeneous cell, by plain double loops."""
    mode = TruncationMode.parse(mode)
    c = np.asarray(state.c if hasattr(state, "c") else state, dtype=float).reshape(-1)
    n = c.size
    phi = np.asarray(phi, dtype=float)
    t = kernels.tables(n)
    total = 0.0
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            w = t.A[i - 1, j - 1] * c[i - 1] * c[j - 1]
            if i + j <= n:
                total += 0.5 * w * (phi[i + j - 1] - phi[i - 1] - phi[j - 1])
            elif mode is TruncationMode.FULL_LOSS:
                total -= 0.5 * w * (phi[i - 1] + phi[j - 1])
    for i in range(2, n + 1):
        daughters = 0.0
        for j in range(1, i):
            daughters += t.beta[i - 1, j - 1] * phi[j - 1]
        total -= t.B[i - 1] * c[i - 1] * (phi[i - 1] - daughters)
    return float(total)


def homogeneous(state: TruncatedState, cell: int = 0) -> HomogeneousState:
    """Extract one cell of a spatial state."""
    return HomogeneousState(state.n, state.c.reshape(state.n, -1)[:, cell].copy(), state.time)
