"""Truncated coagulation and fragmentation operators.

States are stored species-major: ``c[i-1]`` is the concentration field of
clusters of size ``i``. All operators act cell by cell; the spatial layout
is only carried along.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.signal import fftconvolve

from .grid import Grid
from .kernels import KernelSet, PowerLawCoagulation, PowerLawDaughterDistribution


class TruncationMode(str, Enum):
    CONSERVATIVE = "conservative"
    FULL_LOSS = "full_loss"

    @classmethod
    def parse(cls, value) -> "TruncationMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ValueError(
                f"truncation.mode must be 'conservative' or 'full_loss', got {value!r}"
            ) from None


@dataclass
class TruncatedState:
    """Concentrations ``c_1..c_n`` on a grid at a given time."""

    n: int
    grid: Grid
    c: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        if self.n < 1:
            raise ValueError("truncation size must be positive")
        if self.c.shape != (self.n,) + self.grid.shape:
            raise ValueError(
                f"state array has shape {self.c.shape}, expected {(self.n,) + self.grid.shape}"
            )
        if not np.all(np.isfinite(self.c)):
            raise ValueError("state contains non-finite concentrations")

    def copy(self) -> "TruncatedState":
        return TruncatedState(self.n, self.grid, self.c.copy(), self.time)

    @classmethod
    def uniform(cls, grid: Grid, values, time: float = 0.0) -> "TruncatedState":
        """Spatially constant state with per-species values ``values``."""
        v = np.asarray(values, dtype=float)
        c = np.broadcast_to(v.reshape((-1,) + (1,) * grid.dim), (v.size,) + grid.shape)
        return cls(v.size, grid, c.copy(), time)


@dataclass
class ReactionOperator:
    """Precomputed tables for evaluating the truncated reaction terms.

    ``coag_path`` selects how gains are summed: ``"direct"`` (O(n^2),
    fixed sequential order), ``"fast"`` (FFT convolution, power-law
    kernels only) or ``"auto"``.
    """

    kernels: KernelSet
    n: int
    mode: TruncationMode = TruncationMode.CONSERVATIVE
    coag_path: str = "auto"
    _F: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.mode = TruncationMode.parse(self.mode)
        t = self.kernels.tables(self.n)
        self.A, self.B, self.beta = t.A, t.B, t.beta
        n = self.n
        s = np.arange(1, n + 1)
        self.sizes = s.astype(float)
        if self.mode is TruncationMode.CONSERVATIVE:
            keep = (s[:, None] + s[None, :]) <= n
            self.A_loss = np.where(keep, self.A, 0.0)
        else:
            self.A_loss = self.A
        # G[i-1, k-1] = B_k beta_{k,i}: gain of size i from breakup of size k
        self.G = (self.beta * self.B[:, None]).T.copy()

        coag = self.kernels.coagulation
        if self.coag_path == "auto":
            self.coag_path = "fast" if isinstance(coag, PowerLawCoagulation) and n > 64 else "direct"
        if self.coag_path == "fast" and not isinstance(coag, PowerLawCoagulation):
            raise ValueError("the fast coagulation path needs a power-law kernel")
        if self.coag_path not in ("fast", "direct"):
            raise ValueError(f"unknown coag_path {self.coag_path!r}")
        if isinstance(coag, PowerLawCoagulation):
            self._wa = self.sizes**coag.alpha
            self._wb = self.sizes**coag.beta

        d = self.kernels.daughters
        self._frag_rank_one = isinstance(d, PowerLawDaughterDistribution) and n >= 2
        if self._frag_rank_one:
            jn, S = d._weights(n - 1)
            # B_k beta_{k,i} = (B_k k / S_k) i^nu
            self._frag_w = np.zeros(n)
            self._frag_w[1:] = self.B[1:] * (self.sizes[1:] / S)
            self._frag_jn = np.zeros(n)
            self._frag_jn[:-1] = jn

    # -- helpers -------------------------------------------------------------

    def _flat(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if c.shape[0] != self.n:
            raise ValueError(f"expected {self.n} species, got {c.shape[0]}")
        return c.reshape(self.n, -1)

    @property
    def frag_matrix(self) -> np.ndarray:
        """Linear fragmentation operator ``F`` with ``F c = F^+ - F^-``."""
        if self._F is None:
            self._F = self.G - np.diag(self.B)
        return self._F

    # -- coagulation ---------------------------------------------------------

    def coag_gain_direct(self, c: np.ndarray) -> np.ndarray:
        c2 = self._flat(c)
        n = self.n
        gain = np.zeros_like(c2)
        # accumulate over j in increasing order; partner size is i - j
        for j in range(1, n):
            m = n - j
            gain[j:] += (0.5 * self.A[:m, j - 1])[:, None] * c2[:m] * c2[j - 1]
        return gain.reshape(np.shape(c))

    def coag_gain_fast(self, c: np.ndarray) -> np.ndarray:
        coag = self.kernels.coagulation
        c2 = self._flat(c)
        u = self._wa[:, None] * c2
        v = self._wb[:, None] * c2
        conv = fftconvolve(u, v, axes=0)
        gain = np.zeros_like(c2)
        # sizes p, q sit at indices p-1, q-1; their sum p+q lands at index p+q-2
        gain[1:] = coag.C_Q * conv[: self.n - 1]
        return gain.reshape(np.shape(c))

    def coag_gain(self, c: np.ndarray) -> np.ndarray:
        if self.coag_path == "fast":
            return self.coag_gain_fast(c)
        return self.coag_gain_direct(c)

    def coag_loss(self, c: np.ndarray) -> np.ndarray:
        c2 = self._flat(c)
        if self.coag_path == "fast":
            coag = self.kernels.coagulation
            u = self._wa[:, None] * c2
            v = self._wb[:, None] * c2
            if self.mode is TruncationMode.CONSERVATIVE:
                U = np.cumsum(u, axis=0)
                V = np.cumsum(v, axis=0)
                Us = np.zeros_like(c2)
                Vs = np.zeros_like(c2)
                # partner range j <= n - i, i.e. prefix index n - i - 1
                Us[:-1] = U[-2::-1]
                Vs[:-1] = V[-2::-1]
            else:
                Us = np.broadcast_to(u.sum(axis=0), c2.shape)
                Vs = np.broadcast_to(v.sum(axis=0), c2.shape)
            loss = coag.C_Q * c2 * (self._wa[:, None] * Vs + self._wb[:, None] * Us)
        else:
            loss = c2 * (self.A_loss @ c2)
        return loss.reshape(np.shape(c))

    # -- fragmentation -------------------------------------------------------

    def frag_gain(self, c: np.ndarray) -> np.ndarray:
        c2 = self._flat(c)
        if self._frag_rank_one:
            wc = self._frag_w[:, None] * c2
            # tail[i-1] = sum_{k > i} w_k c_k
            tail = np.zeros_like(c2)
            tail[:-1] = np.cumsum(wc[::-1], axis=0)[::-1][1:]
            gain = self._frag_jn[:, None] * tail
        else:
            gain = self.G @ c2
        return gain.reshape(np.shape(c))

    def frag_loss(self, c: np.ndarray) -> np.ndarray:
        c2 = self._flat(c)
        return (self.B[:, None] * c2).reshape(np.shape(c))

    # -- totals --------------------------------------------------------------

    def coag_rhs(self, c: np.ndarray) -> np.ndarray:
        return self.coag_gain(c) - self.coag_loss(c)

    def frag_rhs(self, c: np.ndarray) -> np.ndarray:
        return self.frag_gain(c) - self.frag_loss(c)

    def rhs(self, c: np.ndarray) -> np.ndarray:
        return self.coag_gain(c) - self.coag_loss(c) + self.frag_gain(c) - self.frag_loss(c)

    def weak_rate_parts(self, c: np.ndarray, phi) -> tuple[np.ndarray, np.ndarray]:
        """Coagulation and fragmentation parts of ``sum_i phi_i (Q_i + F_i)``."""
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.n,):
            raise ValueError(f"phi must have length {self.n}, got shape {phi.shape}")
        c2 = self._flat(c)
        n = self.n
        idx = np.arange(n)
        tot = idx[:, None] + idx[None, :] + 1  # 0-based index of size i + j
        inside = tot < n
        phi_sum = np.where(inside, phi[np.minimum(tot, n - 1)], 0.0)
        D = np.where(inside, phi_sum - phi[:, None] - phi[None, :], 0.0)
        if self.mode is TruncationMode.FULL_LOSS:
            D = np.where(inside, D, -(phi[:, None] + phi[None, :]))
        W = 0.5 * self.A * D
        coag = np.einsum("im,im->m", c2, W @ c2)
        w = self.B * (phi - self.beta @ phi)
        frag = -(w @ c2)
        cells = np.shape(c)[1:]
        return coag.reshape(cells), frag.reshape(cells)


def _operator(state: TruncatedState, kernels: KernelSet, mode=TruncationMode.CONSERVATIVE,
              coag_path: str = "direct") -> ReactionOperator:
    return ReactionOperator(kernels, state.n, TruncationMode.parse(mode), coag_path)


def _check_index(state: TruncatedState, i: int) -> None:
    if not 1 <= i <= state.n:
        raise ValueError(f"species index {i} outside 1..{state.n}")


def coag_gain(state: TruncatedState, kernels: KernelSet, i: int) -> np.ndarray:
    """``(1/2) sum_{j<i} a_{i-j,j} c_{i-j} c_j`` for one species, summed over j in order."""
    _check_index(state, i)
    A = kernels.tables(state.n).A
    c = state.c
    out = np.zeros(state.grid.shape)
    for j in range(1, i):
        out += 0.5 * A[i - j - 1, j - 1] * c[i - j - 1] * c[j - 1]
    return out


def coag_loss(state: TruncatedState, kernels: KernelSet, i: int,
              mode=TruncationMode.CONSERVATIVE) -> np.ndarray:
    _check_index(state, i)
    mode = TruncationMode.parse(mode)
    A = kernels.tables(state.n).A
    J = state.n - i if mode is TruncationMode.CONSERVATIVE else state.n
    c = state.c
    acc = np.zeros(state.grid.shape)
    for j in range(1, J + 1):
        acc += A[i - 1, j - 1] * c[j - 1]
    return c[i - 1] * acc


def frag_gain(state: TruncatedState, kernels: KernelSet, i: int) -> np.ndarray:
    _check_index(state, i)
    t = kernels.tables(state.n)
    out = np.zeros(state.grid.shape)
    for j in range(1, state.n - i + 1):
        k = i + j
        out += t.B[k - 1] * t.beta[k - 1, i - 1] * state.c[k - 1]
    return out


def frag_loss(state: TruncatedState, kernels: KernelSet, i: int) -> np.ndarray:
    _check_index(state, i)
    B = kernels.tables(state.n).B
    return B[i - 1] * state.c[i - 1]


def rhs(state: TruncatedState, kernels: KernelSet, mode=TruncationMode.CONSERVATIVE,
        coag_path: str = "direct") -> np.ndarray:
    """All ``Q_i^n + F_i^n`` as an array shaped like ``state.c``."""
    return _operator(state, kernels, mode, coag_path).rhs(state.c)


def weak_moment_rate(state: TruncatedState, kernels: KernelSet, phi,
                     mode=TruncationMode.CONSERVATIVE) -> np.ndarray:
    """Per-cell ``sum_i phi_i (Q_i + F_i)`` evaluated through the weak form."""
    coag, frag = _operator(state, kernels, mode).weak_rate_parts(state.c, phi)
    return coag + frag


def weak_moment_rate_parts(state: TruncatedState, kernels: KernelSet, phi,
                           mode=TruncationMode.CONSERVATIVE):
    return _operator(state, kernels, mode).weak_rate_parts(state.c, phi)


def coag_fast(state: TruncatedState, kernel: PowerLawCoagulation) -> np.ndarray:
    """All coagulation gains through one FFT convolution of ``i^alpha c_i`` and ``i^beta c_i``."""
    if not isinstance(kernel, PowerLawCoagulation):
        raise TypeError("coag_fast needs a power-law coagulation kernel")
    n = state.n
    s = np.arange(1, n + 1, dtype=float)
    c2 = state.c.reshape(n, -1)
    conv = fftconvolve((s**kernel.alpha)[:, None] * c2, (s**kernel.beta)[:, None] * c2, axes=0)
    gain = np.zeros_like(c2)
    gain[1:] = kernel.C_Q * conv[: n - 1]
    return gain.reshape(state.c.shape)


def mass_rate(state: TruncatedState, rates: np.ndarray) -> np.ndarray:
    """Per-cell ``sum_i i r_i`` for a reaction-rate array ``rates``."""
    s = np.arange(1, state.n + 1, dtype=float)
    return np.tensordot(s, rates, axes=(0, 0))
