"""Coagulation and fragmentation coefficients.

Sizes are 1-based throughout the public API (``i = 1`` is the monomer).
Array tables are 0-based: ``A[i-1, j-1] = a_{i,j}``, ``B[i-1] = B_i`` and
``beta[i-1, j-1] = beta_{i,j}`` (nonzero only for ``j < i``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

from .report import AuditReport

TABLE_MAX_N = 4096


# ----------------------------------------------------------------------------
# coefficient families
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerLawCoagulation:
    """``a_{i,j} = C_Q (i^alpha j^beta + i^beta j^alpha)``."""

    C_Q: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not self.C_Q >= 0:
            raise ValueError(f"C_Q must be nonnegative, got {self.C_Q}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def rate(self, i, j):
        i = np.asarray(i, dtype=float)
        j = np.asarray(j, dtype=float)
        return self.C_Q * (i**self.alpha * j**self.beta + i**self.beta * j**self.alpha)

    def matrix(self, n: int) -> np.ndarray:
        s = np.arange(1, n + 1, dtype=float)
        pa, pb = s**self.alpha, s**self.beta
        # symmetric by construction: the sum of an outer product and its transpose
        m = np.outer(pa, pb)
        return self.C_Q * (m + m.T)


@dataclass(frozen=True, eq=False)
class CoagulationTable:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("coagulation table must be a square matrix")
        object.__setattr__(self, "values", v)

    def rate(self, i, j):
        return self.values[np.asarray(i) - 1, np.asarray(j) - 1]

    def matrix(self, n: int) -> np.ndarray:
        _check_table_size(self.values.shape[0], n, "coagulation")
        return self.values[:n, :n].copy()


@dataclass(frozen=True)
class FragmentationRates:
    """``B_1 = 0`` and ``B_i = C_F i^gamma`` for ``i >= 2``."""

    C_F: float
    gamma: float

    def __post_init__(self):
        if not self.C_F >= 0:
            raise ValueError(f"C_F must be nonnegative, got {self.C_F}")

    def rate(self, i):
        i = np.asarray(i, dtype=float)
        return np.where(i > 1, self.C_F * i**self.gamma, 0.0)

    def rates(self, n: int) -> np.ndarray:
        s = np.arange(1, n + 1, dtype=float)
        out = self.C_F * s**self.gamma
        out[0] = 0.0
        return out


@dataclass(frozen=True, eq=False)
class FragmentationTable:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError("fragmentation table must be a vector B_1..B_N")
        object.__setattr__(self, "values", v)

    def rate(self, i):
        return self.values[np.asarray(i) - 1]

    def rates(self, n: int) -> np.ndarray:
        _check_table_size(self.values.shape[0], n, "fragmentation")
        return self.values[:n].copy()


@dataclass(frozen=True)
class PowerLawDaughterDistribution:
    """``beta_{i,j} = i j^nu / sum_{k<i} k^(1+nu)``, for ``1 <= j < i``."""

    nu: float

    def __post_init__(self):
        if not self.nu > -2:
            raise ValueError(f"nu must exceed -2, got {self.nu}")

    def _weights(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        j = np.arange(1, m + 1, dtype=float)
        jn = j**self.nu
        # normaliser built from the very products j * j^nu used in the mass
        # check, accumulated left to right
        return jn, np.cumsum(j * jn)

    def row(self, i: int) -> np.ndarray:
        """``beta_{i,1..i-1}`` as a vector of length ``i - 1``."""
        if i < 2:
            raise ValueError(f"daughter row requires i >= 2, got {i}")
        jn, S = self._weights(i - 1)
        return (i / S[-1]) * jn

    def fraction(self, i: int, j: int) -> float:
        if not (i >= 2 and 1 <= j <= i - 1):
            raise ValueError(f"daughter fraction undefined for (i, j) = ({i}, {j})")
        return float(self.row(i)[j - 1])

    def matrix(self, n: int) -> np.ndarray:
        out = np.zeros((n, n))
        if n < 2:
            return out
        jn, S = self._weights(n - 1)
        k = np.arange(2, n + 1, dtype=float)
        full = np.outer(k / S, jn)  # row k-2 <-> parent size k
        out[1:, :-1] = np.tril(full)
        return out


@dataclass(frozen=True, eq=False)
class DaughterTable:
    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if isinstance(v, (list, tuple)) and v and any(
            len(r) != len(v) for r in v
        ):
            # ragged lower-triangular rows: row k lists beta_{k+1, 1..k}
            N = len(v)
            m = np.zeros((N, N))
            for r, row in enumerate(v):
                m[r, : len(row)] = row
            v = m
        v = np.asarray(v, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("daughter table must be square (or ragged lower rows)")
        object.__setattr__(self, "values", np.tril(v, -1))

    def fraction(self, i: int, j: int) -> float:
        if not (i >= 2 and 1 <= j <= i - 1):
            raise ValueError(f"daughter fraction undefined for (i, j) = ({i}, {j})")
        return float(self.values[i - 1, j - 1])

    def row(self, i: int) -> np.ndarray:
        return self.values[i - 1, : i - 1].copy()

    def matrix(self, n: int) -> np.ndarray:
        _check_table_size(self.values.shape[0], n, "daughter")
        return self.values[:n, :n].copy()


Coagulation = Union[PowerLawCoagulation, CoagulationTable]
Fragmentation = Union[FragmentationRates, FragmentationTable]
Daughters = Union[PowerLawDaughterDistribution, DaughterTable]


def _check_table_size(size: int, n: int, what: str) -> None:
    if n > TABLE_MAX_N:
        raise ValueError(f"explicit {what} tables are limited to n <= {TABLE_MAX_N}")
    if size < n:
        raise ValueError(f"{what} table covers sizes up to {size}, need n = {n}")


@dataclass
class KernelTables:
    A: np.ndarray
    B: np.ndarray
    beta: np.ndarray


@dataclass(eq=False)
class KernelSet:
    coagulation: Coagulation
    fragmentation: Fragmentation
    daughters: Daughters
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def tables(self, n: int) -> KernelTables:
        if n not in self._cache:
            self._cache[n] = KernelTables(
                self.coagulation.matrix(n),
                self.fragmentation.rates(n),
                self.daughters.matrix(n),
            )
        return self._cache[n]

    @property
    def is_power_law(self) -> bool:
        return isinstance(self.coagulation, PowerLawCoagulation)

    @classmethod
    def from_dict(cls, cfg: dict[str, Any]) -> "KernelSet":
        return cls(
            _coag_from_dict(cfg.get("coagulation", {"type": "power_law", "C_Q": 0.0,
                                                    "alpha": 0.0, "beta": 0.0})),
            _frag_from_dict(cfg.get("fragmentation", {"type": "power_law", "C_F": 0.0,
                                                      "gamma": 1.0})),
            _daughters_from_dict(cfg.get("daughters", {"type": "power_law", "nu": 0.0})),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "coagulation": _family_to_dict(self.coagulation),
            "fragmentation": _family_to_dict(self.fragmentation),
            "daughters": _family_to_dict(self.daughters),
        }


def _family_to_dict(f) -> dict[str, Any]:
    if isinstance(f, PowerLawCoagulation):
        return {"type": "power_law", "C_Q": f.C_Q, "alpha": f.alpha, "beta": f.beta}
    if isinstance(f, FragmentationRates):
        return {"type": "power_law", "C_F": f.C_F, "gamma": f.gamma}
    if isinstance(f, PowerLawDaughterDistribution):
        return {"type": "power_law", "nu": f.nu}
    return {"type": "table", "values": f.values.tolist()}


def _require(d: dict, key: str, block: str):
    if key not in d:
        raise KeyError(f"{block}.{key}")
    return d[key]


def _coag_from_dict(d: dict) -> Coagulation:
    kind = d.get("type", "power_law")
    if kind == "table":
        return CoagulationTable(_require(d, "values", "coagulation"))
    if kind != "power_law":
        raise ValueError(f"coagulation.type: unknown kernel type {kind!r}")
    return PowerLawCoagulation(float(_require(d, "C_Q", "coagulation")),
                               float(_require(d, "alpha", "coagulation")),
                               float(_require(d, "beta", "coagulation")))


def _frag_from_dict(d: dict) -> Fragmentation:
    kind = d.get("type", "power_law")
    if kind == "table":
        return FragmentationTable(_require(d, "values", "fragmentation"))
    if kind != "power_law":
        raise ValueError(f"fragmentation.type: unknown kernel type {kind!r}")
    return FragmentationRates(float(_require(d, "C_F", "fragmentation")),
                              float(_require(d, "gamma", "fragmentation")))


def _daughters_from_dict(d: dict) -> Daughters:
    kind = d.get("type", "power_law")
    if kind == "table":
        return DaughterTable(_require(d, "values", "daughters"))
    if kind != "power_law":
        raise ValueError(f"daughters.type: unknown kernel type {kind!r}")
    return PowerLawDaughterDistribution(float(_require(d, "nu", "daughters")))


# ----------------------------------------------------------------------------
# point evaluations
# ----------------------------------------------------------------------------

def coag_rate(kernel: Coagulation, i, j):
    return kernel.rate(i, j)


def frag_rate(rates: Fragmentation, i):
    return rates.rate(i)


def daughter_fraction(dist: Daughters, i: int, j: int) -> float:
    return dist.fraction(i, j)


# ----------------------------------------------------------------------------
# structural validation and proof constants
# ----------------------------------------------------------------------------

NORMALISATION_RTOL = 1e-12


def validate(ks: KernelSet, n: int) -> AuditReport:
    """Check the structural constraints on the coefficients up to size ``n``.

    Failures are recorded in the returned report, never raised.
    """
    if n < 2:
        raise ValueError("validate needs n >= 2")
    rep = AuditReport()
    try:
        t = ks.tables(n)
    except ValueError as exc:
        rep.add("tables_available", float("nan"), False, n=n, error=str(exc))
        return rep

    A, B, beta = t.A, t.B, t.beta
    asym = float(np.max(np.abs(A - A.T)))
    scale = float(np.max(np.abs(A))) if A.size else 0.0
    rep.add("coag_symmetry", asym, asym <= 1e-14 * scale, n=n)
    rep.add("coag_nonnegative", float(A.min()), bool(A.min() >= 0), n=n)
    rep.add("frag_B1_zero", abs(float(B[0])), B[0] == 0, n=n)
    rep.add("frag_nonnegative", float(B.min()), bool(B.min() >= 0), n=n)
    rep.add("daughter_nonnegative", float(beta.min()), bool(beta.min() >= 0), n=n)

    sizes = np.arange(1, n + 1, dtype=float)
    mass = beta[1:] @ sizes  # sum_j j beta_{i,j}, i = 2..n
    rel = np.abs(mass - sizes[1:]) / sizes[1:]
    worst = int(np.argmax(rel)) + 2
    rep.add("daughter_normalisation", float(rel.max()),
            bool(rel.max() <= NORMALISATION_RTOL), n=n, worst_i=worst,
            tolerance=NORMALISATION_RTOL)
    return rep


def sup_ratios(ks: KernelSet, i: int, n: int) -> tuple[float, float]:
    """Finite-range lower estimates of ``K_i^Q`` and ``K_i^F``.

    Returns ``max_{j<=n} a_{i,j}/j`` and ``max_{j<=n-i} B_{i+j} beta_{i+j,i}/(i+j)``
    (the latter is 0 when ``i = n``).
    """
    if not 1 <= i <= n:
        raise ValueError(f"need 1 <= i <= n, got i={i}, n={n}")
    t = ks.tables(n)
    j = np.arange(1, n + 1, dtype=float)
    kq = float(np.max(t.A[i - 1] / j))
    if i == n:
        return kq, 0.0
    parents = np.arange(i + 1, n + 1)
    kf = float(np.max(t.B[parents - 1] * t.beta[parents - 1, i - 1] / parents))
    return kq, kf


def superadditivity_ratio(i, j, l: float):
    """``((i+j)^l - i^l - j^l) / (i^(l-1) j + i j^(l-1))`` evaluated without cancellation."""
    i = np.asarray(i, dtype=float)
    j = np.asarray(j, dtype=float)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    x = lo / hi
    num = np.expm1(l * np.log1p(x)) - x**l
    den = x ** (l - 1) + x
    return num / den


def superadditivity_constant(l: float, i_max: int) -> float:
    """Exhaustive maximum of :func:`superadditivity_ratio` over ``1 <= i, j <= i_max``."""
    if not l > 1:
        raise ValueError(f"l must exceed 1, got {l}")
    if i_max < 2:
        raise ValueError("i_max must be at least 2")
    best = -np.inf
    # the ratio is symmetric; scan i <= j only, rows in fixed order
    for i in range(1, i_max + 1):
        j = np.arange(i, i_max + 1, dtype=float)
        best = max(best, float(np.max(superadditivity_ratio(float(i), j, l))))
    return best


def frag_moment_deficit(dist: Daughters, i: int, l: float) -> float:
    """``i^l - sum_{j<i} j^l beta_{i,j}``."""
    if i < 2:
        raise ValueError("deficit needs i >= 2")
    row = dist.row(i)
    j = np.arange(1, i, dtype=float)
    return float(i**l - np.sum(j**l * row))


def frag_deficit_bound(i, l: float):
    """Lower bound ``min(l-1, 1) i^(l-1)`` used for the fragmentation term."""
    return min(l - 1.0, 1.0) * np.asarray(i, dtype=float) ** (l - 1.0)


def frag_deficit_profile(dist: Daughters, i_max: int, l: float) -> np.ndarray:
    """Deficits for ``i = 2..i_max`` (vector of length ``i_max - 1``)."""
    return np.array([frag_moment_deficit(dist, i, l) for i in range(2, i_max + 1)])


def audit_kernel_constants(ks: KernelSet, n: int, ls=(1.5, 2.0, 3.0),
                           i_max: int = 2000) -> AuditReport:
    """Structural checks plus the superadditivity and fragmentation-deficit bounds."""
    rep = validate(ks, n)
    for l in ls:
        C = superadditivity_constant(l, i_max)
        ok = math.isfinite(C) and C > 0
        rep.add("superadditivity_constant", C, ok, l=l, i_max=i_max)
    if isinstance(ks.daughters, PowerLawDaughterDistribution):
        for l in ls:
            d = frag_deficit_profile(ks.daughters, i_max, l)
            b = frag_deficit_bound(np.arange(2, i_max + 1), l)
            slack = d - b * (1 - 1e-12)
            rep.add("frag_deficit_lower_bound", float(slack.min() / b[np.argmin(slack)]),
                    bool(slack.min() >= 0), l=l, nu=ks.daughters.nu, i_max=i_max)
    else:
        t = ks.tables(n)
        for l in ls:
            sizes = np.arange(1, n + 1, dtype=float)
            d = sizes[1:] ** l - t.beta[1:] @ sizes**l
            b = frag_deficit_bound(sizes[1:], l)
            slack = d - b * (1 - 1e-12)
            rep.add("frag_deficit_lower_bound", float(np.min(slack / b)),
                    bool(slack.min() >= 0), l=l, i_max=n)
    return rep
