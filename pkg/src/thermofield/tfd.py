"""Ising targets, thermofield-double states and the engineered cost family.

The four transmons are ordered ``(B2, B1, A2, A1)`` throughout. System A is
``(A2, A1)``, system B is ``(B2, B1)`` and corresponding sites are paired as
``(B2, A2)`` and ``(B1, A1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np

from .qudit import (
    DensityMatrix,
    Observable,
    PAULI,
    embed,
    make_register,
    partial_trace,
)

SITES = ("B2", "B1", "A2", "A1")
SYSTEMS = {"A": ("A2", "A1"), "B": ("B2", "B1")}
INTER_PAIRS = (("B2", "A2"), ("B1", "A1"))
QUBIT_REGISTER = make_register(SITES, 2)
COST_TERMS = ("X_A", "X_B", "ZZ_A", "ZZ_B", "XX_BA", "ZZ_BA")

BETA_ZERO = 1e-9


@dataclass(frozen=True)
class IsingParams:
    g: float = 1.0
    n: int = 2

    def __post_init__(self):
        if not math.isfinite(self.g):
            raise ValueError("g must be finite")
        if self.n != 2:
            raise ValueError("only two-site chains are supported")


@dataclass(frozen=True)
class CostSpec:
    beta: float
    varsigma: float = 1.57

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not 0.5 <= self.varsigma <= 3.0:
            raise ValueError(f"varsigma {self.varsigma} outside sanity range [0.5, 3]")


def beta_calibration_set() -> tuple[float, ...]:
    return tuple(10.0 ** (x / 2) for x in range(-8, 9))


@dataclass(frozen=True)
class CostCalibrationSpec:
    betas: tuple[float, ...] = field(default_factory=beta_calibration_set)
    varsigma_grid: tuple[float, ...] = tuple(round(1.0 + 0.01 * k, 2) for k in range(101))
    operators: tuple[str, ...] = (
        "X_A", "Y_A", "Z_A", "X_B", "Y_B", "Z_B",
        "XX_A", "YY_A", "ZZ_A", "XX_B", "YY_B", "ZZ_B",
        "XX_BA", "YY_BA", "ZZ_BA",
    )


def _op(factors: Mapping[str, str]) -> np.ndarray:
    return embed({lab: PAULI[p] for lab, p in factors.items()}, QUBIT_REGISTER)


@lru_cache(maxsize=None)
def named_operator(name: str) -> np.ndarray:
    """Dense 16x16 matrix of a named term, e.g. ``X_A`` or ``ZZ_BA``.

    Single-letter names sum over both sites of a system; doubled names are the
    intra-system product (``ZZ_A = Z_A2 Z_A1``) or, with ``_BA``, the sum over
    corresponding-site products.
    """
    pauli, _, system = name.partition("_")
    if system == "BA":
        p = pauli[0]
        m = sum(_op({b: p, a: p}) for b, a in INTER_PAIRS)
    elif len(pauli) == 1:
        m = sum(_op({s: pauli}) for s in SYSTEMS[system])
    else:
        s2, s1 = SYSTEMS[system]
        m = _op({s2: pauli[0], s1: pauli[1]})
    m = np.asarray(m)
    m.setflags(write=False)
    return m


def hamiltonian(system: str, params: IsingParams = IsingParams()) -> Observable:
    """H_A = ZZ_A + g X_A (likewise for B); H_BA = XX_BA + ZZ_BA."""
    if system in SYSTEMS:
        m = named_operator(f"ZZ_{system}") + params.g * named_operator(f"X_{system}")
    elif system == "BA":
        m = named_operator("XX_BA") + named_operator("ZZ_BA")
    else:
        raise ValueError(f"unknown system {system!r}")
    return Observable(QUBIT_REGISTER, m)


def system_hamiltonian(params: IsingParams = IsingParams()) -> np.ndarray:
    """Two-site Ising Hamiltonian on ``(s2, s1)`` as a 4x4 real matrix."""
    zz = np.kron(PAULI["Z"], PAULI["Z"])
    x = np.kron(PAULI["X"], PAULI["I"]) + np.kron(PAULI["I"], PAULI["X"])
    return np.real(zz + params.g * x)


def eigenbasis(params: IsingParams = IsingParams()) -> tuple[np.ndarray, np.ndarray]:
    """Energies (ascending) and real eigenvectors with first nonzero entry positive."""
    energies, vecs = np.linalg.eigh(system_hamiltonian(params))
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        lead = col[np.argmax(np.abs(col) > 1e-12)]
        if lead < 0:
            vecs[:, k] = -col
    return energies, vecs


def _boltzmann(beta: float, energies: np.ndarray) -> np.ndarray:
    w = np.exp(-beta * (energies - energies.min()))
    return w / w.sum()


def gibbs_state(beta: float, params: IsingParams = IsingParams()) -> DensityMatrix:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    energies, vecs = eigenbasis(params)
    p = _boltzmann(beta, energies)
    rho = (vecs * p) @ vecs.T
    return DensityMatrix.from_unchecked(make_register(SYSTEMS["A"]), rho, check_psd=True)


def tfd_ket(beta: float, params: IsingParams = IsingParams()) -> np.ndarray:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    energies, vecs = eigenbasis(params)
    amp = np.sqrt(_boltzmann(beta, energies))
    psi = sum(a * np.kron(vecs[:, j], vecs[:, j]) for j, a in enumerate(amp))
    return psi.astype(complex)


def tfd_state(beta: float, params: IsingParams = IsingParams()) -> DensityMatrix:
    return DensityMatrix.from_ket(QUBIT_REGISTER, tfd_ket(beta, params))


def reduced_state(rho: DensityMatrix, system: str = "A") -> DensityMatrix:
    return partial_trace(rho, SYSTEMS[system])


def cost_value(expectations: Mapping[str, float], spec: CostSpec) -> float:
    missing = [t for t in COST_TERMS if t not in expectations]
    if missing:
        raise KeyError(f"missing cost terms: {missing}")
    e = expectations
    inter = e["XX_BA"] + e["ZZ_BA"]
    if spec.beta < BETA_ZERO:
        return -inter
    intra = e["X_A"] + e["X_B"] + spec.varsigma * (e["ZZ_A"] + e["ZZ_B"])
    return intra - spec.beta ** (-spec.varsigma) * inter


def cost_operator(spec: CostSpec) -> np.ndarray:
    """The cost as a 16x16 matrix, so that Tr(C rho) = cost_value(<terms>)."""
    weights = cost_weights(spec)
    return sum(w * named_operator(t) for t, w in weights.items())


def cost_weights(spec: CostSpec) -> dict[str, float]:
    if spec.beta < BETA_ZERO:
        return {"X_A": 0.0, "X_B": 0.0, "ZZ_A": 0.0, "ZZ_B": 0.0, "XX_BA": -1.0, "ZZ_BA": -1.0}
    s = spec.varsigma
    k = spec.beta ** (-s)
    return {"X_A": 1.0, "X_B": 1.0, "ZZ_A": s, "ZZ_B": s, "XX_BA": -k, "ZZ_BA": -k}


def expectations(rho: DensityMatrix | np.ndarray, names: Sequence[str] = COST_TERMS) -> dict[str, float]:
    m = rho.data if isinstance(rho, DensityMatrix) else rho
    return {n: float(np.real(np.einsum("ij,ji->", named_operator(n), m))) for n in names}


# ---------------------------------------------------------------------------
# ideal single-step ansatz, evaluated from cached spectral decompositions

def bell_pairs_ket() -> np.ndarray:
    """Phi+ on (B2, A2) and on (B1, A1), in register order (B2, B1, A2, A1)."""
    psi = np.zeros(16, dtype=complex)
    for b2 in (0, 1):
        for b1 in (0, 1):
            psi[int(f"{b2}{b1}{b2}{b1}", 2)] = 0.5
    return psi


@lru_cache(maxsize=None)
def _generator_spectra() -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    gens = (
        named_operator("X_B") + named_operator("X_A"),
        named_operator("ZZ_B") + named_operator("ZZ_A"),
        named_operator("XX_BA"),
        named_operator("ZZ_BA"),
    )
    return tuple(np.linalg.eigh(g) for g in gens)


def ansatz_unitary_fast(angles: Sequence[float]) -> np.ndarray:
    """U_inter(alpha) U_intra(gamma) for ``angles = (alpha1, alpha2, gamma1, gamma2)``."""
    a1, a2, g1, g2 = angles
    u = np.eye(16, dtype=complex)
    for theta, (lam, vec) in zip((g1, g2, a1, a2), _generator_spectra()):
        u = (vec * np.exp(-0.5j * theta * lam)) @ vec.conj().T @ u
    return u


_BELL = bell_pairs_ket()


def ansatz_ket(angles: Sequence[float]) -> np.ndarray:
    a1, a2, g1, g2 = angles
    psi = _BELL
    for theta, (lam, vec) in zip((g1, g2, a1, a2), _generator_spectra()):
        psi = vec @ (np.exp(-0.5j * theta * lam) * (vec.conj().T @ psi))
    return psi


def ideal_ansatz_state(angles: Sequence[float]) -> np.ndarray:
    """16x16 density matrix of U(alpha, gamma) applied to the Bell pairs."""
    psi = ansatz_ket(angles)
    return np.outer(psi, psi.conj())


def ideal_cost(angles: Sequence[float], spec: CostSpec, _cache: dict = {}) -> float:
    key = (spec.beta, spec.varsigma)
    c = _cache.get(key)
    if c is None:
        if len(_cache) > 256:
            _cache.clear()
        c = _cache[key] = cost_operator(spec)
    psi = ansatz_ket(angles)
    return float(np.real(psi.conj() @ c @ psi))


def tfd_infidelity(angles: Sequence[float], beta: float, params: IsingParams = IsingParams()) -> float:
    """1 - |<TFD(beta)|psi(angles)>|^2 for the ideal ansatz."""
    psi = ansatz_ket(angles)
    return float(1.0 - abs(np.vdot(tfd_ket(beta, params), psi)) ** 2)


@dataclass
class XiResult:
    varsigma: float
    xi: float
    angles: dict[float, np.ndarray]
    flagged: list[float]


def xi_objective(
    varsigma: float,
    calib: CostCalibrationSpec = CostCalibrationSpec(),
    inner_optimizer: Callable | None = None,
    seed: int = 0,
    params: IsingParams = IsingParams(),
) -> XiResult:
    """Aggregate operator deviation between optimised ansatz states and TFD states.

    For each beta (ascending) the ideal cost C_varsigma(beta) is minimised with
    ``inner_optimizer(f, x0, seed)``, warm-started from the previous beta.
    """
    from .optimize import multistart_minimize

    if inner_optimizer is None:
        inner_optimizer = multistart_minimize
    xi = 0.0
    best_angles: dict[float, np.ndarray] = {}
    flagged: list[float] = []
    x0 = np.zeros(4)
    ops = [named_operator(o) for o in calib.operators]
    for k, beta in enumerate(sorted(calib.betas)):
        spec = CostSpec(beta=beta, varsigma=varsigma)
        res = inner_optimizer(lambda x: ideal_cost(x, spec), x0, seed=seed * 7919 + k)
        if not getattr(res, "converged", True):
            flagged.append(beta)
        x0 = np.asarray(res.x)
        best_angles[beta] = x0
        psi = ansatz_ket(x0)
        tfd = tfd_ket(beta, params)
        for o in ops:
            xi += abs(np.real(np.vdot(tfd, o @ tfd)) - np.real(np.vdot(psi, o @ psi)))
    return XiResult(varsigma=varsigma, xi=float(xi), angles=best_angles, flagged=flagged)
