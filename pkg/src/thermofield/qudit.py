"""Dense linear algebra on registers of qubit/qutrit sites.

States and operators carry an ordered register of :class:`SiteSpec`; the
matrix index ordering follows the register (first site is most significant).
Operators on a subset of sites are lifted with :func:`embed`, which places
each factor explicitly instead of relying on index arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-10
PSD_TOL = 1e-10

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}


class RegisterError(ValueError):
    pass


class StateError(ValueError):
    pass


@dataclass(frozen=True)
class SiteSpec:
    label: str
    dim: int = 2

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise RegisterError(f"site {self.label!r}: dim must be 2 or 3, got {self.dim}")


def make_register(labels: Iterable[str], dim: int = 2) -> tuple[SiteSpec, ...]:
    reg = tuple(SiteSpec(lab, dim) for lab in labels)
    _check_register(reg)
    return reg


def _check_register(register: Sequence[SiteSpec]) -> None:
    labels = [s.label for s in register]
    if len(set(labels)) != len(labels):
        raise RegisterError(f"duplicate site labels in register {labels}")


def register_dims(register: Sequence[SiteSpec]) -> tuple[int, ...]:
    return tuple(s.dim for s in register)


def site_index(register: Sequence[SiteSpec], label: str) -> int:
    for k, s in enumerate(register):
        if s.label == label:
            return k
    raise RegisterError(f"unknown site label {label!r}")


def qubit_lift(op: np.ndarray, dim: int) -> np.ndarray:
    """Lift a 2x2 operator to ``dim`` levels, acting as identity on |2>."""
    if dim == 2:
        return np.asarray(op, dtype=complex)
    out = np.eye(dim, dtype=complex)
    out[:2, :2] = op
    return out


def qubit_projector(op: np.ndarray, dim: int) -> np.ndarray:
    """Like :func:`qubit_lift` but zero (not identity) on the leaked level."""
    out = np.zeros((dim, dim), dtype=complex)
    out[:2, :2] = op
    return out


def embed(factors: dict[str, np.ndarray], register: Sequence[SiteSpec]) -> np.ndarray:
    """Kronecker product over ``register`` with ``factors[label]`` on named sites.

    Each factor must already have the site's dimension; unnamed sites get the
    identity. Two-site factors are not accepted here, see :func:`embed_pair`.
    """
    for lab in factors:
        site_index(register, lab)
    mats = []
    for s in register:
        f = factors.get(s.label)
        if f is None:
            mats.append(np.eye(s.dim, dtype=complex))
        else:
            f = np.asarray(f, dtype=complex)
            if f.shape != (s.dim, s.dim):
                raise RegisterError(f"factor for {s.label} has shape {f.shape}, site dim {s.dim}")
            mats.append(f)
    return reduce(np.kron, mats)


def embed_pair(op: np.ndarray, sites: tuple[str, str], register: Sequence[SiteSpec]) -> np.ndarray:
    """Embed a two-site operator (ordered as ``sites``) into the full register."""
    i, j = site_index(register, sites[0]), site_index(register, sites[1])
    if i == j:
        raise RegisterError("two-site operator needs distinct sites")
    dims = register_dims(register)
    n = len(dims)
    rest = [k for k in range(n) if k not in (i, j)]
    order = [i, j] + rest
    m = np.kron(np.asarray(op, dtype=complex), np.eye(int(np.prod([dims[k] for k in rest])), dtype=complex))
    shape = [dims[k] for k in order]
    t = m.reshape(shape + shape)
    perm = [order.index(k) for k in range(n)]
    t = t.transpose(perm + [n + p for p in perm])
    d = int(np.prod(dims))
    return t.reshape(d, d)


def _as_matrix(data, register) -> np.ndarray:
    d = int(np.prod(register_dims(register)))
    m = np.array(data, dtype=complex)
    if m.shape != (d, d):
        raise RegisterError(f"matrix shape {m.shape} does not match register dimension {d}")
    m.setflags(write=False)
    return m


@dataclass(frozen=True, eq=False)
class Observable:
    register: tuple[SiteSpec, ...]
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "register", tuple(self.register))
        _check_register(self.register)
        m = _as_matrix(self.data, self.register)
        if np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_TOL * max(1.0, np.abs(m).max(initial=0.0)):
            raise StateError("observable is not Hermitian")
        object.__setattr__(self, "data", m)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(s.label for s in self.register)

    def __add__(self, other: "Observable") -> "Observable":
        if other.register != self.register:
            raise RegisterError("registers differ")
        return Observable(self.register, self.data + other.data)

    def __mul__(self, c: float) -> "Observable":
        return Observable(self.register, self.data * float(c))

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian unit-trace operator over a register.

    ``check_psd=False`` admits states with negative eigenvalues, as produced by
    linear-inversion tomography; everything else is validated.
    """

    register: tuple[SiteSpec, ...]
    data: np.ndarray
    check_psd: bool = True

    def __post_init__(self):
        object.__setattr__(self, "register", tuple(self.register))
        _check_register(self.register)
        m = _as_matrix(self.data, self.register)
        herm = np.max(np.abs(m - m.conj().T), initial=0.0)
        if herm > HERMITIAN_TOL:
            raise StateError(f"density matrix not Hermitian (deviation {herm:.3g})")
        tr = np.trace(m).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise StateError(f"density matrix trace {tr!r} != 1")
        if self.check_psd:
            lam = np.linalg.eigvalsh(m).min()
            if lam < -PSD_TOL:
                raise StateError(f"density matrix has negative eigenvalue {lam:.3g}")
        object.__setattr__(self, "data", m)

    @classmethod
    def from_unchecked(cls, register, data, check_psd: bool = False) -> "DensityMatrix":
        """Symmetrise away round-off before validation."""
        m = np.asarray(data, dtype=complex)
        m = 0.5 * (m + m.conj().T)
        return cls(register, m, check_psd=check_psd)

    @classmethod
    def from_ket(cls, register, ket) -> "DensityMatrix":
        v = np.asarray(ket, dtype=complex).ravel()
        v = v / np.linalg.norm(v)
        return cls.from_unchecked(register, np.outer(v, v.conj()), check_psd=True)

    @classmethod
    def basis_state(cls, register, levels: Sequence[int]) -> "DensityMatrix":
        dims = register_dims(register)
        idx = int(np.ravel_multi_index(tuple(levels), dims))
        d = int(np.prod(dims))
        m = np.zeros((d, d), dtype=complex)
        m[idx, idx] = 1.0
        return cls(register, m)

    @classmethod
    def maximally_mixed(cls, register) -> "DensityMatrix":
        d = int(np.prod(register_dims(register)))
        return cls(register, np.eye(d, dtype=complex) / d)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(s.label for s in self.register)

    @property
    def dims(self) -> tuple[int, ...]:
        return register_dims(self.register)

    def evolve(self, unitary: np.ndarray) -> "DensityMatrix":
        u = np.asarray(unitary)
        return DensityMatrix.from_unchecked(self.register, u @ self.data @ u.conj().T, check_psd=False)

    def expect(self, op) -> float:
        m = op.data if isinstance(op, Observable) else np.asarray(op)
        return float(np.real(np.einsum("ij,ji->", m, self.data)))

    def diagonal(self) -> np.ndarray:
        return np.clip(np.real(np.diag(self.data)), 0.0, None)


def tensor(a, b):
    """Kronecker product of two states or two observables on disjoint registers."""
    if type(a) is not type(b):
        raise TypeError("tensor() needs two objects of the same kind")
    la = {s.label for s in a.register}
    if la & {s.label for s in b.register}:
        raise RegisterError("tensor() needs disjoint registers")
    reg = a.register + b.register
    data = np.kron(a.data, b.data)
    if isinstance(a, DensityMatrix):
        return DensityMatrix.from_unchecked(reg, data, check_psd=a.check_psd and b.check_psd)
    return Observable(reg, 0.5 * (data + data.conj().T))


def partial_trace(rho: DensityMatrix, keep: Iterable[str]) -> DensityMatrix:
    """Reduced state on ``keep``; the kept sites stay in register order."""
    keep = list(keep)
    for lab in keep:
        site_index(rho.register, lab)
    if len(set(keep)) != len(keep):
        raise RegisterError("duplicate labels in keep")
    dims = rho.dims
    n = len(dims)
    kept = [k for k, s in enumerate(rho.register) if s.label in keep]
    t = rho.data.reshape(dims + dims)
    row = list(range(n))
    col = [n + k if k in kept else k for k in range(n)]
    out = kept + [n + k for k in kept]
    red = np.einsum(t, row + col, out)
    d = int(np.prod([dims[k] for k in kept]))
    reg = tuple(rho.register[k] for k in kept)
    return DensityMatrix.from_unchecked(reg, red.reshape(d, d), check_psd=rho.check_psd)


def psd_sqrt(m: np.ndarray, tol: float = PSD_TOL, clamp: bool = False) -> np.ndarray:
    """Square root of a Hermitian PSD matrix via eigendecomposition.

    Eigenvalues in [-tol, 0) are clamped to zero. More negative ones raise
    unless ``clamp`` is set.
    """
    lam, vec = np.linalg.eigh(0.5 * (m + m.conj().T))
    if lam.min() < -tol and not clamp:
        raise StateError(f"matrix has negative eigenvalue {lam.min():.3g}")
    lam = np.clip(lam, 0.0, None)
    return (vec * np.sqrt(lam)) @ vec.conj().T


def fidelity(rho: DensityMatrix, sigma: DensityMatrix, clamp: bool = False) -> float:
    """Uhlmann fidelity Tr sqrt(sqrt(rho) sigma sqrt(rho)).

    With ``clamp`` the eigenvalues of the inner product matrix are clipped at
    zero, which lets linear-inversion estimates with small negativity be
    scored against a valid target.
    """
    if rho.dims != sigma.dims:
        raise RegisterError(f"dimension mismatch {rho.dims} vs {sigma.dims}")
    s = psd_sqrt(rho.data, clamp=clamp)
    inner = s @ sigma.data @ s
    lam = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    if lam.min() < -PSD_TOL and not clamp:
        raise StateError(f"negative eigenvalue {lam.min():.3g} in fidelity")
    f = float(np.sum(np.sqrt(np.clip(lam, 0.0, None))))
    return min(max(f, 0.0), 1.0)


def purity(rho: DensityMatrix) -> float:
    return float(np.real(np.einsum("ij,ji->", rho.data, rho.data)))


def pauli_string(word: str) -> np.ndarray:
    """Dense matrix for a Pauli word such as ``"XZ"`` (first letter = first qubit)."""
    return reduce(np.kron, [PAULI[c] for c in word])


def random_density_matrix(dims: Sequence[int], rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Ginibre-distributed random state; used by tests and demos."""
    d = int(np.prod(dims))
    k = d if rank is None else rank
    g = rng.normal(size=(d, k)) + 1j * rng.normal(size=(d, k))
    m = g @ g.conj().T
    return m / np.trace(m).real
