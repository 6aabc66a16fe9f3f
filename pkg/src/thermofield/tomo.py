"""Readout models, Pauli estimation and two-qubit tomography with leakage.

Each transmon reads out as one bit ``m = +-1``. Averages are modelled by a
measurement operator diagonal in the level basis,

    M_i = c_I I + c_Z Z + c_2 |2><2|         (single site)
    M_ji = sum over P, Q in {I, Z, |2><2|} of c_PQ P_j Q_i   (pair, 9 coefficients)

where ``I`` is the identity on all three levels and ``Z`` acts on the qubit
subspace only, so a fully leaked site reads ``c_I + c_2``. Basis changes are
pre-rotations, which leave |2> untouched. Estimators combine settings with
opposite signs in balanced pairs, so the leaked-level coefficients cancel.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .circuit import Gate, rxy_matrix
from .qudit import (
    PAULI,
    DensityMatrix,
    SiteSpec,
    make_register,
    partial_trace,
    qubit_lift,
    site_index,
)
from .tfd import SITES, SYSTEMS

DEFAULT_COST_SHOTS = 4096
DEFAULT_TOMO_SHOTS = 16384

_STREAM_CALIB, _STREAM_COST, _STREAM_TOMO = 1, 2, 3


# ---------------------------------------------------------------------------
# readout coefficients

def _check_coeff(name: str, value: float) -> None:
    if not -1.0 - 1e-12 <= value <= 1.0 + 1e-12:
        raise ValueError(f"readout coefficient {name}={value} outside [-1, 1]")


@dataclass(frozen=True)
class SiteReadout:
    c_I: float = 0.0
    c_Z: float = 1.0
    c_2: float = -1.0

    def __post_init__(self):
        for k, v in (("c_I", self.c_I), ("c_Z", self.c_Z), ("c_2", self.c_2)):
            _check_coeff(k, v)
        for k, v in zip("012", self.levels()):
            _check_coeff(f"level {k} response", v)

    def levels(self) -> np.ndarray:
        """Mean readout value for levels 0, 1, 2."""
        return self.c_I * _V_I + self.c_Z * _V_Z + self.c_2 * _V_2


# level profiles of I, Z and |2><2| on one transmon; I spans all three levels
_V_I = np.array([1.0, 1.0, 1.0])
_V_Z = np.array([1.0, -1.0, 0.0])
_V_2 = np.array([0.0, 0.0, 1.0])
_PROFILES = {"I": _V_I, "Z": _V_Z, "2": _V_2}

PAIR_FIELDS = ("c_II", "c_IZ", "c_ZI", "c_ZZ", "c_2I", "c_2Z", "c_I2", "c_Z2", "c_22")
CALIBRATED_PAIR_FIELDS = PAIR_FIELDS[:4]


@dataclass(frozen=True)
class PairReadout:
    """Correlator coefficients for sites ``(j, i)``; the first letter is site j."""

    c_II: float = 0.0
    c_IZ: float = 0.0
    c_ZI: float = 0.0
    c_ZZ: float = 1.0
    c_2I: float = 0.0
    c_2Z: float = 0.0
    c_I2: float = 0.0
    c_Z2: float = 0.0
    c_22: float = 0.0

    def __post_init__(self):
        for k in PAIR_FIELDS:
            _check_coeff(k, getattr(self, k))
        for (l, k), v in np.ndenumerate(self.levels()):
            _check_coeff(f"level ({l},{k}) response", v)

    def levels(self) -> np.ndarray:
        """3x3 table of mean correlator values c[l_j, k_i]."""
        return sum(
            getattr(self, f) * np.outer(_PROFILES[f[2]], _PROFILES[f[3]]) for f in PAIR_FIELDS
        )

    def swapped(self) -> "PairReadout":
        return PairReadout(
            c_II=self.c_II, c_IZ=self.c_ZI, c_ZI=self.c_IZ, c_ZZ=self.c_ZZ,
            c_2I=self.c_I2, c_2Z=self.c_Z2, c_I2=self.c_2I, c_Z2=self.c_2Z, c_22=self.c_22,
        )

    @classmethod
    def product(cls, j: SiteReadout, i: SiteReadout) -> "PairReadout":
        """Coefficients of two independent single-site readouts."""
        return cls(
            c_II=j.c_I * i.c_I, c_IZ=j.c_I * i.c_Z, c_ZI=j.c_Z * i.c_I, c_ZZ=j.c_Z * i.c_Z,
            c_2I=j.c_2 * i.c_I, c_2Z=j.c_2 * i.c_Z, c_I2=j.c_I * i.c_2, c_Z2=j.c_Z * i.c_2,
            c_22=j.c_2 * i.c_2,
        )


@dataclass(frozen=True)
class MeasurementModel:
    """Per-site and per-pair readout coefficients.

    Pairs not listed explicitly use the product of the two site models, which
    is what independent per-site confusion produces.
    """

    sites: Mapping[str, SiteReadout]
    pairs: Mapping[tuple[str, str], PairReadout] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sites", dict(self.sites))
        pairs = {}
        for (j, i), p in self.pairs.items():
            if j not in self.sites or i not in self.sites:
                raise ValueError(f"pair ({j},{i}) names a site without a readout model")
            if (i, j) in pairs:
                raise ValueError(f"pair ({j},{i}) given in both orientations")
            pairs[(j, i)] = p
        object.__setattr__(self, "pairs", pairs)

    def site(self, label: str) -> SiteReadout:
        try:
            return self.sites[label]
        except KeyError:
            raise ValueError(f"no readout model for site {label!r}") from None

    def pair(self, j: str, i: str) -> PairReadout:
        if (j, i) in self.pairs:
            return self.pairs[(j, i)]
        if (i, j) in self.pairs:
            return self.pairs[(i, j)].swapped()
        return PairReadout.product(self.site(j), self.site(i))

    def is_product(self, tol: float = 1e-12) -> bool:
        for (j, i), p in self.pairs.items():
            q = PairReadout.product(self.site(j), self.site(i))
            if any(abs(getattr(p, f) - getattr(q, f)) > tol for f in PAIR_FIELDS):
                return False
        return True

    def with_pair(self, j: str, i: str, **coeffs: float) -> "MeasurementModel":
        """Copy with some coefficients of pair (j, i) replaced."""
        pairs = {k: v for k, v in self.pairs.items() if k not in ((j, i), (i, j))}
        pairs[(j, i)] = replace(self.pair(j, i), **coeffs)
        return MeasurementModel(self.sites, pairs)

    def with_site(self, label: str, **coeffs: float) -> "MeasurementModel":
        """Copy with some coefficients of ``label`` replaced; explicit pairs are kept."""
        sites = dict(self.sites)
        sites[label] = replace(self.site(label), **coeffs)
        return MeasurementModel(sites, self.pairs)

    @classmethod
    def ideal(cls, labels: Iterable[str] = SITES, c_2: float = -1.0) -> "MeasurementModel":
        return cls({lab: SiteReadout(0.0, 1.0, c_2) for lab in labels})

    @classmethod
    def from_assignment_fidelities(
        cls, fidelities: Mapping[str, float], leak_offset: float = 0.02
    ) -> "MeasurementModel":
        """Symmetric confusion eps = 1 - F per site; |2> reads like |1> plus an offset."""
        sites = {}
        for lab, f in fidelities.items():
            eps = 1.0 - f
            c_i, c_z = 0.0, 1.0 - 2.0 * eps
            c_2 = float(np.clip(c_i - c_z + leak_offset, -1.0, 1.0))
            sites[lab] = SiteReadout(c_i, c_z, c_2)
        return cls(sites)

    @classmethod
    def from_device(cls, config) -> "MeasurementModel":
        return cls.from_assignment_fidelities(
            {lab: s.assignment_fidelity for lab, s in config.sites.items()},
            leak_offset=config.readout_leak_offset,
        )


# ---------------------------------------------------------------------------
# basis settings

BASES = ("+X", "-X", "+Y", "-Y", "+Z", "-Z")


@dataclass(frozen=True)
class BasisSetting:
    """Signed measurement basis per site, e.g. ``(("B2", "+Z"), ("A1", "-X"))``."""

    bases: tuple[tuple[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "bases", tuple((str(l), str(b)) for l, b in self.bases))
        labels = [l for l, _ in self.bases]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate site in basis setting")
        for _, b in self.bases:
            if b not in BASES:
                raise ValueError(f"unknown basis {b!r}")

    @classmethod
    def of(cls, **bases: str) -> "BasisSetting":
        return cls(tuple(bases.items()))

    def basis(self, label: str) -> str:
        return dict(self.bases)[label]

    def sign(self, label: str) -> int:
        return 1 if self.basis(label)[0] == "+" else -1

    def axis(self, label: str) -> str:
        return self.basis(label)[1]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(l for l, _ in self.bases)

    def __str__(self) -> str:
        return " ".join(f"{b}{l}" for l, b in self.bases)


_PREROTATION_CANDIDATES = {
    "I": None,
    "RX180": (0.0, math.pi),
    "RX+90": (0.0, math.pi / 2),
    "RX-90": (0.0, -math.pi / 2),
    "RY+90": (math.pi / 2, math.pi / 2),
    "RY-90": (math.pi / 2, -math.pi / 2),
}


@lru_cache(maxsize=None)
def prerotation_angles(basis: str) -> tuple[float, float] | None:
    """RXY angles (phi, theta) whose Heisenberg image of Z is the signed Pauli ``basis``.

    Found by search over the standard pre-rotation set, so the sign conventions
    follow directly from :func:`rxy_matrix`.
    """
    target = (1 if basis[0] == "+" else -1) * PAULI[basis[1]]
    for angles in _PREROTATION_CANDIDATES.values():
        u = np.eye(2) if angles is None else rxy_matrix(*angles)
        if np.allclose(u.conj().T @ PAULI["Z"] @ u, target, atol=1e-12):
            return angles
    raise ValueError(f"no pre-rotation realises basis {basis}")


def prerotation_gates(setting: BasisSetting) -> list[Gate]:
    gates = []
    for lab, b in setting.bases:
        angles = prerotation_angles(b)
        if angles is not None:
            gates.append(Gate("RXY", (lab,), angles))
    return gates


def _prerotation_unitary(basis: str, dim: int) -> np.ndarray:
    angles = prerotation_angles(basis)
    u = np.eye(2, dtype=complex) if angles is None else rxy_matrix(*angles)
    return qubit_lift(u, dim)


def cost_settings() -> list[BasisSetting]:
    """The 18 four-site settings used to estimate the cost terms.

    Nine Z-family settings followed by the same sign patterns in the X family.
    Sign patterns list the negated sites in register order (B2, B1, A2, A1).
    """
    negated = [(), ("A1",), ("A2",), ("B1",), ("B2",), ("A2", "A1"), ("B2", "B1"), ("B1", "A1"), ("B2", "A2")]
    out = []
    for axis in ("Z", "X"):
        for neg in negated:
            out.append(BasisSetting(tuple((s, ("-" if s in neg else "+") + axis) for s in SITES)))
    return out


def tomography_settings(sites: Sequence[str]) -> list[BasisSetting]:
    """All 36 combinations of signed bases on two sites."""
    j, i = sites
    return [BasisSetting(((j, bj), (i, bi))) for bj in BASES for bi in BASES]


# ---------------------------------------------------------------------------
# measurement simulation

@dataclass(frozen=True)
class MeasurementAverages:
    setting: BasisSetting
    singles: Mapping[str, float]
    pairs: Mapping[tuple[str, str], float]
    shots: int | None  # None: exact expectation values

    def pair(self, j: str, i: str) -> float:
        if (j, i) in self.pairs:
            return self.pairs[(j, i)]
        return self.pairs[(i, j)]


def _rotated_populations(rho: DensityMatrix, setting: BasisSetting) -> tuple[np.ndarray, tuple[str, ...]]:
    """Level populations of the measured sites after pre-rotation, as a tensor."""
    labels = setting.labels
    red = partial_trace(rho, labels) if set(labels) != set(rho.labels) else rho
    order = [l for l in red.labels]  # register order
    dims = red.dims
    u = np.array([[1.0]], dtype=complex)
    for lab, d in zip(order, dims):
        u = np.kron(u, _prerotation_unitary(setting.basis(lab), d))
    rot = u @ red.data @ u.conj().T
    p = np.clip(np.real(np.diag(rot)), 0.0, None)
    p = p / p.sum()
    return p.reshape(dims), tuple(order)


def _stream(seed: int, tag: int, index: int, rep: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag, index, rep]))


def simulate_measurement(
    rho: DensityMatrix,
    setting: BasisSetting,
    model: MeasurementModel,
    shots: int | None = None,
    rng: np.random.Generator | None = None,
    pairs: Sequence[tuple[str, str]] | None = None,
) -> MeasurementAverages:
    """Pre-rotate, read out and average.

    ``shots=None`` returns exact expectations Tr(M rho_rot). Otherwise levels
    are sampled from the rotated populations and each site's bit is drawn
    independently with P(+1 | level k) = (1 + c_k) / 2, which requires a
    product pair model.
    """
    labels = setting.labels
    if pairs is None:
        pairs = list(itertools.combinations(labels, 2))
    p, order = _rotated_populations(rho, setting)
    axes = {lab: k for k, lab in enumerate(order)}
    n = len(order)
    singles: dict[str, float] = {}
    corr: dict[tuple[str, str], float] = {}
    if shots is None:
        for lab in labels:
            marg = p.sum(axis=tuple(a for a in range(n) if a != axes[lab]))
            singles[lab] = float(model.site(lab).levels()[: len(marg)] @ marg)
        for j, i in pairs:
            keep = sorted((axes[j], axes[i]))
            marg = p.sum(axis=tuple(a for a in range(n) if a not in keep))
            if axes[j] > axes[i]:
                marg = marg.T
            c = model.pair(j, i).levels()[: marg.shape[0], : marg.shape[1]]
            corr[(j, i)] = float(np.sum(c * marg))
        return MeasurementAverages(setting, singles, corr, None)

    if shots < 1:
        raise ValueError("shots must be >= 1")
    if not model.is_product():
        raise ValueError("shot sampling needs independent per-site readout (product pair model)")
    if rng is None:
        rng = np.random.default_rng()
    flat = p.ravel()
    idx = rng.choice(flat.size, size=shots, p=flat)
    levels = np.stack(np.unravel_index(idx, p.shape), axis=1)
    bits = np.empty((shots, n))
    for lab, k in axes.items():
        prob_plus = 0.5 * (1.0 + model.site(lab).levels())[levels[:, k]]
        bits[:, k] = np.where(rng.random(shots) < prob_plus, 1.0, -1.0)
    for lab in labels:
        singles[lab] = float(bits[:, axes[lab]].mean())
    for j, i in pairs:
        corr[(j, i)] = float((bits[:, axes[j]] * bits[:, axes[i]]).mean())
    return MeasurementAverages(setting, singles, corr, shots)


def measure_settings(
    rho: DensityMatrix,
    settings: Sequence[BasisSetting],
    model: MeasurementModel,
    shots: int | None,
    seed: int = 0,
    tag: int = _STREAM_COST,
    rep: int = 0,
    pairs: Sequence[tuple[str, str]] | None = None,
) -> list[MeasurementAverages]:
    """Measure each setting with its own derived random stream."""
    return [
        simulate_measurement(
            rho, s, model, shots, None if shots is None else _stream(seed, tag, k, rep), pairs
        )
        for k, s in enumerate(settings)
    ]


# ---------------------------------------------------------------------------
# calibration

def _calibration_register(labels: Sequence[str], dim: int = 2) -> tuple[SiteSpec, ...]:
    return make_register(labels, dim)


def calibration_averages(
    model_truth: MeasurementModel,
    labels: Sequence[str] = SITES,
    shots: int | None = None,
    seed: int = 0,
    rep: int = 0,
) -> list[tuple[tuple[int, ...], MeasurementAverages]]:
    """Z-basis averages for every computational-state preparation."""
    reg = _calibration_register(labels)
    setting = BasisSetting(tuple((lab, "+Z") for lab in labels))
    out = []
    for k, bits in enumerate(itertools.product((0, 1), repeat=len(labels))):
        rho = DensityMatrix.basis_state(reg, bits)
        rng = None if shots is None else _stream(seed, _STREAM_CALIB, k, rep)
        out.append((bits, simulate_measurement(rho, setting, model_truth, shots, rng)))
    return out


def calibrate(
    model_truth: MeasurementModel,
    labels: Sequence[str] = SITES,
    shots: int | None = None,
    seed: int = 0,
    rep: int = 0,
) -> MeasurementModel:
    """Least-squares c_I, c_Z per site and c_II..c_ZZ per pair from 2^n preparations.

    Leaked-level coefficients cannot be seen with computational preparations and
    are copied from ``model_truth``.
    """
    data = calibration_averages(model_truth, labels, shots, seed, rep)
    z = np.array([[1 - 2 * b for b in bits] for bits, _ in data], dtype=float)
    sites = {}
    for k, lab in enumerate(labels):
        design = np.column_stack([np.ones(len(z)), z[:, k]])
        y = np.array([avg.singles[lab] for _, avg in data])
        if np.linalg.matrix_rank(design) < 2:
            raise AssertionError("calibration design is singular")
        (c_i, c_z), *_ = np.linalg.lstsq(design, y, rcond=None)
        sites[lab] = SiteReadout(float(c_i), float(c_z), model_truth.site(lab).c_2)
    pairs = {}
    for a, b in itertools.combinations(range(len(labels)), 2):
        j, i = labels[a], labels[b]
        design = np.column_stack([np.ones(len(z)), z[:, b], z[:, a], z[:, a] * z[:, b]])
        if np.linalg.matrix_rank(design) < 4:
            raise AssertionError("calibration design is singular")
        y = np.array([avg.pair(j, i) for _, avg in data])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        truth = model_truth.pair(j, i)
        pairs[(j, i)] = replace(truth, **dict(zip(CALIBRATED_PAIR_FIELDS, map(float, coef))))
    return MeasurementModel(sites, pairs)


# ---------------------------------------------------------------------------
# cost-term estimation

_COST_PAIRS = {
    "ZZ_A": ("Z", [("A2", "A1")]),
    "ZZ_B": ("Z", [("B2", "B1")]),
    "ZZ_BA": ("Z", [("B2", "A2"), ("B1", "A1")]),
    "XX_BA": ("X", [("B2", "A2"), ("B1", "A1")]),
}


def _fit_single(avgs: Sequence[MeasurementAverages], lab: str, axis: str, model: MeasurementModel) -> float:
    site = model.site(lab)
    rows = [a for a in avgs if a.setting.axis(lab) == axis]
    s = np.array([a.setting.sign(lab) for a in rows], dtype=float)
    y = np.array([a.singles[lab] for a in rows]) - site.c_I
    return float(np.dot(s, y) / (site.c_Z * np.dot(s, s)))


def _fit_pair(avgs: Sequence[MeasurementAverages], j: str, i: str, axis: str, model: MeasurementModel) -> float:
    c = model.pair(j, i)
    rows = [a for a in avgs if a.setting.axis(j) == axis and a.setting.axis(i) == axis]
    sj = np.array([a.setting.sign(j) for a in rows], dtype=float)
    si = np.array([a.setting.sign(i) for a in rows], dtype=float)
    design = np.column_stack([si * c.c_IZ, sj * c.c_ZI, sj * si * c.c_ZZ])
    y = np.array([a.pair(j, i) for a in rows]) - c.c_II
    if np.linalg.matrix_rank(design[:, 2:]) < 1 or len(rows) < 3:
        raise ValueError(f"settings cannot resolve <{axis}{axis}> on ({j},{i})")
    # drop nuisance columns whose coefficient vanishes (e.g. c_IZ = 0)
    keep = [k for k in range(3) if np.any(np.abs(design[:, k]) > 1e-14)]
    if 2 not in keep:
        raise ValueError(f"c_ZZ vanishes for pair ({j},{i})")
    coef, *_ = np.linalg.lstsq(design[:, keep], y, rcond=None)
    if np.linalg.matrix_rank(design[:, keep]) < len(keep):
        raise ValueError(f"settings cannot resolve <{axis}{axis}> on ({j},{i})")
    return float(coef[keep.index(2)])


def estimate_cost_terms(avgs: Sequence[MeasurementAverages], model: MeasurementModel) -> dict[str, float]:
    """Least-squares inversion of the 18 cost-setting averages into the six cost terms."""
    needed = {str(s) for s in cost_settings()}
    have = {str(a.setting) for a in avgs}
    missing = needed - have
    if missing:
        raise ValueError(f"missing measurement settings: {sorted(missing)}")
    out = {}
    for system in ("A", "B"):
        out[f"X_{system}"] = sum(_fit_single(avgs, lab, "X", model) for lab in SYSTEMS[system])
    for term, (axis, pairs) in _COST_PAIRS.items():
        out[term] = sum(_fit_pair(avgs, j, i, axis, model) for j, i in pairs)
    return {k: out[k] for k in ("X_A", "X_B", "ZZ_A", "ZZ_B", "XX_BA", "ZZ_BA")}


def measure_cost_terms(
    rho: DensityMatrix,
    model_truth: MeasurementModel,
    shots: int | None = DEFAULT_COST_SHOTS,
    seed: int = 0,
    rep: int = 0,
    calibrated: MeasurementModel | None = None,
) -> dict[str, float]:
    """Calibrate (unless given), measure the 18 settings and invert."""
    if calibrated is None:
        calibrated = calibrate(model_truth, shots=shots, seed=seed, rep=rep)
    avgs = measure_settings(rho, cost_settings(), model_truth, shots, seed, _STREAM_COST, rep)
    return estimate_cost_terms(avgs, calibrated)


# ---------------------------------------------------------------------------
# two-qubit tomography

PAULI_LABELS_2Q = tuple(
    a + b for a in "IXYZ" for b in "IXYZ" if a + b != "II"
)


@dataclass(frozen=True)
class TomographyResult:
    rho_exp: DensityMatrix
    pauli_estimates: Mapping[str, float]
    shot_counts: tuple[int, ...]

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.rho_exp.data).min())


def _system_sites(system) -> tuple[str, str]:
    if isinstance(system, str):
        return SYSTEMS[system]
    sites = tuple(system)
    if len(sites) != 2:
        raise ValueError("tomography needs exactly two sites")
    return sites


def estimate_paulis(avgs: Sequence[MeasurementAverages], sites: tuple[str, str], model: MeasurementModel) -> dict[str, float]:
    """Balanced estimators over the 36 settings.

    ``<P_i>`` uses the 12 settings with site i along +-P; ``<Q_j P_i>`` uses the
    four sign combinations of (Q_j, P_i).
    """
    j, i = sites
    est: dict[str, float] = {}
    for pos, lab in ((0, j), (1, i)):
        cz = model.site(lab).c_Z
        for ax in "XYZ":
            rows = [a for a in avgs if a.setting.axis(lab) == ax]
            val = sum(a.setting.sign(lab) * a.singles[lab] for a in rows) / (len(rows) * cz)
            word = ax + "I" if pos == 0 else "I" + ax
            est[word] = float(val)
    czz = model.pair(j, i).c_ZZ
    for q in "XYZ":
        for p in "XYZ":
            rows = [a for a in avgs if a.setting.axis(j) == q and a.setting.axis(i) == p]
            val = sum(a.setting.sign(j) * a.setting.sign(i) * a.pair(j, i) for a in rows) / (len(rows) * czz)
            est[q + p] = float(val)
    return {w: est[w] for w in PAULI_LABELS_2Q}


def rho_from_paulis(estimates: Mapping[str, float], register) -> DensityMatrix:
    m = np.eye(4, dtype=complex)
    for w, v in estimates.items():
        m = m + v * np.kron(PAULI[w[0]], PAULI[w[1]])
    return DensityMatrix.from_unchecked(register, m / 4.0, check_psd=False)


def tomography_2q(
    rho: DensityMatrix,
    system="A",
    model: MeasurementModel | None = None,
    shots: int | None = DEFAULT_TOMO_SHOTS,
    seed: int = 0,
    rep: int = 0,
    calibrated: MeasurementModel | None = None,
) -> TomographyResult:
    """Two-qubit tomography of ``system`` (``"A"``, ``"B"`` or two site labels).

    ``model`` is the true readout used to simulate outcomes; ``calibrated``
    (default: ``model``) is what the estimator believes. The result is
    Hermitian with unit trace; negative eigenvalues from linear inversion are
    kept.
    """
    sites = _system_sites(system)
    for s in sites:
        site_index(rho.register, s)
    if model is None:
        model = MeasurementModel.ideal(sites)
    red = partial_trace(rho, sites)
    if red.labels != sites:
        # reorder to (j, i) as requested
        red = _reorder(red, sites)
    settings = tomography_settings(sites)
    avgs = measure_settings(red, settings, model, shots, seed, _STREAM_TOMO, rep, pairs=[sites])
    est = estimate_paulis(avgs, sites, model if calibrated is None else calibrated)
    counts = tuple(0 if shots is None else shots for _ in settings)
    return TomographyResult(rho_from_paulis(est, make_register(sites)), est, counts)


def _reorder(rho: DensityMatrix, labels: Sequence[str]) -> DensityMatrix:
    perm = [rho.labels.index(l) for l in labels]
    n = len(perm)
    t = rho.data.reshape(rho.dims + rho.dims).transpose(perm + [n + p for p in perm])
    d = rho.data.shape[0]
    reg = tuple(rho.register[p] for p in perm)
    return DensityMatrix.from_unchecked(reg, t.reshape(d, d), check_psd=rho.check_psd)


def leakage_map(rho2: DensityMatrix) -> DensityMatrix:
    """Element-wise image of a two-qutrit state under leakage-unaware tomography.

    Qubit-subspace elements are kept; a site leaked in both the bra and ket is
    replaced by the maximally mixed qubit on that site; everything else is
    dropped.
    """
    if rho2.dims != (3, 3):
        raise ValueError(f"leakage_map needs a two-qutrit state, got dims {rho2.dims}")
    tr = np.trace(rho2.data).real
    if abs(tr - 1.0) > 1e-9:
        raise ValueError(f"input trace {tr} is not 1")
    t = rho2.data.reshape(3, 3, 3, 3)  # [l', k', l, k]
    q = slice(0, 2)
    out = t[q, q, q, q].copy()
    half_eye = np.eye(2) / 2
    # |l', 2><l, 2| -> 1/2 |l'><l| (x) I
    out += np.einsum("ab,cd->acbd", t[q, 2, q, 2], half_eye)
    # |2, k'><2, k| -> 1/2 I (x) |k'><k|
    out += np.einsum("ab,cd->cadb", t[2, q, 2, q], half_eye)
    # |22><22| -> I/4
    out += t[2, 2, 2, 2] * np.einsum("ab,cd->acbd", half_eye, half_eye)
    reg = tuple(SiteSpec(s.label, 2) for s in rho2.register)
    return DensityMatrix.from_unchecked(reg, out.reshape(4, 4), check_psd=False)


# ---------------------------------------------------------------------------
# raw-average dump

def _dump_columns(labels: Sequence[str]) -> list[tuple[str, str]]:
    return list(itertools.combinations(labels, 2))


def dump_averages(
    calibration: Sequence[tuple[tuple[int, ...], MeasurementAverages]],
    averages: Sequence[MeasurementAverages],
    labels: Sequence[str] = SITES,
) -> str:
    """Delimited table: 16 calibration rows then one row per basis setting."""
    pairs = _dump_columns(labels)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "index", "setting"] + [f"m_{l}" for l in labels] + [f"m_{j}{i}" for j, i in pairs])

    def fmt(x):
        return "" if x is None else f"{x:.12g}"

    def row(kind, k, name, a):
        w.writerow(
            [kind, k, name]
            + [fmt(a.singles.get(l)) for l in labels]
            + [fmt(a.pairs.get((j, i), a.pairs.get((i, j)))) for j, i in pairs]
        )

    for k, (bits, a) in enumerate(calibration):
        row("calibration", k, "".join(map(str, bits)), a)
    for k, a in enumerate(averages):
        row("setting", k, str(a.setting), a)
    return buf.getvalue()
