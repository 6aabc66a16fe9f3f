"""Incremental error models for the four-transmon processor.

Level 0 is ideal. Each further level adds one mechanism:

1. amplitude and phase damping while idling (bias-point T1, T2 echo),
2. reduced T2 on the fluxed transmon during CZ gates,
3. residual ZZ crosstalk between coupled transmons while idling,
4. leakage |11> <-> |02> during CZ gates.

Gates are instantaneous; the time around them is idling, split into slices of
at most ``trotter_slice`` with ZZ phases at the slice boundaries.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import expm

from .circuit import Circuit, Gate, apply_local, local_gate_matrix
from .qudit import DensityMatrix, SiteSpec, register_dims, site_index

LEVEL_MECHANISMS = {
    0: frozenset(),
    1: frozenset({"damping"}),
    2: frozenset({"damping", "flux_dephasing"}),
    3: frozenset({"damping", "flux_dephasing", "zz_crosstalk"}),
    4: frozenset({"damping", "flux_dephasing", "zz_crosstalk", "leakage"}),
}

# Measured echo T2 may exceed 2*T1 by this relative margin (measurement
# scatter); the channel then has zero pure dephasing.
T2_LIMIT_TOL = 0.05

# RB leakage is quoted per two-qubit Clifford; 1.5 CZ per Clifford on average
CZ_PER_CLIFFORD = 1.5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SiteParams:
    t1: float
    t2_echo: float
    sweetspot_freq: float = float("nan")
    readout_freq: float = float("nan")
    assignment_fidelity: float = 1.0

    def __post_init__(self):
        if not (self.t1 > 0 and self.t2_echo > 0):
            raise ConfigError("T1 and T2 must be positive")
        if self.t2_echo > 2 * self.t1 * (1 + T2_LIMIT_TOL):
            raise ConfigError(f"T2 {self.t2_echo} exceeds 2*T1 {2 * self.t1}")
        if not 0.5 <= self.assignment_fidelity <= 1.0:
            raise ConfigError("assignment fidelity must lie in [0.5, 1]")


@dataclass(frozen=True)
class PairParams:
    zz: float = 0.0
    fluxed: str | None = None
    leakage_l1: float = 0.0
    t2_flux: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.leakage_l1 <= 0.1:
            raise ConfigError(f"leakage L1 {self.leakage_l1} outside [0, 0.1]")
        if self.t2_flux is not None and self.t2_flux <= 0:
            raise ConfigError("T2 during flux pulses must be positive")


def pair_key(a: str, b: str) -> tuple[str, str]:
    return tuple(sorted((a, b)))


@dataclass(frozen=True)
class DeviceConfig:
    sites: Mapping[str, SiteParams]
    pairs: Mapping[tuple[str, str], PairParams]
    single_qubit_gate_time: float = 20e-9
    cz_time: float = 80e-9
    cz_idle_block: float = 35e-9
    cz_margin: float = 10e-9
    trotter_slice: float = 10e-9
    leakage_dephasing: bool = False
    readout_leak_offset: float = 0.02

    def __post_init__(self):
        pairs = {}
        for (a, b), p in self.pairs.items():
            for s in (a, b):
                if s not in self.sites:
                    raise ConfigError(f"pair ({a},{b}) names unknown site {s}")
            if p.fluxed is not None and p.fluxed not in (a, b):
                raise ConfigError(f"fluxed site {p.fluxed} not in pair ({a},{b})")
            if p.t2_flux is not None and p.fluxed is not None:
                if p.t2_flux > 2 * self.sites[p.fluxed].t1 * (1 + T2_LIMIT_TOL):
                    raise ConfigError(f"flux T2 for ({a},{b}) exceeds 2*T1")
            key = pair_key(a, b)
            if key in pairs:
                raise ConfigError(f"pair ({a},{b}) given twice")
            pairs[key] = p
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "sites", dict(self.sites))
        blocks = 2 * self.cz_idle_block + self.cz_margin
        if abs(blocks - self.cz_time) > 1e-12:
            raise ConfigError(f"CZ timing {blocks} does not add up to cz_time {self.cz_time}")

    def pair(self, a: str, b: str) -> PairParams:
        try:
            return self.pairs[pair_key(a, b)]
        except KeyError:
            raise ConfigError(f"pair ({a},{b}) not in device config") from None

    def zz(self, a: str, b: str) -> float:
        p = self.pairs.get(pair_key(a, b))
        return 0.0 if p is None else p.zz

    def with_overrides(self, overrides: Mapping[str, str]) -> "DeviceConfig":
        flat = self.to_flat()
        for k, v in overrides.items():
            k = _normalize_key(k)
            if k not in flat:
                raise ConfigError(f"unknown config key {k!r}")
            flat[k] = str(v)
        return DeviceConfig.from_flat(flat)

    # flat namespaced key/value representation -----------------------------
    def to_flat(self) -> dict[str, str]:
        flat = {
            "timing.single_qubit_gate": repr(self.single_qubit_gate_time),
            "timing.cz_gate": repr(self.cz_time),
            "timing.cz_idle_block": repr(self.cz_idle_block),
            "timing.cz_margin": repr(self.cz_margin),
            "timing.trotter_slice": repr(self.trotter_slice),
            "leakage.dephase_leaked": str(self.leakage_dephasing).lower(),
            "readout.leak_offset": repr(self.readout_leak_offset),
        }
        for lab, s in self.sites.items():
            flat[f"site.{lab}.t1"] = repr(s.t1)
            flat[f"site.{lab}.t2_echo"] = repr(s.t2_echo)
            flat[f"site.{lab}.sweetspot_freq"] = repr(s.sweetspot_freq)
            flat[f"site.{lab}.readout_freq"] = repr(s.readout_freq)
            flat[f"site.{lab}.assignment_fidelity"] = repr(s.assignment_fidelity)
        for (a, b), p in self.pairs.items():
            pre = f"pair.{a}-{b}"
            flat[f"{pre}.zz"] = repr(p.zz)
            flat[f"{pre}.fluxed"] = p.fluxed or ""
            flat[f"{pre}.leakage_l1"] = repr(p.leakage_l1)
            flat[f"{pre}.t2_flux"] = "" if p.t2_flux is None else repr(p.t2_flux)
        return flat

    @classmethod
    def from_flat(cls, flat: Mapping[str, str]) -> "DeviceConfig":
        sites: dict[str, dict] = {}
        pairs: dict[tuple[str, str], dict] = {}
        top: dict[str, str] = {}
        for key, raw in flat.items():
            parts = key.split(".")
            if parts[0] == "site" and len(parts) == 3:
                sites.setdefault(parts[1], {})[parts[2]] = raw
            elif parts[0] == "pair" and len(parts) == 3:
                a, _, b = parts[1].partition("-")
                pairs.setdefault((a, b), {})[parts[2]] = raw
            else:
                top[key] = raw

        def num(d, k, default=None):
            v = d.get(k, "")
            if v == "" or v is None:
                if default is None:
                    raise ConfigError(f"missing value for {k}")
                return default
            try:
                return float(v)
            except ValueError:
                raise ConfigError(f"bad number {v!r} for {k}") from None

        site_objs = {
            lab: SiteParams(
                t1=num(d, "t1"),
                t2_echo=num(d, "t2_echo"),
                sweetspot_freq=num(d, "sweetspot_freq", float("nan")),
                readout_freq=num(d, "readout_freq", float("nan")),
                assignment_fidelity=num(d, "assignment_fidelity", 1.0),
            )
            for lab, d in sites.items()
        }
        pair_objs = {
            (a, b): PairParams(
                zz=num(d, "zz", 0.0),
                fluxed=d.get("fluxed") or None,
                leakage_l1=num(d, "leakage_l1", 0.0),
                t2_flux=(num(d, "t2_flux") if d.get("t2_flux") else None),
            )
            for (a, b), d in pairs.items()
        }
        known = {
            "timing.single_qubit_gate", "timing.cz_gate", "timing.cz_idle_block", "timing.cz_margin",
            "timing.trotter_slice", "leakage.dephase_leaked", "readout.leak_offset",
        }
        unknown = set(top) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        dephase = top.get("leakage.dephase_leaked", "false").strip().lower()
        if dephase not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"leakage.dephase_leaked must be a boolean, got {dephase!r}")
        return cls(
            sites=site_objs,
            pairs=pair_objs,
            single_qubit_gate_time=num(top, "timing.single_qubit_gate", 20e-9),
            cz_time=num(top, "timing.cz_gate", 80e-9),
            cz_idle_block=num(top, "timing.cz_idle_block", 35e-9),
            cz_margin=num(top, "timing.cz_margin", 10e-9),
            trotter_slice=num(top, "timing.trotter_slice", 10e-9),
            leakage_dephasing=dephase in ("true", "1", "yes"),
            readout_leak_offset=num(top, "readout.leak_offset", 0.02),
        )


def _normalize_key(key: str) -> str:
    parts = key.split(".")
    if parts[0] == "pair" and len(parts) == 3 and "-" in parts[1]:
        a, _, b = parts[1].partition("-")
        parts[1] = "-".join(pair_key(a, b))
    return ".".join(parts)


def _flatten_ini(parser: configparser.ConfigParser) -> dict[str, str]:
    flat = {}
    for section in parser.sections():
        for k, v in parser.items(section):
            flat[f"{section}.{k}"] = v.strip()
    return flat


def load_device_config(path: str | Path | None = None, overrides: Mapping[str, str] | None = None) -> DeviceConfig:
    """Read a device file (INI sections as key namespaces, SI units).

    ``None`` loads the bundled default carrying the measured transmon
    parameters of the reference device.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    if path is None:
        text = resources.files("thermofield.data").joinpath("device_default.ini").read_text()
        parser.read_string(text)
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        parser.read(p)
    cfg = DeviceConfig.from_flat(_flatten_ini(parser))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


def dump_device_config(cfg: DeviceConfig) -> str:
    sections: dict[str, list[str]] = {}
    for key, val in cfg.to_flat().items():
        sec, _, k = key.rpartition(".")
        sections.setdefault(sec, []).append(f"{k} = {val}")
    return "\n".join(f"[{sec}]\n" + "\n".join(lines) + "\n" for sec, lines in sections.items())


def per_gate_leakage(per_clifford: float) -> float:
    """Convert RB leakage per two-qubit Clifford into per-CZ leakage L1."""
    return per_clifford / CZ_PER_CLIFFORD


def flux_dephasing_t2(
    sweetspot_freq: float,
    detuning: float,
    t1: float,
    t2_echo: float,
    sqrt_a: float = 1e-6,
) -> float:
    """Echo T2 of a transmon held ``detuning`` below its sweetspot, 1/f flux noise.

    Tunability f(Phi) = f_max sqrt|cos(pi Phi / Phi0)|; the added echo dephasing
    rate is sqrt(A ln 2) |d omega / d Phi|. Advisory only: the pulse-amplitude
    mapping of a real flux pulse is not modelled.
    """
    if not 0 <= detuning < sweetspot_freq:
        raise ValueError("detuning must lie in [0, sweetspot_freq)")
    ratio = ((sweetspot_freq - detuning) / sweetspot_freq) ** 2
    x = math.acos(ratio)  # pi * Phi / Phi0
    dfdphi = sweetspot_freq * 0.5 / math.sqrt(math.cos(x)) * math.sin(x) * math.pi
    gamma = sqrt_a * math.sqrt(math.log(2)) * 2 * math.pi * dfdphi
    rate = 1.0 / t2_echo + gamma
    return min(1.0 / rate, 2 * t1)


@dataclass(frozen=True)
class NoiseModel:
    level: int
    config: DeviceConfig
    flux_noise_amplitude: float = 1e-6

    def __post_init__(self):
        if self.level not in LEVEL_MECHANISMS:
            raise ConfigError(f"noise level must be 0..4, got {self.level}")

    @property
    def mechanisms(self) -> frozenset[str]:
        return LEVEL_MECHANISMS[self.level]

    def has(self, mechanism: str) -> bool:
        return mechanism in self.mechanisms

    def at_level(self, level: int) -> "NoiseModel":
        return replace(self, level=level)


# ---------------------------------------------------------------------------
# channels

def _liouvillian(jumps: Iterable[np.ndarray], d: int) -> np.ndarray:
    eye = np.eye(d)
    out = np.zeros((d * d, d * d), dtype=complex)
    for L in jumps:
        LdL = L.conj().T @ L
        out += np.kron(L, L.conj()) - 0.5 * np.kron(LdL, eye) - 0.5 * np.kron(eye, LdL.T)
    return out


@lru_cache(maxsize=4096)
def damping_superop(d: int, duration: float, t1: float, t2: float) -> np.ndarray:
    """Exact single-site T1/T2 channel as a (d, d, d, d) tensor.

    Lowering rates are 1/T1 (1->0) and 2/T1 (2->1); pure dephasing uses
    sqrt(2/T_phi) n with 1/T_phi = 1/T2 - 1/(2 T1), so the 0-1 coherence decays
    as exp(-t/T2). T2 slightly above 2*T1 (within ``T2_LIMIT_TOL``) is treated
    as exactly 2*T1.
    """
    if t2 > 2 * t1 * (1 + T2_LIMIT_TOL):
        raise ConfigError(f"T2 {t2} exceeds 2*T1 {2 * t1}")
    if duration < 0:
        raise ValueError("duration must be >= 0")
    gamma_phi = max(1.0 / t2 - 0.5 / t1, 0.0)
    a = np.diag(np.sqrt(np.arange(1, d)), 1).astype(complex)
    n = np.diag(np.arange(d)).astype(complex)
    lv = _liouvillian([math.sqrt(1.0 / t1) * a, math.sqrt(2.0 * gamma_phi) * n], d)
    s = expm(lv * duration)
    return s.reshape(d, d, d, d)


def _apply_superop(rho_t: np.ndarray, s4: np.ndarray, i: int, n: int) -> np.ndarray:
    out = np.tensordot(s4, rho_t, axes=([2, 3], [i, n + i]))
    return np.moveaxis(out, [0, 1], [i, n + i])


class Register:
    """Shape bookkeeping for raw density-matrix arrays."""

    def __init__(self, register: Sequence[SiteSpec]):
        self.sites = tuple(register)
        self.labels = tuple(s.label for s in self.sites)
        self.dims = register_dims(self.sites)
        self.n = len(self.dims)
        self.d = int(np.prod(self.dims))
        grids = np.indices(self.dims).reshape(self.n, -1)
        self._levels = {lab: grids[k] for k, lab in enumerate(self.labels)}

    def index(self, label: str) -> int:
        return site_index(self.sites, label)

    def tensor(self, rho: np.ndarray) -> np.ndarray:
        return rho.reshape(self.dims + self.dims)

    def matrix(self, t: np.ndarray) -> np.ndarray:
        return t.reshape(self.d, self.d)

    def levels(self, label: str) -> np.ndarray:
        """Level of ``label`` for every basis index."""
        self.index(label)
        return self._levels[label]


def _zz_phase_vector(reg: Register, config: DeviceConfig, duration: float, exclude: frozenset) -> np.ndarray:
    theta = np.zeros(reg.d)
    for (a, b), p in config.pairs.items():
        if p.zz == 0.0 or (a, b) in exclude or a not in reg.labels or b not in reg.labels:
            continue
        both = (reg.levels(a) == 1) & (reg.levels(b) == 1)
        theta += 2 * math.pi * p.zz * duration * both
    return np.exp(-1j * theta)


def _apply_phase(rho: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (v[:, None] * rho) * v.conj()[None, :]


def _site_t2(model: NoiseModel, label: str, fluxed: frozenset) -> float:
    site = model.config.sites[label]
    if label in fluxed and model.has("flux_dephasing"):
        for p in model.config.pairs.values():
            if p.fluxed == label and p.t2_flux is not None:
                return p.t2_flux
    return site.t2_echo


def _idle_array(
    rho: np.ndarray,
    reg: Register,
    duration: float,
    model: NoiseModel,
    fluxed: frozenset = frozenset(),
    exclude_pairs: frozenset = frozenset(),
    slice_time: float | None = None,
) -> np.ndarray:
    if duration <= 0 or model.level == 0:
        return rho
    slice_time = model.config.trotter_slice if slice_time is None else slice_time
    nslice = max(1, math.ceil(duration / slice_time - 1e-9))
    dt = duration / nslice
    superops = []
    for k, s in enumerate(reg.sites):
        if s.label not in model.config.sites:
            continue
        t1 = model.config.sites[s.label].t1
        superops.append((k, damping_superop(s.dim, dt, t1, _site_t2(model, s.label, fluxed))))
    zz = model.has("zz_crosstalk")
    if zz:
        half = _zz_phase_vector(reg, model.config, dt / 2, exclude_pairs)
        full = half * half
    t = reg.tensor(rho)
    for j in range(nslice):
        if zz:
            t = reg.tensor(_apply_phase(reg.matrix(t), half if j == 0 else full))
        for k, s4 in superops:
            t = _apply_superop(t, s4, k, reg.n)
    rho = reg.matrix(t)
    if zz:
        rho = _apply_phase(rho, half)
    return np.ascontiguousarray(rho)


def _wrap(rho: DensityMatrix, data: np.ndarray) -> DensityMatrix:
    return DensityMatrix.from_unchecked(rho.register, data, check_psd=False)


def idle_channel(rho: DensityMatrix, site: str, duration: float, t1: float, t2: float) -> DensityMatrix:
    """Exact T1/T2 idling of one site."""
    reg = Register(rho.register)
    k = reg.index(site)
    s4 = damping_superop(reg.dims[k], duration, t1, t2)
    t = _apply_superop(reg.tensor(rho.data), s4, k, reg.n)
    return _wrap(rho, reg.matrix(t))


def zz_crosstalk_step(rho: DensityMatrix, pair: tuple[str, str], duration: float, config: DeviceConfig) -> DensityMatrix:
    """exp(-i 2 pi zeta t |11><11|) on ``pair``."""
    if duration < 0:
        raise ValueError("duration must be >= 0")
    reg = Register(rho.register)
    zeta = config.pair(*pair).zz
    both = (reg.levels(pair[0]) == 1) & (reg.levels(pair[1]) == 1)
    v = np.exp(-2j * math.pi * zeta * duration * both)
    return _wrap(rho, _apply_phase(rho.data, v))


def trotterized_idle(
    rho: DensityMatrix,
    duration: float,
    model: NoiseModel,
    slice_time: float | None = None,
) -> DensityMatrix:
    return _wrap(rho, _idle_array(rho.data, Register(rho.register), duration, model, slice_time=slice_time))


def leakage_angle(l1: float) -> float:
    """Rotation angle in {|11>, |02>} moving population 4*L1 out of |11>."""
    return math.asin(math.sqrt(4.0 * l1))


def leakage_unitary(l1: float) -> np.ndarray:
    """9x9 excursion on (other, fluxed) qutrits, mixing |11> and |02>."""
    th = leakage_angle(l1)
    u = np.eye(9, dtype=complex)
    i11, i02 = 1 * 3 + 1, 0 * 3 + 2
    u[i11, i11] = u[i02, i02] = math.cos(th)
    u[i11, i02] = u[i02, i11] = -1j * math.sin(th)
    return u


def _apply_unitary(rho: np.ndarray, reg: Register, op: np.ndarray, labels: Sequence[str]) -> np.ndarray:
    idx = [reg.index(l) for l in labels]
    t = reg.tensor(rho)
    t = apply_local(t, op, idx, reg.dims)  # rows
    # columns: rho U^dagger
    n = reg.n
    cols = [n + i for i in idx]
    local = [reg.dims[i] for i in idx]
    opc = op.conj().reshape(local + local)
    k = len(idx)
    moved = np.moveaxis(t, cols, range(k))
    out = np.tensordot(opc, moved, axes=(list(range(k, 2 * k)), list(range(k))))
    t = np.moveaxis(out, range(k), cols)
    return reg.matrix(t)


def _dephase_leaked(rho: np.ndarray, reg: Register, label: str) -> np.ndarray:
    leaked = reg.levels(label) == 2
    mask = leaked[:, None] == leaked[None, :]
    return rho * mask


def _gate_time_layout(moment: Sequence[Gate], config: DeviceConfig) -> tuple[str, float]:
    if any(g.kind == "CZ" for g in moment):
        return "cz", config.cz_time
    return "single", config.single_qubit_gate_time


def apply_moment_array(rho: np.ndarray, reg: Register, moment: Sequence[Gate], model: NoiseModel) -> np.ndarray:
    """One circuit moment: idle, instantaneous gates, idle."""
    kind, _ = _gate_time_layout(moment, model.config)
    cfg = model.config
    if kind == "single":
        pre = post = cfg.single_qubit_gate_time / 2
        fluxed: frozenset = frozenset()
        gated: frozenset = frozenset()
        margin = 0.0
    else:
        pre = post = cfg.cz_idle_block
        margin = cfg.cz_margin
        czs = [g for g in moment if g.kind == "CZ"]
        for g in czs:
            cfg.pair(*g.targets)
        fluxed = frozenset(cfg.pair(*g.targets).fluxed for g in czs if cfg.pair(*g.targets).fluxed)
        gated = frozenset(pair_key(*g.targets) for g in czs)
    rho = _idle_array(rho, reg, pre, model, fluxed, gated)
    for g in moment:
        if g.kind == "MEASURE":
            continue
        if g.kind not in ("RXY", "RZ", "CZ"):
            raise ValueError(f"simulator runs native gates only, got {g.kind}")
        dims = [reg.dims[reg.index(t)] for t in g.targets]
        rho = _apply_unitary(rho, reg, local_gate_matrix(g, dims), g.targets)
        if g.kind == "CZ" and model.has("leakage"):
            p = cfg.pair(*g.targets)
            if p.fluxed and p.leakage_l1 > 0 and all(d == 3 for d in dims):
                other = g.targets[0] if g.targets[1] == p.fluxed else g.targets[1]
                rho = _apply_unitary(rho, reg, leakage_unitary(p.leakage_l1), (other, p.fluxed))
                if cfg.leakage_dephasing:
                    rho = _dephase_leaked(rho, reg, p.fluxed)
    rho = _idle_array(rho, reg, post, model, fluxed, gated)
    if margin:
        rho = _idle_array(rho, reg, margin, model, frozenset(), gated)
    return rho


def apply_cz(rho: DensityMatrix, pair: tuple[str, str], model: NoiseModel) -> DensityMatrix:
    model.config.pair(*pair)
    reg = Register(rho.register)
    return _wrap(rho, apply_moment_array(rho.data, reg, [Gate("CZ", pair)], model))


def apply_single_qubit_gate(rho: DensityMatrix, gate: Gate, model: NoiseModel) -> DensityMatrix:
    if gate.kind != "RXY":
        raise ValueError("apply_single_qubit_gate takes an RXY gate")
    reg = Register(rho.register)
    return _wrap(rho, apply_moment_array(rho.data, reg, [gate], model))


def ground_state_array(reg: Register) -> np.ndarray:
    rho = np.zeros((reg.d, reg.d), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def run_circuit_array(circuit: Circuit, model: NoiseModel, rho: np.ndarray | None = None) -> np.ndarray:
    reg = Register(circuit.register)
    rho = ground_state_array(reg) if rho is None else rho
    for m in circuit.moments:
        rho = apply_moment_array(rho, reg, m, model)
    return rho


def run_circuit(circuit: Circuit, model: NoiseModel, rho: DensityMatrix | None = None) -> DensityMatrix:
    data = run_circuit_array(circuit, model, None if rho is None else rho.data)
    return DensityMatrix.from_unchecked(circuit.register, data, check_psd=False)
