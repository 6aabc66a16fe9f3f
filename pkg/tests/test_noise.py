import math

import numpy as np
import pytest

from thermofield.circuit import RXY, RZ, VariationalAngles, compile_ansatz, rxy_matrix
from thermofield.noise import (
    ConfigError,
    DeviceConfig,
    NoiseModel,
    PairParams,
    SiteParams,
    apply_cz,
    apply_single_qubit_gate,
    dump_device_config,
    flux_dephasing_t2,
    idle_channel,
    leakage_unitary,
    load_device_config,
    per_gate_leakage,
    run_circuit,
    trotterized_idle,
    zz_crosstalk_step,
)
from thermofield.qudit import DensityMatrix, make_register, random_density_matrix


def _two_site_config(t1=30e-6, t2=40e-6, zz=200e3, l1=0.005, t2_flux=10e-6, dephase=False):
    sites = {"a": SiteParams(t1, t2), "b": SiteParams(t1, t2)}
    pairs = {("a", "b"): PairParams(zz=zz, fluxed="b", leakage_l1=l1, t2_flux=t2_flux)}
    return DeviceConfig(sites, pairs, leakage_dephasing=dephase)


def _qutrits(*labels):
    return make_register(labels, 3)


def _ket(reg, levels):
    return DensityMatrix.basis_state(reg, levels)


def _pop(rho, levels):
    idx = np.ravel_multi_index(levels, rho.dims)
    return rho.data[idx, idx].real


# --- config -----------------------------------------------------------------

def test_default_config_values():
    cfg = load_device_config()
    assert cfg.sites["B1"].t1 == pytest.approx(32.1e-6)
    assert cfg.sites["A2"].t2_echo == pytest.approx(68.8e-6)
    assert cfg.sites["A1"].sweetspot_freq == pytest.approx(5.887e9)
    assert cfg.sites["A2"].assignment_fidelity == pytest.approx(0.938)
    assert cfg.cz_time == pytest.approx(80e-9)
    assert cfg.zz("B2", "A2") == cfg.zz("A2", "B2")


def test_config_invariants():
    with pytest.raises(ConfigError):
        SiteParams(10e-6, 30e-6)
    with pytest.raises(ConfigError):
        SiteParams(-1.0, 1.0)
    with pytest.raises(ConfigError):
        PairParams(leakage_l1=0.2)
    with pytest.raises(ConfigError):
        DeviceConfig({"a": SiteParams(1e-5, 1e-5)}, {("a", "b"): PairParams()})
    with pytest.raises(ConfigError):
        DeviceConfig(
            {"a": SiteParams(1e-5, 1e-5), "b": SiteParams(1e-5, 1e-5)},
            {("a", "b"): PairParams(), ("b", "a"): PairParams()},
        )


def test_overrides_and_roundtrip(tmp_path):
    cfg = load_device_config(overrides={"pair.A2-B2.zz": "123", "site.B1.t1": "3e-5"})
    assert cfg.zz("B2", "A2") == 123
    assert cfg.sites["B1"].t1 == 3e-5
    with pytest.raises(ConfigError):
        load_device_config(overrides={"site.B1.nope": "1"})
    path = tmp_path / "dev.ini"
    path.write_text(dump_device_config(cfg))
    again = load_device_config(path)
    assert again.to_flat() == cfg.to_flat()
    with pytest.raises(ConfigError):
        load_device_config(tmp_path / "missing.ini")


def test_leakage_conversion_and_flux_helper():
    assert per_gate_leakage(0.006) == pytest.approx(0.004)
    t2 = flux_dephasing_t2(6e9, 0.3e9, 30e-6, 30e-6)
    assert 0 < t2 < 30e-6
    assert flux_dephasing_t2(6e9, 0.0, 30e-6, 30e-6) == pytest.approx(30e-6)


def test_noise_level_validation():
    with pytest.raises(ConfigError):
        NoiseModel(5, load_device_config())
    assert NoiseModel(0, load_device_config()).mechanisms == frozenset()


def test_model_nesting():
    cfg = load_device_config()
    for k in range(1, 5):
        assert NoiseModel(k - 1, cfg).mechanisms < NoiseModel(k, cfg).mechanisms


# --- idle channel -----------------------------------------------------------

def test_idle_zero_duration_is_identity(rng):
    reg = _qutrits("a")
    rho = DensityMatrix.from_unchecked(reg, random_density_matrix([3], rng))
    out = idle_channel(rho, "a", 0.0, 30e-6, 40e-6)
    assert np.allclose(out.data, rho.data)


def test_idle_t1_decay():
    reg = _qutrits("a")
    t1 = 30e-6
    out = idle_channel(_ket(reg, [1]), "a", t1, t1, 2 * t1)
    assert _pop(out, [1]) == pytest.approx(math.exp(-1), abs=1e-12)


def test_idle_second_level_decays_twice_as_fast():
    reg = _qutrits("a")
    t1 = 30e-6
    out = idle_channel(_ket(reg, [2]), "a", 1e-6, t1, 2 * t1)
    assert _pop(out, [2]) == pytest.approx(math.exp(-2e-6 / t1), abs=1e-12)


def test_idle_coherence_decays_with_t2():
    reg = make_register(["a"], 2)
    plus = DensityMatrix.from_ket(reg, [1, 1])
    t1, t2, t = 30e-6, 20e-6, 5e-6
    out = idle_channel(plus, "a", t, t1, t2)
    assert abs(out.data[0, 1]) == pytest.approx(0.5 * math.exp(-t / t2), abs=1e-12)


def test_idle_rejects_unphysical_t2():
    reg = _qutrits("a")
    with pytest.raises(ConfigError):
        idle_channel(_ket(reg, [0]), "a", 1e-6, 10e-6, 30e-6)


# --- ZZ and Trotterisation ----------------------------------------------------

def test_zz_phase_only_on_11():
    cfg = _two_site_config(zz=250e3)
    reg = make_register(["a", "b"], 2)
    psi = np.ones(4) / 2
    rho = DensityMatrix.from_ket(reg, psi)
    t = 1e-6
    out = zz_crosstalk_step(rho, ("a", "b"), t, cfg)
    phase = np.exp(-2j * math.pi * 250e3 * t)
    expect = np.diag([1, 1, 1, phase]) @ rho.data @ np.diag([1, 1, 1, phase]).conj()
    assert np.allclose(out.data, expect)
    zero = _two_site_config(zz=0.0)
    assert np.allclose(zz_crosstalk_step(rho, ("a", "b"), t, zero).data, rho.data)


def test_zz_echo_reveals_frequency_shift():
    """Echo on one qubit with a pi pulse on the other halfway: phase 2*pi*zeta*t."""
    zeta = 300e3
    reg = make_register(["echo", "ctl"], 2)
    cfg2 = DeviceConfig(
        {"echo": SiteParams(1.0, 2.0), "ctl": SiteParams(1.0, 2.0)},
        {("echo", "ctl"): PairParams(zz=zeta)},
    )
    model = NoiseModel(3, cfg2)
    def rot(rho, site, phi, theta):
        u = rxy_matrix(phi, theta)
        full = np.kron(u, np.eye(2)) if site == "echo" else np.kron(np.eye(2), u)
        return rho.evolve(full)

    phases = []
    ts = np.linspace(0.2e-6, 2e-6, 10)
    for t in ts:
        rho = DensityMatrix.basis_state(reg, [0, 0])
        rho = rot(rho, "echo", math.pi / 2, math.pi / 2)
        rho = trotterized_idle(rho, t / 2, model)
        rho = rot(rho, "echo", 0.0, math.pi)
        rho = rot(rho, "ctl", 0.0, math.pi)
        rho = trotterized_idle(rho, t / 2, model)
        # coherence of the echo qubit with the control in |1>
        red = rho.data.reshape(2, 2, 2, 2)[:, 1, :, 1]
        phases.append(np.angle(red[0, 1]))
    slope = np.polyfit(ts, np.unwrap(phases), 1)[0]
    assert abs(slope) / (2 * math.pi) == pytest.approx(zeta / 2, rel=1e-6)


def test_trotterized_idle_level0_identity(rng):
    cfg = load_device_config()
    reg = _qutrits("B1", "B2")
    rho = DensityMatrix.from_unchecked(reg, random_density_matrix([3, 3], rng))
    out = trotterized_idle(rho, 1e-6, NoiseModel(0, cfg))
    assert np.allclose(out.data, rho.data)


def test_trotterized_idle_level1_equals_direct_channel(rng):
    cfg = load_device_config()
    reg = _qutrits("B1")
    rho = DensityMatrix.from_unchecked(reg, random_density_matrix([3], rng))
    out = trotterized_idle(rho, 97e-9, NoiseModel(1, cfg))
    s = cfg.sites["B1"]
    direct = idle_channel(rho, "B1", 97e-9, s.t1, s.t2_echo)
    assert np.abs(out.data - direct.data).max() < 1e-12


def test_trotter_refinement_converges(rng):
    cfg = _two_site_config(zz=500e3)
    reg = _qutrits("a", "b")
    rho = DensityMatrix.from_unchecked(reg, random_density_matrix([3, 3], rng))
    model = NoiseModel(3, cfg)
    coarse = trotterized_idle(rho, 100e-9, model)
    fine = trotterized_idle(rho, 100e-9, model, slice_time=1e-9)
    assert np.abs(coarse.data - fine.data).max() < 1e-6


# --- gates ------------------------------------------------------------------

def test_cz_level0_is_exact():
    cfg = _two_site_config()
    reg = make_register(["a", "b"], 2)
    psi = np.array([0, 0, 0, 1.0])
    out = apply_cz(DensityMatrix.from_ket(reg, psi), ("a", "b"), NoiseModel(0, cfg))
    assert out.data[3, 3] == pytest.approx(1.0)
    plus = DensityMatrix.from_ket(reg, np.ones(4) / 2)
    out = apply_cz(plus, ("a", "b"), NoiseModel(0, cfg))
    assert out.data[0, 3] == pytest.approx(-0.25)


def test_cz_unknown_pair():
    cfg = _two_site_config()
    reg = make_register(["a", "b", "c"], 2)
    cfg3 = DeviceConfig({**cfg.sites, "c": SiteParams(1e-5, 1e-5)}, cfg.pairs)
    with pytest.raises(ConfigError):
        apply_cz(DensityMatrix.basis_state(reg, [0, 0, 0]), ("a", "c"), NoiseModel(0, cfg3))


def test_leakage_excursion_population():
    l1 = 0.006
    u = leakage_unitary(l1)
    assert np.allclose(u.conj().T @ u, np.eye(9))
    assert abs(u[2, 4]) ** 2 == pytest.approx(4 * l1, abs=1e-12)


def test_cz_leakage_from_11():
    l1 = 0.006
    cfg = _two_site_config(t1=1e3, t2=2e3, zz=0.0, l1=l1, t2_flux=2e3)
    reg = _qutrits("a", "b")
    out = apply_cz(_ket(reg, [1, 1]), ("a", "b"), NoiseModel(4, cfg))
    assert _pop(out, [0, 2]) == pytest.approx(4 * l1, abs=1e-10)
    # averaged over the computational basis the leakage per gate is L1
    avg = np.mean(
        [sum(_pop(apply_cz(_ket(reg, s), ("a", "b"), NoiseModel(4, cfg)), [l, 2]) for l in range(3))
         + sum(_pop(apply_cz(_ket(reg, s), ("a", "b"), NoiseModel(4, cfg)), [2, k]) for k in range(2))
         for s in ([0, 0], [0, 1], [1, 0], [1, 1])]
    )
    assert avg == pytest.approx(l1, abs=1e-10)


def test_cz_no_leakage_from_00():
    cfg = _two_site_config(l1=0.01)
    reg = _qutrits("a", "b")
    out = apply_cz(_ket(reg, [0, 0]), ("a", "b"), NoiseModel(4, cfg))
    assert _pop(out, [0, 0]) == pytest.approx(1.0, abs=1e-12)


def test_leakage_dephasing_flag_removes_coherence():
    cfg = _two_site_config(t1=1e3, t2=2e3, zz=0.0, l1=0.01, t2_flux=2e3, dephase=True)
    reg = _qutrits("a", "b")
    out = apply_cz(_ket(reg, [1, 1]), ("a", "b"), NoiseModel(4, cfg))
    i11, i02 = np.ravel_multi_index((1, 1), (3, 3)), np.ravel_multi_index((0, 2), (3, 3))
    assert abs(out.data[i11, i02]) < 1e-15
    assert _pop(out, [0, 2]) == pytest.approx(0.04, abs=1e-10)


def test_leakage_monotone_without_damping():
    cfg = _two_site_config(t1=1e3, t2=2e3, zz=0.0, l1=0.003, t2_flux=2e3, dephase=True)
    reg = _qutrits("a", "b")
    plus = np.zeros(9)
    for l in range(2):
        for k in range(2):
            plus[3 * l + k] = 0.5
    rho = DensityMatrix.from_ket(reg, plus)
    leaked_prev = 0.0
    for _ in range(10):
        rho = apply_cz(rho, ("a", "b"), NoiseModel(4, cfg))
        d = np.real(np.diag(rho.data)).reshape(3, 3)
        leaked = d[2, :].sum() + d[:, 2].sum() - d[2, 2]
        assert leaked >= leaked_prev - 1e-12
        leaked_prev = leaked


def test_flux_dephasing_on_fluxed_site_only():
    cfg = _two_site_config(t1=1e3, t2=2e3, zz=0.0, l1=0.0, t2_flux=1e-6)
    reg = make_register(["a", "b"], 2)
    plus_b = DensityMatrix.from_ket(reg, [1, 1, 0, 0])  # a=0, b=|+>
    plus_a = DensityMatrix.from_ket(reg, [1, 0, 1, 0])  # a=|+>, b=0
    l1, l2 = NoiseModel(1, cfg), NoiseModel(2, cfg)
    assert abs(apply_cz(plus_b, ("a", "b"), l2).data[0, 1]) < abs(apply_cz(plus_b, ("a", "b"), l1).data[0, 1])
    assert abs(apply_cz(plus_a, ("a", "b"), l2).data[0, 2]) == pytest.approx(
        abs(apply_cz(plus_a, ("a", "b"), l1).data[0, 2]), abs=1e-12
    )


def test_single_qubit_gate_level0_and_level1():
    reg = make_register(["a"], 2)
    cfg1 = DeviceConfig({"a": SiteParams(30e-6, 20e-6)}, {})
    x180 = RXY("a", 0.0, math.pi)
    rho = DensityMatrix.basis_state(reg, [0])
    twice = apply_single_qubit_gate(apply_single_qubit_gate(rho, x180, NoiseModel(0, cfg1)), x180, NoiseModel(0, cfg1))
    assert twice.data[0, 0] == pytest.approx(1.0)
    # level 1: |+> rotated by an identity-like gate shrinks by exp(-20ns/T2)
    plus = DensityMatrix.from_ket(reg, [1, 1])
    ident = RXY("a", 0.0, 0.0)
    out = apply_single_qubit_gate(plus, ident, NoiseModel(1, cfg1))
    assert abs(out.data[0, 1]) == pytest.approx(0.5 * math.exp(-20e-9 / 20e-6), abs=1e-12)
    with pytest.raises(ValueError):
        apply_single_qubit_gate(plus, RZ("a", 0.3), NoiseModel(1, cfg1))


def test_compiled_circuit_runs_at_every_level():
    cfg = load_device_config()
    c = compile_ansatz(VariationalAngles(0.3, 0.2, 0.5, -0.1), dim=3)
    for level in range(5):
        out = run_circuit(c, NoiseModel(level, cfg))
        assert np.trace(out.data).real == pytest.approx(1.0, abs=1e-10)
        assert np.linalg.eigvalsh(out.data).min() > -1e-9
