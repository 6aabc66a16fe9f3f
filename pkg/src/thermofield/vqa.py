"""Hybrid variational loop: cost evaluation, beta sweeps and landscapes.

Every cost evaluation compiles the ansatz to native gates, simulates it
under the chosen noise level and estimates the cost terms from simulated
readout, exactly as a device run would. The classical side only sees the
estimated cost.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .circuit import VariationalAngles, ansatz_register, compile_ansatz
from .noise import DeviceConfig, NoiseModel, load_device_config, run_circuit_array
from .optimize import OptimizeResult, multistart_minimize, simplex_search, wrap_angles
from .qudit import DensityMatrix, fidelity, make_register, purity
from .tfd import (
    QUBIT_REGISTER,
    SYSTEMS,
    CostSpec,
    cost_value,
    gibbs_state,
    ideal_ansatz_state,
    ideal_cost,
    reduced_state,
)
from .tomo import (
    DEFAULT_COST_SHOTS,
    DEFAULT_TOMO_SHOTS,
    MeasurementModel,
    TomographyResult,
    calibrate,
    cost_settings,
    estimate_cost_terms,
    measure_settings,
    tomography_2q,
)

DEFAULT_BETAS = (0.0, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0)
MODES = ("variational", "cheating")

_TAG_EVAL = 11


@dataclass(frozen=True)
class OptimizerBudget:
    max_evaluations: int = 200
    remeasure_count: int = 2
    cost_shots: int = DEFAULT_COST_SHOTS
    tomo_shots: int = DEFAULT_TOMO_SHOTS

    def __post_init__(self):
        for name in ("max_evaluations", "remeasure_count", "cost_shots", "tomo_shots"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class SweepPlan:
    betas: tuple[float, ...] = DEFAULT_BETAS
    initial_guess: VariationalAngles = VariationalAngles()
    noise_level: int = 0
    mode: str = "variational"
    varsigma: float = 1.57

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.betas:
            raise ValueError("beta grid is empty")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if any(b < 0 for b in self.betas):
            raise ValueError("beta must be >= 0")
        if self.mode == "variational":
            if list(self.betas) != sorted(self.betas):
                raise ValueError("variational sweeps need an ascending beta grid")
            if self.betas[0] != 0.0:
                raise ValueError("variational sweeps start at beta = 0")
        if self.noise_level not in range(5):
            raise ValueError("noise level must be 0..4")


@dataclass
class SweepRecord:
    beta: float
    mode: str
    level: int
    final_angles: np.ndarray
    cost_trace: list[tuple[np.ndarray, float]]
    cost_final: float
    rho_exp: dict[str, np.ndarray]
    fidelity: dict[str, float]
    purity: dict[str, float]
    fidelity_samples: dict[str, list[float]] = field(default_factory=dict)

    @property
    def F_mean(self) -> float:
        return 0.5 * (self.fidelity["A"] + self.fidelity["B"])

    def to_dict(self) -> dict:
        """JSON-ready dict; numbers rounded to 12 significant digits."""

        def mat(m):
            return [[[_r(z.real), _r(z.imag)] for z in row] for row in np.asarray(m)]

        return {
            "beta": _r(self.beta),
            "mode": self.mode,
            "level": self.level,
            "final_angles": {
                k: _r(v) for k, v in zip(("alpha1", "alpha2", "gamma1", "gamma2"), self.final_angles)
            },
            "cost_final": _r(self.cost_final),
            "fidelity": {k: _r(v) for k, v in dict(self.fidelity, mean=self.F_mean).items()},
            "purity": {k: _r(v) for k, v in self.purity.items()},
            "fidelity_samples": {k: [_r(x) for x in v] for k, v in self.fidelity_samples.items()},
            "rho_exp": {k: mat(v) for k, v in self.rho_exp.items()},
            "cost_trace": [{"angles": [_r(a) for a in x], "cost": _r(c)} for x, c in self.cost_trace],
        }


def _r(x) -> float:
    return float(f"{float(x):.12g}")


# ---------------------------------------------------------------------------
# device simulation

@dataclass(frozen=True)
class Processor:
    """Simulated device: noise model plus readout model."""

    model: NoiseModel
    readout: MeasurementModel

    @classmethod
    def build(
        cls,
        level: int,
        config: DeviceConfig | None = None,
        readout: MeasurementModel | None = None,
    ) -> "Processor":
        config = load_device_config() if config is None else config
        readout = MeasurementModel.from_device(config) if readout is None else readout
        return cls(NoiseModel(level, config), readout)

    @property
    def dim(self) -> int:
        # leakage is the only mechanism that populates |2>
        return 3 if self.model.has("leakage") else 2

    @cached_property
    def exact_calibration(self) -> MeasurementModel:
        return calibrate(self.readout, shots=None)

    def prepare(self, angles) -> DensityMatrix:
        """Run the compiled ansatz and return the four-site state."""
        circuit = compile_ansatz(VariationalAngles.from_array(angles), dim=self.dim)
        data = run_circuit_array(circuit, self.model)
        return DensityMatrix.from_unchecked(ansatz_register(self.dim), data, check_psd=False)


def evaluate_candidate(
    angles,
    beta: float,
    processor: Processor,
    shots: int | None = DEFAULT_COST_SHOTS,
    seed: int = 0,
    rep: int = 0,
    varsigma: float = 1.57,
) -> float:
    """Estimated cost of one candidate; ``shots=None`` uses exact averages.

    Each evaluation includes its own readout calibration, drawn from a random
    stream derived from ``(seed, rep)``.
    """
    rho = processor.prepare(angles)
    if shots is None:
        calibrated = processor.exact_calibration
    else:
        calibrated = calibrate(processor.readout, shots=shots, seed=seed, rep=rep)
    avgs = measure_settings(rho, cost_settings(), processor.readout, shots, seed, _TAG_EVAL, rep)
    return cost_value(estimate_cost_terms(avgs, calibrated), CostSpec(beta, varsigma))


def assess_state(
    rho: DensityMatrix,
    beta: float,
    processor: Processor,
    shots: int | None,
    seed: int,
    rep: int,
) -> dict[str, TomographyResult]:
    """Tomography of both systems with the calibrated readout model."""
    if shots is None:
        calibrated = processor.exact_calibration
    else:
        calibrated = calibrate(processor.readout, shots=shots, seed=seed, rep=rep)
    return {
        s: tomography_2q(rho, s, processor.readout, shots, seed, rep, calibrated) for s in SYSTEMS
    }


def _score(rho_exp: np.ndarray, beta: float, labels) -> tuple[float, float]:
    r = DensityMatrix.from_unchecked(make_register(labels), rho_exp, check_psd=False)
    return fidelity(gibbs_state(beta), r, clamp=True), purity(r)


def remeasure(
    angles,
    beta: float,
    processor: Processor,
    budget: OptimizerBudget,
    exact: bool,
    seed: int,
    stream: int,
    varsigma: float = 1.57,
) -> tuple[list[float], dict[str, np.ndarray], dict[str, list[float]]]:
    """Re-evaluate and tomograph the best point ``remeasure_count`` times."""
    rho = processor.prepare(angles)
    costs, rhos = [], {s: [] for s in SYSTEMS}
    samples = {s: [] for s in SYSTEMS}
    for r in range(budget.remeasure_count):
        rep = stream * 1000 + r
        costs.append(
            evaluate_candidate(
                angles, beta, processor, None if exact else budget.cost_shots, seed, rep + 500, varsigma
            )
        )
        tomo = assess_state(rho, beta, processor, None if exact else budget.tomo_shots, seed, rep)
        for s, t in tomo.items():
            rhos[s].append(t.rho_exp.data)
            samples[s].append(_score(t.rho_exp.data, beta, SYSTEMS[s])[0])
    return costs, {s: np.mean(v, axis=0) for s, v in rhos.items()}, samples


def fidelity_spread(
    angles,
    beta: float,
    processor: Processor,
    shots: int = DEFAULT_TOMO_SHOTS,
    seed: int = 0,
    reps: int = 8,
) -> tuple[float, float]:
    """Mean and standard deviation of the tomographic mean-system fidelity.

    Each repetition uses fresh calibration and tomography streams, so the
    spread is the shot-noise uncertainty of a single fidelity estimate.
    """
    rho = processor.prepare(angles)
    vals = []
    for r in range(reps):
        tomo = assess_state(rho, beta, processor, shots, seed, 10_000 + r)
        vals.append(np.mean([_score(t.rho_exp.data, beta, SYSTEMS[s])[0] for s, t in tomo.items()]))
    return float(np.mean(vals)), float(np.std(vals, ddof=1))


def _record(beta, mode, level, x, trace, costs, rho_exp, samples) -> SweepRecord:
    fid, pur = {}, {}
    for s, m in rho_exp.items():
        fid[s], pur[s] = _score(m, beta, SYSTEMS[s])
    return SweepRecord(
        beta=float(beta),
        mode=mode,
        level=level,
        final_angles=np.asarray(x, dtype=float),
        cost_trace=trace,
        cost_final=float(np.mean(costs)),
        rho_exp=rho_exp,
        fidelity=fid,
        purity=pur,
        fidelity_samples=samples,
    )


def optimize_at_beta(
    beta: float,
    guess,
    processor: Processor,
    budget: OptimizerBudget = OptimizerBudget(),
    seed: int = 0,
    stream: int = 0,
    exact: bool = False,
    engine: Callable[..., OptimizeResult] = simplex_search,
    varsigma: float = 1.57,
) -> SweepRecord:
    """Minimise the estimated cost from ``guess`` and assess the best point."""
    counter = itertools.count()

    def f(x):
        k = next(counter)
        shots = None if exact else budget.cost_shots
        return evaluate_candidate(x, beta, processor, shots, seed, stream * 100000 + k, varsigma)

    res = engine(f, np.asarray(guess, dtype=float), budget=budget.max_evaluations, seed=seed * 7919 + stream)
    costs, rho_exp, samples = remeasure(res.x, beta, processor, budget, exact, seed, stream, varsigma)
    return _record(beta, "variational", processor.model.level, res.x, res.trace, costs, rho_exp, samples)


def ideal_optimal_angles(
    betas: Sequence[float],
    varsigma: float = 1.57,
    guess=(0.0, 0.0, 0.0, 0.0),
    seed: int = 0,
) -> list[np.ndarray]:
    """Classically pre-computed cost minimisers for an ideal processor, warm-started in beta order."""
    out = {}
    x0 = np.asarray(guess, dtype=float)
    for k, beta in enumerate(sorted(set(betas))):
        spec = CostSpec(beta, varsigma)
        res = multistart_minimize(lambda x: ideal_cost(x, spec), x0, seed=seed * 7919 + k)
        x0 = out[beta] = res.x
    return [out[b] for b in betas]


def run_sweep(
    plan: SweepPlan,
    processor: Processor | None = None,
    budget: OptimizerBudget = OptimizerBudget(),
    seed: int = 0,
    exact: bool = False,
    engine: Callable[..., OptimizeResult] = simplex_search,
    progress: Callable[[SweepRecord], None] | None = None,
) -> list[SweepRecord]:
    """Sweep the beta grid in order, warm-starting each point from the last.

    In cheating mode the angles are the ideal-processor optima and only the
    assessment runs on the simulated device.
    """
    if processor is None:
        processor = Processor.build(plan.noise_level)
    elif processor.model.level != plan.noise_level:
        raise ValueError("processor noise level differs from the plan")
    records = []
    if plan.mode == "cheating":
        angles = ideal_optimal_angles(plan.betas, plan.varsigma, plan.initial_guess.as_array(), seed)
        for k, (beta, x) in enumerate(zip(plan.betas, angles)):
            costs, rho_exp, samples = remeasure(x, beta, processor, budget, exact, seed, k, plan.varsigma)
            rec = _record(beta, "cheating", plan.noise_level, x, [], costs, rho_exp, samples)
            records.append(rec)
            if progress:
                progress(rec)
        return records
    guess = plan.initial_guess.as_array()
    for k, beta in enumerate(plan.betas):
        rec = optimize_at_beta(beta, guess, processor, budget, seed, k, exact, engine, plan.varsigma)
        records.append(rec)
        guess = rec.final_angles
        if progress:
            progress(rec)
    return records


# ---------------------------------------------------------------------------
# landscapes

def landscape_grid(n: int = 10) -> np.ndarray:
    """``n`` uniformly spaced points covering one period [0, pi]."""
    if n < 2:
        raise ValueError("need at least two grid points")
    return np.linspace(0.0, np.pi, n)


def landscape_scan(
    axis: str,
    processor: Processor,
    grid: Sequence[float] | None = None,
    beta: float = 0.0,
    shots: int | None = None,
    seed: int = 0,
    varsigma: float = 1.57,
) -> np.ndarray:
    """Cost on a 2-D grid over (gamma1, gamma2) or (alpha1, alpha2), the other pair at 0.

    ``out[a, b]`` is the cost at first angle ``grid[a]`` and second ``grid[b]``.
    """
    if axis not in ("gamma", "alpha"):
        raise ValueError("axis must be 'gamma' or 'alpha'")
    grid = landscape_grid() if grid is None else np.asarray(grid, dtype=float)
    out = np.empty((len(grid), len(grid)))
    for a, u in enumerate(grid):
        for b, v in enumerate(grid):
            x = (u, v, 0.0, 0.0) if axis == "alpha" else (0.0, 0.0, u, v)
            out[a, b] = evaluate_candidate(x, beta, processor, shots, seed, a * len(grid) + b, varsigma)
    return out


# ---------------------------------------------------------------------------
# fidelity oracle

def _ideal_reduced(angles, system: str) -> DensityMatrix:
    rho = DensityMatrix.from_unchecked(QUBIT_REGISTER, ideal_ansatz_state(angles))
    return reduced_state(rho, system)


def ansatz_fidelity(angles, beta: float) -> float:
    """Mean Gibbs fidelity of the two systems for the ideal ansatz state."""
    g = gibbs_state(beta)
    return 0.5 * sum(fidelity(g, _ideal_reduced(angles, s), clamp=True) for s in SYSTEMS)


def ansatz_best_fidelity(beta: float, points_per_axis: int = 8, polish: int = 8) -> tuple[float, np.ndarray]:
    """Best Gibbs fidelity reachable by the single-step ansatz.

    A uniform grid over the 4-torus seeds Nelder-Mead polishing of the
    ``polish`` best grid points.
    """
    axis = np.linspace(-np.pi, np.pi, points_per_axis, endpoint=False)
    scored = sorted(
        ((-ansatz_fidelity(p, beta), p) for p in itertools.product(axis, repeat=4)),
        key=lambda t: t[0],
    )
    best_f, best_x = -np.inf, None
    for _, p in scored[:polish]:
        res = _scipy_minimize(
            lambda x: -ansatz_fidelity(x, beta),
            np.array(p),
            method="Nelder-Mead",
            options={"xatol": 1e-8, "fatol": 1e-12, "maxfev": 4000},
        )
        if -res.fun > best_f:
            best_f, best_x = -res.fun, wrap_angles(res.x)
    return float(best_f), best_x


# ---------------------------------------------------------------------------
# output

SUMMARY_COLUMNS = ("beta", "mode", "level", "F_A", "F_B", "P_A", "P_B", "C_final")


def _g(x) -> str:
    return f"{x:.12g}"


def summary_table(records: Sequence[SweepRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in records:
        w.writerow(
            [_g(r.beta), r.mode, r.level, _g(r.fidelity["A"]), _g(r.fidelity["B"]),
             _g(r.purity["A"]), _g(r.purity["B"]), _g(r.cost_final)]
        )
    return buf.getvalue()


def records_json(records: Sequence[SweepRecord]) -> str:
    return json.dumps([r.to_dict() for r in records], indent=1, sort_keys=True)
