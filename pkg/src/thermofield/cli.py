"""Command-line entry point.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import circuit as circ
from .noise import ConfigError, load_device_config
from .qudit import DensityMatrix, make_register, purity
from .tfd import CostCalibrationSpec, gibbs_state, xi_objective

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2

EXPECTED_FINAL_DEPTH = 11
EXPECTED_UNREDUCED_DEPTH = 16
COMPILE_TOL = 1e-10


class UsageError(Exception):
    pass


def _g(x) -> str:
    return f"{float(x):.12g}"


# ---------------------------------------------------------------------------
# argument helpers

def _parse_overrides(items: Sequence[str] | None) -> dict[str, str]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _parse_floats(text: str, what: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{what} must be comma-separated numbers") from None
    if not vals:
        raise UsageError(f"{what} is empty")
    return vals


def _parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    if ":" in text:
        try:
            start, stop, step = (float(t) for t in text.split(":"))
        except ValueError:
            raise UsageError("grid must be start:stop:step") from None
        if step <= 0 or stop < start:
            raise UsageError("grid needs step > 0 and stop >= start")
        n = int(round((stop - start) / step)) + 1
        return [round(start + k * step, 10) for k in range(n)]
    return _parse_floats(text, "grid")


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from None
    return out


def _config(args):
    return load_device_config(args.config, _parse_overrides(args.set))


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    print(f"wrote {path}")


def _table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands

def cmd_calibrate_varsigma(args) -> int:
    out = _out_dir(args.out)
    grid = _parse_grid(args.grid)
    calib = CostCalibrationSpec(varsigma_grid=tuple(grid))
    rows, xis = [], []
    for v in calib.varsigma_grid:
        res = xi_objective(v, calib, seed=args.seed)
        xis.append(res.xi)
        rows.append([_g(v), _g(res.xi), ";".join(_g(b) for b in res.flagged)])
    _write(out / "xi.csv", _table(["varsigma", "xi", "unconverged_betas"], rows))
    if len(grid) > 1:
        k = int(np.argmin(xis))
        print(f"argmin_varsigma,{_g(grid[k])}")
        print(f"min_xi,{_g(xis[k])}")
        if not args.no_plots:
            from .report import plot_xi

            print(f"wrote {plot_xi(grid, xis, out / 'xi.png')}")
    else:
        print(f"xi,{_g(xis[0])}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .vqa import OptimizerBudget, Processor, SweepPlan, records_json, run_sweep, summary_table

    out = _out_dir(args.out)
    config = _config(args)
    betas = _parse_floats(args.betas, "--betas") if args.betas else None
    budget = OptimizerBudget(
        max_evaluations=args.budget,
        remeasure_count=args.remeasure,
        cost_shots=args.shots,
        tomo_shots=args.tomo_shots,
    )
    records = []
    for level in args.level or [0]:
        for mode in args.mode or ["variational"]:
            plan_kw = {"noise_level": level, "mode": mode}
            if betas is not None:
                plan_kw["betas"] = tuple(betas)
            try:
                plan = SweepPlan(**plan_kw)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            proc = Processor.build(level, config)

            def show(r):
                print(f"{mode},{level},{_g(r.beta)},F_A={_g(r.fidelity['A'])},F_B={_g(r.fidelity['B'])}")

            recs = run_sweep(plan, proc, budget, seed=args.seed, exact=args.exact, progress=show)
            _write(out / f"records_L{level}_{mode}.json", records_json(recs) + "\n")
            records.extend(recs)
    _write(out / "summary.csv", summary_table(records))
    if not args.no_plots:
        from .report import plot_sweep

        print(f"wrote {plot_sweep(records, out / 'sweep.png', lambda b: purity(gibbs_state(b)))}")
    return EXIT_OK


def cmd_landscape(args) -> int:
    from .vqa import Processor, landscape_grid, landscape_scan

    out = _out_dir(args.out)
    config = _config(args)
    grid = landscape_grid(args.points)
    shots = None if args.exact else args.shots
    for level in args.level or [0]:
        proc = Processor.build(level, config)
        for axis in args.axis or ["gamma", "alpha"]:
            vals = landscape_scan(axis, proc, grid, beta=args.beta, shots=shots, seed=args.seed)
            rows = [[_g(grid[a]), _g(grid[b]), _g(vals[a, b])] for a in range(len(grid)) for b in range(len(grid))]
            name = f"landscape_{axis}_L{level}"
            _write(out / f"{name}.csv", _table([f"{axis}1", f"{axis}2", "cost"], rows))
            print(f"{axis},{level},min={_g(vals.min())},max={_g(vals.max())}")
            if not args.no_plots:
                from .report import plot_landscape

                print(f"wrote {plot_landscape(vals, grid, axis, out / (name + '.png'))}")
    return EXIT_OK


def compile_check(count: int, seed: int, reduce: bool = True) -> tuple[bool, list[str]]:
    """Random-angle equivalence and depth checks of the compilation pipeline."""
    rng = np.random.default_rng(seed)
    lines, ok = [], True
    for k in range(count):
        angles = circ.VariationalAngles.from_array(rng.uniform(-np.pi, np.pi, 4))
        stages = circ.compile_stages(angles, reduce=reduce)
        ref = circ.unitary_of(stages["abstract"])
        dev = {
            name: circ.equal_up_to_phase(circ.unitary_of(c), ref)
            for name, c in stages.items()
            if name not in ("abstract", "final")
        }
        # virtual-Z elimination only preserves the state prepared from |0000>
        dev["final"] = circ.equal_up_to_phase(
            circ.prepare_zero_column(circ.unitary_of(stages["final"])), ref[:, 0]
        )
        worst = max(dev.values())
        if reduce:
            depth, expected = stages["final"].depth, EXPECTED_FINAL_DEPTH
        else:
            depth, expected = stages["native"].depth, EXPECTED_UNREDUCED_DEPTH
        passed = worst < COMPILE_TOL and depth == expected
        ok &= passed
        lines.append(
            f"{k},{'pass' if passed else 'FAIL'},depth={depth},max_dev={worst:.3e},"
            f"angles={';'.join(_g(a) for a in angles.as_array())}"
        )
    return ok, lines


def cmd_compile_check(args) -> int:
    reduce = not args.no_reduce
    ok, lines = compile_check(args.count, args.seed, reduce)
    for line in lines:
        print(line)
    stages = circ.compile_stages(circ.VariationalAngles(0.1, 0.2, 0.3, 0.4), reduce=reduce)
    for name, c in stages.items():
        print(f"depth,{name},{c.depth}")
    reported = stages["final"].depth if reduce else stages["native"].depth
    print(f"reported_depth,{reported}")
    if args.out:
        out = _out_dir(args.out)
        _write(out / "final_circuit.txt", circ.dumps(stages["final"]))
    print("compile-check " + ("passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_CHECK


def cmd_tomo_demo(args) -> int:
    from .tomo import (
        MeasurementModel,
        calibration_averages,
        cost_settings,
        dump_averages,
        leakage_map,
        measure_settings,
        tomography_2q,
    )
    from .vqa import Processor, assess_state, ideal_optimal_angles

    out = _out_dir(args.out)
    config = _config(args)
    proc = Processor.build(args.level[0] if args.level else 4, config)
    shots = None if args.exact else args.shots
    angles = ideal_optimal_angles([args.beta], seed=args.seed)[0]
    rho = proc.prepare(angles)

    calib = calibration_averages(proc.readout, shots=shots, seed=args.seed)
    avgs = measure_settings(rho, cost_settings(), proc.readout, shots, args.seed)
    _write(out / "raw_averages.csv", dump_averages(calib, avgs))

    tomo = assess_state(rho, args.beta, proc, None if args.exact else args.tomo_shots, args.seed, 0)
    gibbs = gibbs_state(args.beta)
    from .qudit import fidelity

    rows = []
    for s, t in tomo.items():
        f = fidelity(gibbs, DensityMatrix.from_unchecked(make_register(t.rho_exp.labels), t.rho_exp.data), clamp=True)
        rows.append([s, _g(f), _g(purity(t.rho_exp)), _g(t.min_eigenvalue)]
                    + [_g(t.pauli_estimates[w]) for w in sorted(t.pauli_estimates)])
        print(f"system,{s},F={_g(f)},P={_g(purity(t.rho_exp))}")
    words = sorted(next(iter(tomo.values())).pauli_estimates)
    _write(out / "tomography.csv", _table(["system", "F", "P", "min_eig"] + words, rows))

    # leakage examples: single-qubit states on a qutrit pair
    s2 = 1 / np.sqrt(2)
    kets = {"-": [s2, -s2, 0], "+i": [s2, 1j * s2, 0], "-i": [s2, -1j * s2, 0], "2": [0, 0, 1]}
    reg = make_register(("A2", "A1"), 3)
    ideal = MeasurementModel.ideal(("A2", "A1"))
    rows = []
    for a, b in (("-", "-"), ("+i", "2"), ("2", "-i"), ("2", "2")):
        r2 = DensityMatrix.from_ket(reg, np.kron(kets[a], kets[b]))
        t = tomography_2q(r2, ("A2", "A1"), ideal, shots=None)
        dev = np.abs(t.rho_exp.data - leakage_map(r2).data).max()
        rows.append([f"|{a},{b}>", _g(purity(t.rho_exp)), f"{dev:.3e}"])
    _write(out / "leakage_examples.csv", _table(["state", "purity_exp", "max_dev_vs_map"], rows))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="device config file (INI); default: bundled device")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    common.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    sampling = argparse.ArgumentParser(add_help=False)
    sampling.add_argument("--shots", type=int, default=4096, help="shots per cost setting")
    sampling.add_argument("--tomo-shots", type=int, default=16384, help="shots per tomography setting")
    sampling.add_argument("--exact", action="store_true", help="exact expectation values, no sampling")
    sampling.add_argument("--level", type=int, action="append", choices=range(5), help="noise level, repeatable")

    p = argparse.ArgumentParser(prog="thermofield", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate-varsigma", parents=[common], help="scan Xi over varsigma")
    c.add_argument("--grid", default="1.0:2.0:0.01", help="start:stop:step or comma list")
    c.set_defaults(func=cmd_calibrate_varsigma)

    s = sub.add_parser("sweep", parents=[common, sampling], help="beta sweep")
    s.add_argument("--mode", action="append", choices=("variational", "cheating"))
    s.add_argument("--betas", help="comma-separated beta grid")
    s.add_argument("--budget", type=int, default=200, help="cost evaluations per beta")
    s.add_argument("--remeasure", type=int, default=2, help="re-evaluations of the best point")
    s.set_defaults(func=cmd_sweep)

    l = sub.add_parser("landscape", parents=[common, sampling], help="cost landscape at fixed beta")
    l.add_argument("--axis", action="append", choices=("gamma", "alpha"))
    l.add_argument("--points", type=int, default=10, help="grid points per axis over [0, pi]")
    l.add_argument("--beta", type=float, default=0.0)
    l.set_defaults(func=cmd_landscape)

    k = sub.add_parser("compile-check", parents=[common], help="verify the compilation pipeline")
    k.add_argument("--count", type=int, default=20)
    k.add_argument("--no-reduce", action="store_true", help="disable the CZ depth-reduction pass")
    k.set_defaults(func=cmd_compile_check, out=None)

    t = sub.add_parser("tomo-demo", parents=[common, sampling], help="raw averages and tomography")
    t.add_argument("--beta", type=float, default=1.0)
    t.set_defaults(func=cmd_tomo_demo)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
