"""Derivative-free minimisation on the angle torus.

Engines follow one contract: ``engine(f, x0, budget=..., seed=...)`` returns an
:class:`OptimizeResult` whose ``trace`` lists every evaluated point in order.
Points are wrapped into (-pi, pi] before ``f`` sees them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize as _scipy_minimize


def wrap_angles(x) -> np.ndarray:
    """Map angles into (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(y <= -np.pi, y + 2 * np.pi, y)


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    trace: list[tuple[np.ndarray, float]] = field(default_factory=list)
    converged: bool = True

    @property
    def nfev(self) -> int:
        return len(self.trace)


class _BudgetExhausted(Exception):
    pass


class _Tracked:
    def __init__(self, f: Callable, budget: int):
        self.f = f
        self.budget = budget
        self.trace: list[tuple[np.ndarray, float]] = []

    def __call__(self, x) -> float:
        if len(self.trace) >= self.budget:
            raise _BudgetExhausted
        xw = wrap_angles(x)
        val = float(self.f(xw))
        self.trace.append((xw, val))
        return val

    def best(self) -> tuple[np.ndarray, float]:
        k = int(np.argmin([v for _, v in self.trace]))
        return self.trace[k]


def _simplex(x0: np.ndarray, step: float) -> np.ndarray:
    n = len(x0)
    sim = np.tile(x0, (n + 1, 1))
    for k in range(n):
        sim[k + 1, k] += step
    return sim


def simplex_search(
    f: Callable,
    x0,
    budget: int = 200,
    seed: int = 0,
    restarts: int = 3,
    step: float = 0.4,
    xatol: float = 1e-6,
    fatol: float = 1e-9,
) -> OptimizeResult:
    """Nelder-Mead from ``x0``; leftover budget goes to random restarts.

    The first evaluation is always ``x0`` itself, so the returned value never
    exceeds the cost at the initial guess.
    """
    rng = np.random.default_rng(seed)
    tracked = _Tracked(f, budget)
    starts = [np.asarray(x0, dtype=float)]
    converged = False
    try:
        tracked(starts[0])
        for r in range(restarts + 1):
            if r > 0:
                starts.append(rng.uniform(-np.pi, np.pi, size=len(x0)))
                remaining = budget - len(tracked.trace)
                per_run = remaining // (restarts + 1 - r)
            else:
                per_run = budget
            if per_run < len(x0) + 2:
                break
            res = _scipy_minimize(
                tracked,
                starts[-1],
                method="Nelder-Mead",
                options={
                    "maxfev": per_run,
                    "initial_simplex": _simplex(starts[-1], step),
                    "xatol": xatol,
                    "fatol": fatol,
                },
            )
            converged = converged or bool(res.success)
    except _BudgetExhausted:
        pass
    x, val = tracked.best()
    return OptimizeResult(x=x, fun=val, trace=tracked.trace, converged=converged)


def multistart_minimize(f: Callable, x0, seed: int = 0, budget: int = 400, restarts: int = 3) -> OptimizeResult:
    """Noiseless inner optimiser: a full ``budget`` from ``x0`` and from each restart."""
    rng = np.random.default_rng(seed)
    best: OptimizeResult | None = None
    starts = [np.asarray(x0, dtype=float)] + [rng.uniform(-np.pi, np.pi, 4) for _ in range(restarts)]
    for k, s in enumerate(starts):
        res = simplex_search(f, s, budget=budget, seed=seed + k, restarts=0, step=0.3)
        if best is None or res.fun < best.fun - 1e-12:
            res.trace = (best.trace if best else []) + res.trace
            best = res
        else:
            best.trace += res.trace
            best.converged = best.converged or res.converged
    return best
