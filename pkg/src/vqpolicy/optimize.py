"""Self-contained Nelder-Mead simplex minimizer.

Any derivative-free local minimizer satisfying this interface is admissible as
the solver-side optimizer; this implementation keeps the package free of an
external optimization dependency and makes runs bit-reproducible.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def nelder_mead(
    f: Callable[[np.ndarray], float],
    x0: Sequence[float],
    maxiter: int = 200,
    xtol: float = 1e-6,
    ftol: float = 1e-9,
    initial_step: float = 0.5,
) -> tuple[np.ndarray, float, list[float]]:
    """Minimize f from x0; returns (x_best, f_best, best-so-far history).

    The history records the running best objective value once per function
    evaluation, so it is nonincreasing and its length equals the number of
    evaluations used.  Termination: simplex diameter below xtol, function
    spread below ftol, or the iteration budget.
    """
    if maxiter < 1:
        raise ValueError("maxiter must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 1:
        raise ValueError("x0 must be a flat vector")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    d = x0.size

    history: list[float] = []

    def fe(x: np.ndarray) -> float:
        v = float(f(x))
        if not np.isfinite(v):
            raise ValueError("objective returned a non-finite value")
        history.append(min(v, history[-1]) if history else v)
        return v

    if d == 0:
        v = fe(x0)
        return x0, v, history

    alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5
    simplex = [x0.copy()]
    for i in range(d):
        step = np.zeros(d)
        step[i] = initial_step
        simplex.append(x0 + step)
    fvals = [fe(x) for x in simplex]

    for _ in range(maxiter):
        order = np.argsort(fvals, kind="stable")
        simplex = [simplex[i] for i in order]
        fvals = [fvals[i] for i in order]

        diameter = max(float(np.max(np.abs(x - simplex[0]))) for x in simplex[1:])
        spread = fvals[-1] - fvals[0]
        if diameter < xtol or spread < ftol:
            break

        centroid = np.mean(simplex[:-1], axis=0)
        reflected = centroid + alpha * (centroid - simplex[-1])
        fr = fe(reflected)
        if fvals[0] <= fr < fvals[-2]:
            simplex[-1], fvals[-1] = reflected, fr
            continue
        if fr < fvals[0]:
            expanded = centroid + gamma * (reflected - centroid)
            fx = fe(expanded)
            if fx < fr:
                simplex[-1], fvals[-1] = expanded, fx
            else:
                simplex[-1], fvals[-1] = reflected, fr
            continue
        contracted = centroid + rho * (simplex[-1] - centroid)
        fc = fe(contracted)
        if fc < fvals[-1]:
            simplex[-1], fvals[-1] = contracted, fc
            continue
        # shrink toward the best vertex
        for i in range(1, d + 1):
            simplex[i] = simplex[0] + sigma * (simplex[i] - simplex[0])
            fvals[i] = fe(simplex[i])

    i_best = int(np.argmin(fvals))
    return simplex[i_best], fvals[i_best], history
