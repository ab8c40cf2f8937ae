"""Differential evolution (rand/1/bin) with a finite-difference polish.

The population-based global search avoids the local minima that defeat plain
gradient descent on the moment-matching cost; a short gradient-descent polish
with backtracking line search then refines the best member.  Everything is
deterministic given the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class DeConfig:
    generations: int
    bounds: np.ndarray          # (K, 2) [lo, hi] per coordinate
    population: int | None = None  # default 10 * K
    f: float = 0.8              # differential weight
    cr: float = 0.9             # crossover rate
    seed: int = 0
    polish_steps: int = 0
    polish_rel_step: float = 1e-4

    def __post_init__(self):
        self.bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if self.bounds.shape[1] != 2:
            raise ValueError("bounds must be (K, 2)")
        if np.any(~np.isfinite(self.bounds)) or np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise ValueError("bounds must be finite with lo < hi")
        if self.population is None:
            self.population = max(10 * self.bounds.shape[0], 4)
        if self.population < 4:
            raise ValueError("population must be at least 4")
        if not (0.0 < self.f <= 2.0):
            raise ValueError("F must lie in (0, 2]")
        if not (0.0 <= self.cr <= 1.0):
            raise ValueError("CR must lie in [0, 1]")


@dataclass
class DeResult:
    best_x: np.ndarray
    best_f: float
    trace: np.ndarray           # best objective value after each generation
    n_evaluations: int = 0


def _clip(x, bounds):
    return np.clip(x, bounds[:, 0], bounds[:, 1])


def minimize(objective, cfg: DeConfig, x0=None) -> DeResult:
    """Global minimization over the bounded box.

    DE/rand/1/bin: mutant = x_a + F (x_b - x_c) with distinct random members,
    binomial crossover with one forced coordinate, greedy selection.  Candidates
    are clipped to the box.  After the configured generations, polish_steps of
    finite-difference gradient descent refine the best member.  An optional x0
    warm-starts the population (replaces its first member).
    """
    rng = np.random.default_rng(cfg.seed)
    k = cfg.bounds.shape[0]
    lo, hi = cfg.bounds[:, 0], cfg.bounds[:, 1]
    pop = lo + (hi - lo) * rng.random((cfg.population, k))
    if x0 is not None:
        pop[0] = _clip(np.asarray(x0, dtype=float), cfg.bounds)
    fitness = np.array([float(objective(x)) for x in pop])
    n_eval = cfg.population
    if np.any(~np.isfinite(fitness)):
        bad = int(np.flatnonzero(~np.isfinite(fitness))[0])
        raise ValueError(
            f"objective returned a non-finite value on the initial population "
            f"(member {bad}); check the objective configuration")
    trace = []
    for _ in range(cfg.generations):
        for m in range(cfg.population):
            idx = rng.choice(cfg.population - 1, size=3, replace=False)
            idx[idx >= m] += 1  # three distinct members, none equal to m
            a, b, c = pop[idx]
            mutant = _clip(a + cfg.f * (b - c), cfg.bounds)
            cross = rng.random(k) < cfg.cr
            cross[rng.integers(k)] = True
            trial = np.where(cross, mutant, pop[m])
            ft = float(objective(trial))
            n_eval += 1
            if ft <= fitness[m]:
                pop[m] = trial
                fitness[m] = ft
        trace.append(float(fitness.min()))
    best = int(np.argmin(fitness))
    best_x, best_f = pop[best].copy(), float(fitness[best])
    if cfg.polish_steps > 0:
        best_x, best_f, polish_trace, used = _polish(
            objective, best_x, best_f, cfg)
        n_eval += used
        trace.extend(polish_trace)
    if not trace:
        trace = [best_f]
    return DeResult(best_x=best_x, best_f=best_f,
                    trace=np.asarray(trace, dtype=float), n_evaluations=n_eval)


def _polish(objective, x, fx, cfg: DeConfig):
    """Finite-difference gradient descent with backtracking, box-clipped."""
    bounds = cfg.bounds
    span = bounds[:, 1] - bounds[:, 0]
    step = 1.0
    trace = []
    n_eval = 0
    for _ in range(cfg.polish_steps):
        h = cfg.polish_rel_step * np.maximum(np.abs(x), 1e-3 * span)
        grad = np.empty_like(x)
        for j in range(len(x)):
            e = np.zeros_like(x)
            e[j] = h[j]
            grad[j] = (objective(_clip(x + e, bounds)) - objective(_clip(x - e, bounds))) / (2 * h[j])
            n_eval += 2
        gnorm = np.linalg.norm(grad)
        if gnorm == 0 or not np.isfinite(gnorm):
            trace.append(fx)
            continue
        direction = -grad / gnorm
        improved = False
        while step > 1e-12:
            cand = _clip(x + step * direction, bounds)
            fc = float(objective(cand))
            n_eval += 1
            if fc < fx:
                x, fx = cand, fc
                step *= 1.6
                improved = True
                break
            step *= 0.5
        trace.append(fx)
        if not improved and step <= 1e-12:
            break
    return x, fx, trace, n_eval
