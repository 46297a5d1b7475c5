"""Coarse-to-fine schedule: each stage reseeds from the previous front.

A finer stage draws its initial population uniformly with replacement from the
coarser stage's archive, refines every draw by cube subdivision (which keeps
it feasible), re-evaluates from scratch and runs the optimizer at the finer
resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mesh import Solution, build_topology, init_identity_solution, refine_solution
from .objectives import eval_all
from .optimizer import (
    ElitistArchive,
    Population,
    StageConfig,
    run_optimization,
)
from .volume import RegistrationProblem


@dataclass
class ScheduleResult:
    population: Population
    archive: ElitistArchive
    stage_archives: list[ElitistArchive] = field(default_factory=list)
    stage_configs: list[StageConfig] = field(default_factory=list)


def _compatible(coarse, fine) -> bool:
    return all(2 * c - 1 == f for c, f in zip(coarse, fine))


def solution_from_points(template: Solution, points: np.ndarray) -> Solution:
    """Rebuild a full solution around an archived coordinate array."""
    s = template.copy()
    s.points = points.copy()
    s.cache = None
    s.objectives = None
    return s


def run_schedule(
    problem: RegistrationProblem,
    schedule: list[StageConfig],
    seed: int = 0,
) -> ScheduleResult:
    """Run the full multi-resolution registration; deterministic per seed."""
    if not schedule:
        raise ValueError("schedule must contain at least one stage")
    for a, b in zip(schedule, schedule[1:]):
        if not _compatible(a.grid_resolution, b.grid_resolution):
            raise ValueError(
                f"stage resolutions {a.grid_resolution} -> {b.grid_resolution} "
                "are not refinement-compatible (need 2r-1 per axis)"
            )
    rng = np.random.default_rng(seed)
    result = ScheduleResult(population=None, archive=None)
    population = None
    for i, config in enumerate(schedule):
        if i > 0:
            population = _reseed_population(
                problem, schedule[i - 1], config, result.stage_archives[-1], rng
            )
        population, archive = run_optimization(
            problem, config, initial_population=population, rng=rng
        )
        result.stage_archives.append(archive)
        result.stage_configs.append(config)
    result.population = population
    result.archive = result.stage_archives[-1]
    return result


def _reseed_population(
    problem: RegistrationProblem,
    prev_config: StageConfig,
    config: StageConfig,
    prev_archive: ElitistArchive,
    rng: np.random.Generator,
) -> Population:
    members = prev_archive.front()
    if not members:
        raise RuntimeError("previous stage archive is empty")
    coarse_topo = build_topology(prev_config.grid_resolution)
    template = init_identity_solution(
        coarse_topo, np.asarray(problem.dims), problem.spacing
    )
    draws = rng.integers(0, len(members), size=config.population_size)
    solutions = []
    for d in draws:
        coarse = solution_from_points(template, members[d].payload)
        solutions.append(refine_solution(coarse))
    return Population(solutions=solutions, generation=0)
