import numpy as np
import pytest

from morphreg import (
    RegistrationProblem,
    ImageVolume,
    SyntheticConfig,
    build_topology,
    generate_synthetic_pair,
    init_identity_solution,
)

SMOKE_SYNTH = SyntheticConfig(
    dims=(32, 32, 32),
    cube_side=25.0,
    sphere_radius_source=6.0,
    sphere_radius_target=3.0,
    parabola_depth=4.0,
    n_guidance=64,
)


@pytest.fixture(scope="session")
def small_problem() -> RegistrationProblem:
    return generate_synthetic_pair(SMOKE_SYNTH)


@pytest.fixture(scope="session")
def tiny_identical_problem() -> RegistrationProblem:
    img = np.zeros((20, 20, 20))
    img[5:15, 5:15, 5:15] = 0.7
    return RegistrationProblem(
        source=ImageVolume(img, (1.0, 1.0, 1.0)),
        target=ImageVolume(img.copy(), (1.0, 1.0, 1.0)),
    )


def jittered_solution(resolution, dims, seed=0, sigma_frac=0.1, spacing=(1, 1, 1)):
    """A random feasible dual-grid solution for property tests."""
    from morphreg.objectives import check_feasibility

    topo = build_topology(resolution)
    sol = init_identity_solution(topo, np.asarray(dims), np.asarray(spacing, float))
    rng = np.random.default_rng(seed)
    steps = np.array([(dims[a] - 1) / (resolution[a] - 1) for a in range(3)])
    free = np.isnan(sol.fixed_coords)
    for g in range(2):
        jit = rng.normal(0.0, sigma_frac * steps, sol.points[g].shape)
        sol.points[g] = np.where(free, sol.points[g] + jit, sol.points[g])
    assert check_feasibility(sol), "fixture jitter folded the grid; lower sigma_frac"
    return sol
