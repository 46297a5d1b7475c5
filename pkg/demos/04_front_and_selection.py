"""Navigate an approximation front the way the explorer UI does: walk from
the lowest-guidance solution toward lower deformation, then render the pick.

Run demos/03 or the CLI first if you want a bigger bundle; this script builds
its own small one.
"""

import numpy as np

from morphreg import StageConfig, SyntheticConfig, generate_synthetic_pair, run_schedule
from morphreg.driver import render_solution, solution_metrics
from morphreg.mesh import build_topology, init_identity_solution
from morphreg.multires import solution_from_points

problem = generate_synthetic_pair(
    SyntheticConfig(dims=(32, 32, 32), cube_side=25, sphere_radius_source=6,
                    sphere_radius_target=3, parabola_depth=4, n_guidance=64)
)
result = run_schedule(
    problem,
    [StageConfig(grid_resolution=(4, 4, 4), population_size=16, generations=10)],
    seed=3,
)
members = result.archive.front()
objs = result.archive.front_objectives()
print(f"front: {len(members)} solutions")
print(f"{'idx':>4} {'dissimilarity':>14} {'deformation':>12} {'guidance':>10}")
order = np.argsort(objs[:, 2])
for k in order[:8]:
    d, f, g = objs[k]
    print(f"{k:>4} {d:>14.5f} {f:>12.4f} {g:>10.4f}")

# a-posteriori pick: start at min guidance, accept lower deformation while
# guidance stays within 25% of the minimum
g_min = objs[:, 2].min()
candidates = objs[:, 2] <= 1.25 * g_min
pick = int(np.nonzero(candidates)[0][np.argmin(objs[candidates, 1])])
print(f"\npicked solution {pick}: guidance {objs[pick, 2]:.4f} mm^2, "
      f"deformation {objs[pick, 1]:.4f}")

template = init_identity_solution(
    build_topology((4, 4, 4)), np.asarray(problem.dims), problem.spacing
)
solution = solution_from_points(template, members[pick].payload)
metrics = solution_metrics(solution, problem)
print(f"metrics: dice={metrics['dice']:.4f} "
      f"guidance RMS={metrics['guidance_rms_mm']:.3f} mm")

tsrc, _, dvf = render_solution(solution, problem)
print(f"DVF magnitude: mean {np.linalg.norm(dvf, axis=-1).mean():.3f} mm, "
      f"max {np.linalg.norm(dvf, axis=-1).max():.3f} mm")
