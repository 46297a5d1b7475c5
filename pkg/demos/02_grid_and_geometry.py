"""The dual tetrahedral grid up close: exact voxel ownership, point mapping
and the fold constraints."""

import numpy as np

from morphreg import (
    build_topology,
    check_feasibility,
    init_identity_solution,
    map_point,
    rasterize_tet,
    transform_points,
)

dims = (30, 30, 30)
topo = build_topology((4, 4, 4))
sol = init_identity_solution(topo, np.asarray(dims))
print(f"grid 4x4x4: {topo.n_tets} tets over {topo.n_cubes} cubes, "
      f"{topo.n_variables} decision variables")

# every voxel center is owned by exactly one tet: rasterization partitions
counts = np.zeros(dims, np.int32)
for t in range(topo.n_tets):
    for x, y, z in rasterize_tet(sol.points[0][topo.tets[t]], dims):
        counts[x, y, z] += 1
print(f"partition check : min/max ownership = {counts.min()}/{counts.max()} "
      f"over {counts.size} voxels")

# deform the target grid a little and map points through the transform
rng = np.random.default_rng(0)
free = np.isnan(sol.fixed_coords)
sol.points[1] += np.where(free, rng.normal(0, 0.7, sol.points[1].shape), 0.0)
print(f"still feasible  : {check_feasibility(sol)}")

pts = rng.uniform(2, 27, (5, 3))
fwd = transform_points(sol, pts, "forward")
back = transform_points(sol, fwd, "backward")
print(f"inverse consistency over 5 points: "
      f"max |back - original| = {np.abs(back - pts).max():.2e} voxels")

# a fold is rejected: push a point through its star
bad = sol.copy()
bad.points[1][topo.point_index(2, 2, 2)] += np.array([25.0, 0.0, 0.0])
print(f"folded grid accepted? {check_feasibility(bad)}")
