"""Build the deformed-cube / shrinking-sphere phantom and look inside it.

The source volume holds a bright cube with a darker sphere at its center; the
target pushes every cube face inward along a paraboloid and shrinks the
sphere.  Guidance pairs points on the two sphere surfaces.
"""

import numpy as np

from morphreg import SyntheticConfig, generate_synthetic_pair, save_volume

cfg = SyntheticConfig()  # 50^3, cube side 40, sphere 10 -> 5, depth 6
problem = generate_synthetic_pair(cfg)

nx, ny, nz = problem.dims
print(f"volume dims      : {nx} x {ny} x {nz}, spacing {problem.spacing} mm")
print(f"source sphere    : {int(problem.source_mask.sum())} voxels")
print(f"target sphere    : {int(problem.target_mask.sum())} voxels")
src_pts, tgt_pts = problem.guidance.correspondences[0]
print(f"guidance points  : {len(src_pts)} per side (one correspondence)")

# mid cross-section as crude ASCII art
z = nz // 2
for name, vol in (("source", problem.source), ("target", problem.target)):
    sl = vol.intensities[:, :, z]
    rows = []
    for y in range(0, ny, 2):
        rows.append("".join(" .#"[int(v * 2.49)] for v in sl[::2, y]))
    print(f"\n{name} slice z={z}:")
    print("\n".join(rows))

save_volume(problem.source, "demo_source.mha")
save_volume(problem.target, "demo_target.mha")
print("\nwrote demo_source.mha / demo_target.mha")
