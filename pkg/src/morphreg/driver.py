"""Command line driver: synthetic problems, registration runs, rendering,
metrics and the result-serving endpoint."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
from numba import njit

from .bundle import RunBundle, write_bundle
from .geometry import _slice_triangles, _inside_tri_2d, _tet_affine
from .mesh import SRC, TGT, Solution
from .multires import run_schedule
from .objectives import eval_all, eval_guidance, check_feasibility
from .optimizer import StageConfig
from .volume import (
    ImageVolume,
    RegistrationProblem,
    SyntheticConfig,
    _nearest_flat,
    _trilinear_flat,
    dice,
    generate_synthetic_pair,
    load_guidance,
    load_volume,
    save_guidance,
    save_volume,
)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


@njit(cache=True)
def _render_kernel(
    pts_rast, pts_pull, tets, flat_pull, nx, ny, nz, interp, eps_vol,
    out_intensity, out_mapped,
):
    """Fill per-voxel pulled intensities and mapped positions tet by tet."""
    verts = np.empty((4, 3))
    verts_p = np.empty((4, 3))
    mat = np.empty((3, 4))
    tris = np.empty((2, 3, 2))
    quad = np.empty((4, 2))
    for t in range(tets.shape[0]):
        for v in range(4):
            p = tets[t, v]
            verts[v, 0] = pts_rast[p, 0]
            verts[v, 1] = pts_rast[p, 1]
            verts[v, 2] = pts_rast[p, 2]
            verts_p[v, 0] = pts_pull[p, 0]
            verts_p[v, 1] = pts_pull[p, 1]
            verts_p[v, 2] = pts_pull[p, 2]
        det = _tet_affine(verts, verts_p, mat)
        if abs(det) / 6.0 <= eps_vol:
            continue
        zmin = verts[:, 2].min()
        zmax = verts[:, 2].max()
        z0 = max(0, int(np.ceil(zmin)))
        z1 = min(nz - 1, int(np.floor(zmax)))
        for z in range(z0, z1 + 1):
            ntri = _slice_triangles(verts, float(z), nz, tris, quad)
            for k in range(ntri):
                xa = min(tris[k, 0, 0], min(tris[k, 1, 0], tris[k, 2, 0]))
                xb = max(tris[k, 0, 0], max(tris[k, 1, 0], tris[k, 2, 0]))
                ya = min(tris[k, 0, 1], min(tris[k, 1, 1], tris[k, 2, 1]))
                yb = max(tris[k, 0, 1], max(tris[k, 1, 1], tris[k, 2, 1]))
                y0 = max(0, int(np.ceil(ya)))
                y1 = min(ny - 1, int(np.floor(yb)))
                x0 = max(0, int(np.ceil(xa)))
                x1 = min(nx - 1, int(np.floor(xb)))
                for y in range(y0, y1 + 1):
                    for x in range(x0, x1 + 1):
                        if not _inside_tri_2d(
                            tris[k, 0, 0], tris[k, 0, 1],
                            tris[k, 1, 0], tris[k, 1, 1],
                            tris[k, 2, 0], tris[k, 2, 1],
                            float(x), float(y), x == nx - 1, y == ny - 1,
                        ):
                            continue
                        mx = mat[0, 0] * x + mat[0, 1] * y + mat[0, 2] * z + mat[0, 3]
                        my = mat[1, 0] * x + mat[1, 1] * y + mat[1, 2] * z + mat[1, 3]
                        mz = mat[2, 0] * x + mat[2, 1] * y + mat[2, 2] * z + mat[2, 3]
                        idx = x + nx * (y + ny * z)
                        if interp == 0:
                            out_intensity[idx] = _trilinear_flat(flat_pull, nx, ny, nz, mx, my, mz)
                        else:
                            out_intensity[idx] = _nearest_flat(flat_pull, nx, ny, nz, mx, my, mz)
                        out_mapped[idx, 0] = mx
                        out_mapped[idx, 1] = my
                        out_mapped[idx, 2] = mz


def _pull_volume(solution: Solution, pull_from: ImageVolume, rast_grid: int):
    dims = pull_from.dims
    nx, ny, nz = dims
    out_i = np.zeros(nx * ny * nz)
    out_m = np.zeros((nx * ny * nz, 3))
    pull_grid = SRC if rast_grid == TGT else TGT
    _render_kernel(
        solution.points[rast_grid], solution.points[pull_grid],
        solution.topology.tets, pull_from.flat, nx, ny, nz, 0, solution.eps_vol,
        out_i, out_m,
    )
    vol = ImageVolume(out_i.reshape(dims, order="F"), pull_from.spacing)
    return vol, out_m.reshape((nx, ny, nz, 3), order="F")


def render_solution(solution: Solution, problem: RegistrationProblem):
    """Transformed source, transformed target and the dense forward DVF.

    The DVF holds, per target-domain voxel, the displacement in mm from the
    voxel position to its mapped position in the source domain.
    """
    nx, ny, nz = problem.dims
    transformed_source, mapped = _pull_volume(solution, problem.source, TGT)
    transformed_target, _ = _pull_volume(solution, problem.target, SRC)
    grid = np.stack(
        np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"),
        axis=-1,
    ).astype(np.float64)
    dvf = (mapped - grid) * problem.spacing[None, None, None, :]
    return transformed_source, transformed_target, dvf


def transform_mask(solution: Solution, mask: np.ndarray, problem: RegistrationProblem) -> np.ndarray:
    """Pull a binary source mask into the target domain (nearest neighbour)."""
    vol = ImageVolume(mask.astype(np.float64), problem.spacing)
    nx, ny, nz = problem.dims
    out_i = np.zeros(nx * ny * nz)
    out_m = np.zeros((nx * ny * nz, 3))
    _render_kernel(
        solution.points[TGT], solution.points[SRC],
        solution.topology.tets, vol.flat, nx, ny, nz, 1, solution.eps_vol,
        out_i, out_m,
    )
    return out_i.reshape(problem.dims, order="F") > 0.5


def solution_metrics(solution: Solution, problem: RegistrationProblem) -> dict:
    """Dice of the transformed source mask plus the guidance error."""
    out = {}
    if problem.source_mask is not None and problem.target_mask is not None:
        warped = transform_mask(solution, problem.source_mask, problem)
        out["dice"] = dice(warped, problem.target_mask)
    if problem.guidance is not None:
        solution.cache = None
        g = eval_guidance(solution, problem)
        out["guidance_error_mm2"] = g
        out["guidance_rms_mm"] = float(np.sqrt(g))
    return out


# ---------------------------------------------------------------------------
# Problem directory I/O
# ---------------------------------------------------------------------------

DEFAULT_SCHEDULE = [
    {"grid_resolution": [6, 6, 6], "population_size": 250, "generations": 300},
    {"grid_resolution": [11, 11, 11], "population_size": 500, "generations": 600},
]

SMOKE_SCHEDULE = [
    {"grid_resolution": [6, 6, 6], "population_size": 64, "generations": 60},
    {"grid_resolution": [11, 11, 11], "population_size": 64, "generations": 120},
]


def write_problem_dir(problem: RegistrationProblem, out_dir) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    files = {
        "source": "source.mha",
        "target": "target.mha",
    }
    save_volume(problem.source, os.path.join(out_dir, "source.mha"))
    save_volume(problem.target, os.path.join(out_dir, "target.mha"))
    if problem.source_mask is not None:
        save_volume(
            ImageVolume(problem.source_mask.astype(np.float64), problem.spacing),
            os.path.join(out_dir, "source_mask.mha"),
            element_type="MET_UCHAR",
        )
        files["source_mask"] = "source_mask.mha"
    if problem.target_mask is not None:
        save_volume(
            ImageVolume(problem.target_mask.astype(np.float64), problem.spacing),
            os.path.join(out_dir, "target_mask.mha"),
            element_type="MET_UCHAR",
        )
        files["target_mask"] = "target_mask.mha"
    if problem.guidance is not None:
        save_guidance(problem.guidance, os.path.join(out_dir, "guidance.txt"))
        files["guidance"] = "guidance.txt"
    with open(os.path.join(out_dir, "problem.json"), "w") as f:
        json.dump(files, f, indent=2, sort_keys=True)
        f.write("\n")
    return files


def load_problem_dir(problem_dir) -> tuple[RegistrationProblem, dict]:
    problem_dir = os.fspath(problem_dir)
    with open(os.path.join(problem_dir, "problem.json")) as f:
        files = json.load(f)
    source = load_volume(os.path.join(problem_dir, files["source"]))
    target = load_volume(os.path.join(problem_dir, files["target"]))
    guidance = None
    if files.get("guidance"):
        guidance = load_guidance(os.path.join(problem_dir, files["guidance"]))
    source_mask = target_mask = None
    if files.get("source_mask"):
        source_mask = load_volume(os.path.join(problem_dir, files["source_mask"])).intensities > 0.5
    if files.get("target_mask"):
        target_mask = load_volume(os.path.join(problem_dir, files["target_mask"])).intensities > 0.5
    problem = RegistrationProblem(
        source=source, target=target, guidance=guidance,
        source_mask=source_mask, target_mask=target_mask,
    )
    abs_files = {
        k: os.path.abspath(os.path.join(problem_dir, v)) for k, v in files.items()
    }
    return problem, abs_files


def load_config(path) -> dict:
    with open(path) as f:
        return json.load(f)


def schedule_from_config(config: dict) -> list[StageConfig]:
    stages = []
    for entry in config["schedule"]:
        stages.append(
            StageConfig(
                grid_resolution=tuple(entry["grid_resolution"]),
                population_size=int(entry["population_size"]),
                generations=int(entry["generations"]),
                seed=int(config.get("seed", 0)),
                clusters=int(config.get("clusters", 5)),
                truncation_fraction=float(config.get("truncation_fraction", 0.35)),
                archive_cells=int(config.get("archive_cells", 200)),
            )
        )
    return stages


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    cfg = SyntheticConfig(
        dims=(args.dims,) * 3,
        cube_side=args.cube_side,
        sphere_radius_source=args.sphere_radius,
        sphere_radius_target=args.sphere_radius_target,
        parabola_depth=args.depth,
        n_guidance=args.n_guidance,
        spacing=(args.spacing,) * 3,
    )
    problem = generate_synthetic_pair(cfg)
    write_problem_dir(problem, args.out)
    config = {
        "seed": args.seed,
        "schedule": SMOKE_SCHEDULE if args.smoke else DEFAULT_SCHEDULE,
        "clusters": 5,
        "truncation_fraction": 0.35,
        "archive_cells": 200,
    }
    with open(os.path.join(args.out, "config.json"), "w") as f:
        json.dump(config, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"synthetic problem written to {args.out}")
    return 0


def _cmd_register(args) -> int:
    problem, files = load_problem_dir(args.problem)
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    seed = int(config.get("seed", 0))
    schedule = schedule_from_config(config)
    result = run_schedule(problem, schedule, seed=seed)
    write_bundle(args.out, result, files, config, seed)
    sizes = [len(a) for a in result.stage_archives]
    print(f"bundle written to {args.out}; archive sizes per stage: {sizes}")
    return 0


def _load_bundle_solution(bundle_dir, solution_id):
    bundle = RunBundle.open(bundle_dir)
    problem = bundle.load_problem()
    solution = bundle.load_solution(solution_id, problem)
    return bundle, problem, solution


def _cmd_render(args) -> int:
    bundle, problem, solution = _load_bundle_solution(args.bundle, args.solution)
    if not check_feasibility(solution):
        print("solution fails the fold check", file=sys.stderr)
        return 1
    tsrc, ttgt, dvf = render_solution(solution, problem)
    out = args.out or os.path.join(bundle.path, f"render_{args.solution}")
    os.makedirs(out, exist_ok=True)
    save_volume(tsrc, os.path.join(out, "transformed_source.mha"))
    save_volume(ttgt, os.path.join(out, "transformed_target.mha"))
    for a, name in enumerate(("dvf_x.mha", "dvf_y.mha", "dvf_z.mha")):
        comp = dvf[..., a]
        lo, hi = comp.min(), comp.max()
        span = hi - lo if hi > lo else 1.0
        save_volume(
            ImageVolume((comp - lo) / span, problem.spacing),
            os.path.join(out, name),
        )
    with open(os.path.join(out, "dvf_range.json"), "w") as f:
        json.dump(
            {
                "x": [float(dvf[..., 0].min()), float(dvf[..., 0].max())],
                "y": [float(dvf[..., 1].min()), float(dvf[..., 1].max())],
                "z": [float(dvf[..., 2].min()), float(dvf[..., 2].max())],
            },
            f, indent=2, sort_keys=True,
        )
    print(f"rendered volumes written to {out}")
    return 0


def _cmd_metrics(args) -> int:
    bundle, problem, solution = _load_bundle_solution(args.bundle, args.solution)
    metrics = solution_metrics(solution, problem)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _cmd_serve(args) -> int:
    from .server import serve_bundle

    server = serve_bundle(args.bundle, args.port)
    print(
        f"serving {args.bundle} on http://127.0.0.1:{server.server_address[1]}",
        flush=True,
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphreg",
        description="Multi-objective 3D deformable registration on dual tetrahedral grids",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic cube/sphere problem")
    p.add_argument("--out", required=True)
    p.add_argument("--dims", type=int, default=50)
    p.add_argument("--cube-side", type=float, default=40.0)
    p.add_argument("--sphere-radius", type=float, default=10.0)
    p.add_argument("--sphere-radius-target", type=float, default=5.0)
    p.add_argument("--depth", type=float, default=6.0)
    p.add_argument("--n-guidance", type=int, default=128)
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--smoke", action="store_true", help="emit the reduced CI schedule")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("register", help="run the multi-resolution registration")
    p.add_argument("--problem", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("render", help="write transformed volumes and the DVF")
    p.add_argument("--bundle", required=True)
    p.add_argument("--solution", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("metrics", help="Dice and guidance error of a solution")
    p.add_argument("--bundle", required=True)
    p.add_argument("--solution", required=True)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("serve", help="serve a bundle for the front explorer")
    p.add_argument("--bundle", required=True)
    p.add_argument("--port", type=int, default=8832)
    p.set_defaults(func=_cmd_serve)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
