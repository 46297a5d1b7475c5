"""Run bundles: the persistent form of a registration run.

A bundle directory holds the manifest (config echo, stages, record index),
one front table CSV and one binary solution file per stage, and pointers to
the problem files.  Solution records are little-endian float64: the
resolution triple followed by the source and target point arrays.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mesh import Solution, build_topology, init_identity_solution
from .multires import ScheduleResult
from .optimizer import StageConfig
from .volume import (
    GuidanceSet,
    ImageVolume,
    RegistrationProblem,
    load_guidance,
    load_volume,
)


def _fmt(x: float) -> str:
    return repr(float(x))


def solution_record_bytes(resolution, source_points, target_points) -> bytes:
    res = np.asarray(resolution, dtype="<f8")
    return (
        res.tobytes()
        + np.ascontiguousarray(source_points, dtype="<f8").tobytes()
        + np.ascontiguousarray(target_points, dtype="<f8").tobytes()
    )


def decode_solution_record(raw: bytes):
    res = np.frombuffer(raw[:24], dtype="<f8").astype(int)
    n = int(res[0] * res[1] * res[2])
    pts = np.frombuffer(raw[24:], dtype="<f8")
    if pts.size != 2 * n * 3:
        raise ValueError("solution record size mismatch")
    return tuple(res), pts[: n * 3].reshape(n, 3).copy(), pts[n * 3:].reshape(n, 3).copy()


def write_bundle(
    out_dir,
    result: ScheduleResult,
    problem_files: dict,
    config_data: dict,
    seed: int,
) -> None:
    """Persist every stage's front and solution records plus the manifest."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    stages = []
    for si, (config, archive) in enumerate(
        zip(result.stage_configs, result.stage_archives), start=1
    ):
        front_name = f"front_stage{si}.csv"
        sol_name = f"solutions_stage{si}.bin"
        members = archive.front()
        records = []
        offset = 0
        with open(os.path.join(out_dir, sol_name), "wb") as bf:
            for mi, member in enumerate(members):
                sid = f"s{si}-{mi:05d}"
                pts = member.payload
                raw = solution_record_bytes(config.grid_resolution, pts[0], pts[1])
                bf.write(raw)
                records.append(
                    {
                        "id": sid,
                        "offset": offset,
                        "nbytes": len(raw),
                        "objectives": [float(v) for v in member.obj],
                    }
                )
                offset += len(raw)
        with open(os.path.join(out_dir, front_name), "w", newline="\n") as cf:
            cf.write("id,dissimilarity,deformation,guidance\n")
            for rec in records:
                obj = rec["objectives"]
                guidance = _fmt(obj[2]) if len(obj) > 2 else ""
                cf.write(f"{rec['id']},{_fmt(obj[0])},{_fmt(obj[1])},{guidance}\n")
        stages.append(
            {
                "stage": si,
                "grid_resolution": list(config.grid_resolution),
                "population_size": config.population_size,
                "generations": config.generations,
                "front": front_name,
                "solutions": sol_name,
                "records": records,
            }
        )
    manifest = {
        "format": "morphreg-bundle-v1",
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "seed": seed,
        "config": config_data,
        "problem": problem_files,
        "stages": stages,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as mf:
        json.dump(manifest, mf, indent=2, sort_keys=True)
        mf.write("\n")


@dataclass
class RunBundle:
    """Read-side view of a bundle directory."""

    path: str
    manifest: dict

    @classmethod
    def open(cls, path) -> "RunBundle":
        path = os.fspath(path)
        with open(os.path.join(path, "manifest.json")) as f:
            manifest = json.load(f)
        return cls(path=path, manifest=manifest)

    @property
    def n_stages(self) -> int:
        return len(self.manifest["stages"])

    def stage(self, index: int) -> dict:
        for st in self.manifest["stages"]:
            if st["stage"] == index:
                return st
        raise KeyError(f"no stage {index}")

    def front_rows(self, stage: int) -> list[dict]:
        st = self.stage(stage)
        rows = []
        with open(os.path.join(self.path, st["front"])) as f:
            header = f.readline().strip().split(",")
            for line in f:
                parts = line.rstrip("\n").split(",")
                row = dict(zip(header, parts))
                rows.append(row)
        return rows

    def find_record(self, solution_id: str):
        for st in self.manifest["stages"]:
            for rec in st["records"]:
                if rec["id"] == solution_id:
                    return st, rec
        raise KeyError(f"unknown solution id {solution_id!r}")

    def solution_ids(self) -> list[str]:
        return [
            rec["id"] for st in self.manifest["stages"] for rec in st["records"]
        ]

    def load_problem(self) -> RegistrationProblem:
        info = self.manifest["problem"]
        base = self.path

        def respath(name):
            p = info[name]
            return p if os.path.isabs(p) else os.path.join(base, p)

        source = load_volume(respath("source"))
        target = load_volume(respath("target"))
        guidance: Optional[GuidanceSet] = None
        if info.get("guidance"):
            guidance = load_guidance(respath("guidance"))
        source_mask = target_mask = None
        if info.get("source_mask"):
            source_mask = load_volume(respath("source_mask")).intensities > 0.5
        if info.get("target_mask"):
            target_mask = load_volume(respath("target_mask")).intensities > 0.5
        return RegistrationProblem(
            source=source,
            target=target,
            guidance=guidance,
            source_mask=source_mask,
            target_mask=target_mask,
        )

    def load_solution(self, solution_id: str, problem: RegistrationProblem) -> Solution:
        st, rec = self.find_record(solution_id)
        with open(os.path.join(self.path, st["solutions"]), "rb") as f:
            f.seek(rec["offset"])
            raw = f.read(rec["nbytes"])
        res, src, tgt = decode_solution_record(raw)
        topo = build_topology(res)
        sol = init_identity_solution(topo, np.asarray(problem.dims), problem.spacing)
        sol.points[0] = src
        sol.points[1] = tgt
        return sol

    def write_selection(self, payload: dict) -> None:
        with open(os.path.join(self.path, "selected.json"), "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")

    def read_selection(self) -> Optional[dict]:
        p = os.path.join(self.path, "selected.json")
        if not os.path.exists(p):
            return None
        with open(p) as f:
            return json.load(f)
