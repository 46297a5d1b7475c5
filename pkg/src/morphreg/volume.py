"""Image volumes, MetaImage I/O, synthetic problems and overlap metrics.

Intensities are kept normalized in [0, 1].  Arrays are indexed ``[x, y, z]``
and stored x-fastest (Fortran layout) so the in-memory order matches the raw
file payload byte for byte.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

# A voxel counts as empty (background) below this intensity: 8-bit black after
# normalization.
EMPTY_THRESHOLD = 1.0 / 255.0


@dataclass
class ImageVolume:
    """Dense 3D scalar image with per-axis spacing in mm/voxel."""

    intensities: np.ndarray        # (nx, ny, nz) float64 in [0, 1], F-ordered
    spacing: np.ndarray            # (3,) float64, mm per voxel

    def __post_init__(self):
        arr = np.asfortranarray(np.asarray(self.intensities, dtype=np.float64))
        if arr.ndim != 3:
            raise ValueError("intensities must be a 3D array")
        if min(arr.shape) < 2:
            raise ValueError("volume dims must be >= 2 per axis")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("intensities must lie in [0, 1]")
        self.intensities = arr
        self.spacing = np.asarray(self.spacing, dtype=np.float64)
        if np.any(self.spacing <= 0):
            raise ValueError("spacing components must be > 0")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.intensities.shape

    @property
    def flat(self) -> np.ndarray:
        """x-fastest 1D view for the compiled kernels."""
        return self.intensities.ravel(order="F")

    def slice_z(self, z: int) -> np.ndarray:
        """Axial slice as a (ny, nx) array, rows in y order."""
        return np.ascontiguousarray(self.intensities[:, :, z].T)


@dataclass
class GuidanceSet:
    """Corresponding point sets in world mm, one entry per correspondence."""

    correspondences: list[tuple[np.ndarray, np.ndarray]]
    label: str = ""

    def __post_init__(self):
        fixed = []
        for src, tgt in self.correspondences:
            src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
            tgt = np.asarray(tgt, dtype=np.float64).reshape(-1, 3)
            if len(src) == 0 or len(tgt) == 0:
                raise ValueError("each correspondence side must be non-empty")
            fixed.append((src, tgt))
        self.correspondences = fixed

    @property
    def total_points(self) -> int:
        return sum(len(s) + len(t) for s, t in self.correspondences)


@dataclass
class RegistrationProblem:
    """Pre-aligned, equally sampled source/target pair plus optional extras."""

    source: ImageVolume
    target: ImageVolume
    guidance: Optional[GuidanceSet] = None
    source_mask: Optional[np.ndarray] = None
    target_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.source.dims != self.target.dims:
            raise ValueError("source and target dims must match")
        if not np.allclose(self.source.spacing, self.target.spacing):
            raise ValueError("source and target spacing must match")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.source.dims

    @property
    def spacing(self) -> np.ndarray:
        return self.source.spacing

    @property
    def n_objectives(self) -> int:
        return 3 if self.guidance is not None else 2


# ---------------------------------------------------------------------------
# MetaImage subset I/O
# ---------------------------------------------------------------------------

_ELEMENT_TYPES = {"MET_UCHAR": np.uint8, "MET_FLOAT": np.float32}


def load_volume(path) -> ImageVolume:
    """Read a MetaImage-subset file, rescaling intensities to [0, 1].

    Supports MET_UCHAR and MET_FLOAT with the payload embedded (LOCAL) or in a
    sibling raw file.
    """
    path = os.fspath(path)
    header: dict[str, str] = {}
    with open(path, "rb") as f:
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: missing ElementDataFile key")
            key, _, value = line.decode("latin-1").partition("=")
            key = key.strip()
            header[key] = value.strip()
            if key == "ElementDataFile":
                break
        if header.get("ObjectType", "Image") != "Image":
            raise ValueError(f"{path}: not an image")
        if int(header.get("NDims", "0")) != 3:
            raise ValueError(f"{path}: non-3D image")
        etype = header.get("ElementType", "")
        if etype not in _ELEMENT_TYPES:
            raise ValueError(f"{path}: unsupported element type {etype!r}")
        dims = [int(v) for v in header["DimSize"].split()]
        spacing = [float(v) for v in header.get("ElementSpacing", "1 1 1").split()]
        if len(dims) != 3:
            raise ValueError(f"{path}: DimSize must have 3 components")
        datafile = header["ElementDataFile"]
        if datafile == "LOCAL":
            raw = f.read()
        else:
            with open(os.path.join(os.path.dirname(path), datafile), "rb") as df:
                raw = df.read()
    dtype = np.dtype(_ELEMENT_TYPES[etype]).newbyteorder("<")
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(raw) != expected:
        raise ValueError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    if etype == "MET_UCHAR":
        data /= 255.0
    arr = data.reshape(dims, order="F")
    return ImageVolume(intensities=arr, spacing=np.asarray(spacing))


def save_volume(volume: ImageVolume, path, element_type: str = "MET_FLOAT") -> None:
    """Write a volume as a single-file MetaImage with an embedded payload."""
    if element_type not in _ELEMENT_TYPES:
        raise ValueError(f"unsupported element type {element_type!r}")
    path = os.fspath(path)
    nx, ny, nz = volume.dims
    sx, sy, sz = volume.spacing
    header = (
        "ObjectType = Image\n"
        "NDims = 3\n"
        "BinaryData = True\n"
        "BinaryDataByteOrderMSB = False\n"
        f"DimSize = {nx} {ny} {nz}\n"
        f"ElementSpacing = {sx:.17g} {sy:.17g} {sz:.17g}\n"
        f"ElementType = {element_type}\n"
        "ElementDataFile = LOCAL\n"
    )
    flat = volume.flat
    if element_type == "MET_UCHAR":
        payload = np.clip(np.rint(flat * 255.0), 0, 255).astype("<u1").tobytes()
    else:
        payload = flat.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header.encode("latin-1"))
        f.write(payload)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _trilinear_flat(flat, nx, ny, nz, x, y, z):
    if x < 0.0:
        x = 0.0
    elif x > nx - 1:
        x = float(nx - 1)
    if y < 0.0:
        y = 0.0
    elif y > ny - 1:
        y = float(ny - 1)
    if z < 0.0:
        z = 0.0
    elif z > nz - 1:
        z = float(nz - 1)
    x0 = int(x)
    y0 = int(y)
    z0 = int(z)
    if x0 > nx - 2:
        x0 = nx - 2
    if y0 > ny - 2:
        y0 = ny - 2
    if z0 > nz - 2:
        z0 = nz - 2
    fx = x - x0
    fy = y - y0
    fz = z - z0
    base = x0 + nx * (y0 + ny * z0)
    sxy = nx * ny
    c000 = flat[base]
    c100 = flat[base + 1]
    c010 = flat[base + nx]
    c110 = flat[base + nx + 1]
    c001 = flat[base + sxy]
    c101 = flat[base + sxy + 1]
    c011 = flat[base + sxy + nx]
    c111 = flat[base + sxy + nx + 1]
    c00 = c000 + fx * (c100 - c000)
    c01 = c001 + fx * (c101 - c001)
    c10 = c010 + fx * (c110 - c010)
    c11 = c011 + fx * (c111 - c011)
    c0 = c00 + fy * (c10 - c00)
    c1 = c01 + fy * (c11 - c01)
    return c0 + fz * (c1 - c0)


@njit(cache=True, inline="always")
def _nearest_flat(flat, nx, ny, nz, x, y, z):
    xi = int(np.rint(x))
    yi = int(np.rint(y))
    zi = int(np.rint(z))
    if xi < 0:
        xi = 0
    elif xi > nx - 1:
        xi = nx - 1
    if yi < 0:
        yi = 0
    elif yi > ny - 1:
        yi = ny - 1
    if zi < 0:
        zi = 0
    elif zi > nz - 1:
        zi = nz - 1
    return flat[xi + nx * (yi + ny * zi)]


def trilinear_sample(volume: ImageVolume, point) -> float:
    """Trilinear interpolation at a continuous voxel coordinate (clamped)."""
    p = np.asarray(point, dtype=np.float64)
    nx, ny, nz = volume.dims
    return float(_trilinear_flat(volume.flat, nx, ny, nz, p[0], p[1], p[2]))


# ---------------------------------------------------------------------------
# Synthetic registration problem
# ---------------------------------------------------------------------------


@dataclass
class SyntheticConfig:
    """Deformed-cube / shrinking-sphere phantom parameters (voxel units)."""

    dims: tuple[int, int, int] = (50, 50, 50)
    cube_side: float = 40.0
    sphere_radius_source: float = 10.0
    sphere_radius_target: float = 5.0
    parabola_depth: float = 6.0
    n_guidance: int = 128
    cube_intensity: float = 0.8
    sphere_intensity: float = 0.4
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)


def _fibonacci_sphere(n: int) -> np.ndarray:
    # Deterministic, near-uniform unit directions.
    i = np.arange(n, dtype=np.float64)
    golden = (1.0 + 5.0**0.5) / 2.0
    phi = 2.0 * np.pi * (i / golden % 1.0)
    cos_theta = 1.0 - 2.0 * (i + 0.5) / n
    sin_theta = np.sqrt(np.maximum(0.0, 1.0 - cos_theta**2))
    return np.stack([sin_theta * np.cos(phi), sin_theta * np.sin(phi), cos_theta], axis=1)


def generate_synthetic_pair(config: SyntheticConfig = SyntheticConfig()) -> RegistrationProblem:
    """Build the deformed-cube phantom with a shrinking central sphere.

    The source is a bright cube containing a darker sphere; the target pushes
    every cube face inward by a paraboloid (zero on the face border, depth
    ``parabola_depth`` at its center) and shrinks the sphere.  Guidance is one
    correspondence: points on the source sphere surface paired with the same
    directions scaled onto the target sphere.
    """
    dims = tuple(int(d) for d in config.dims)
    if min(dims) < 32:
        raise ValueError("synthetic volume dims must be >= 32 per axis")
    half = config.cube_side / 2.0
    r0 = float(config.sphere_radius_source)
    r1 = float(config.sphere_radius_target)
    d = float(config.parabola_depth)
    if r1 > r0:
        raise ValueError("target sphere radius must not exceed the source radius")
    if r0 >= half or d >= half - r0:
        raise ValueError("sphere and parabola must fit inside the cube")
    if half >= min(dims) / 2.0:
        raise ValueError("cube must fit inside the volume")

    center = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
    x = np.arange(dims[0], dtype=np.float64)[:, None, None] - center[0]
    y = np.arange(dims[1], dtype=np.float64)[None, :, None] - center[1]
    z = np.arange(dims[2], dtype=np.float64)[None, None, :] - center[2]

    in_cube_src = (np.abs(x) <= half) & (np.abs(y) <= half) & (np.abs(z) <= half)

    # Face at +x sits at half - depth(y, z); the separable parabola profile is
    # zero on the face border and maximal at its center.
    def bulge(u, v):
        pu = 1.0 - (u / half) ** 2
        pv = 1.0 - (v / half) ** 2
        return d * np.clip(pu, 0.0, None) * np.clip(pv, 0.0, None)

    in_cube_tgt = (
        (np.abs(x) <= half - bulge(y, z))
        & (np.abs(y) <= half - bulge(x, z))
        & (np.abs(z) <= half - bulge(x, y))
    )

    rr = x**2 + y**2 + z**2
    in_sphere_src = rr <= r0**2
    in_sphere_tgt = rr <= r1**2

    src = np.zeros(dims)
    src[in_cube_src] = config.cube_intensity
    src[in_sphere_src] = config.sphere_intensity
    tgt = np.zeros(dims)
    tgt[in_cube_tgt] = config.cube_intensity
    tgt[in_sphere_tgt] = config.sphere_intensity

    spacing = np.asarray(config.spacing, dtype=np.float64)
    source = ImageVolume(src, spacing)
    target = ImageVolume(tgt, spacing)

    dirs = _fibonacci_sphere(int(config.n_guidance))
    src_pts = (center[None, :] + r0 * dirs) * spacing[None, :]
    tgt_pts = (center[None, :] + r1 * dirs) * spacing[None, :]
    guidance = GuidanceSet([(src_pts, tgt_pts)], label="sphere-surface")

    return RegistrationProblem(
        source=source,
        target=target,
        guidance=guidance,
        source_mask=in_sphere_src,
        target_mask=in_sphere_tgt,
    )


# ---------------------------------------------------------------------------
# Metrics and guidance file I/O
# ---------------------------------------------------------------------------


def dice(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """Dice overlap 2|A n B| / (|A| + |B|); 1.0 when both masks are empty."""
    a = np.asarray(mask_a, dtype=bool)
    b = np.asarray(mask_b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("mask dims mismatch")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def save_guidance(guidance: GuidanceSet, path) -> None:
    """Write guidance as `<correspondence-id> <S|T> <x> <y> <z>` lines (mm)."""
    with open(os.fspath(path), "w") as f:
        for cid, (src, tgt) in enumerate(guidance.correspondences):
            for p in src:
                f.write(f"{cid} S {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
            for p in tgt:
                f.write(f"{cid} T {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


def load_guidance(path, label: str = "") -> GuidanceSet:
    """Read the plain-text guidance format written by :func:`save_guidance`."""
    sides: dict[int, tuple[list, list]] = {}
    with open(os.fspath(path)) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 5 or parts[1] not in ("S", "T"):
                raise ValueError(f"{path}:{lineno}: malformed guidance line")
            cid = int(parts[0])
            point = [float(v) for v in parts[2:]]
            sides.setdefault(cid, ([], []))[0 if parts[1] == "S" else 1].append(point)
    corr = [
        (np.array(src), np.array(tgt))
        for cid, (src, tgt) in sorted(sides.items())
    ]
    return GuidanceSet(corr, label=label)
