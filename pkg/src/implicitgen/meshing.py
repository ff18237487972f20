"""Isosurface extraction and surface sampling.

Marching cubes (via scikit-image's table-based extractor, which welds shared
vertices and interpolates linearly along edges) turns a scalar field callable
into a triangle mesh; area-weighted barycentric sampling turns meshes into
the uniform surface point clouds the metrics operate on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage import measure

from .shapes import BOUNDS_MAX, BOUNDS_MIN, nonmanifold_edges

__all__ = [
    "TriangleMesh",
    "PointCloud",
    "marching_cubes",
    "sample_surface",
    "export_obj",
    "import_obj",
    "export_ply",
    "import_ply",
    "is_watertight",
    "DEFAULT_RESOLUTION",
]

DEFAULT_RESOLUTION = 128
DEFAULT_BOUNDS = ((BOUNDS_MIN,) * 3, (BOUNDS_MAX,) * 3)


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) f64
    triangles: np.ndarray  # (F, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def areas(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return 0.5 * np.linalg.norm(n, axis=1)


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")

    def __len__(self):
        return self.points.shape[0]


def is_watertight(mesh: TriangleMesh) -> bool:
    if mesh.is_empty:
        return False
    return not nonmanifold_edges(mesh.triangles)


def marching_cubes(field, resolution: int = DEFAULT_RESOLUTION, bounds=DEFAULT_BOUNDS,
                   iso: float = 0.0) -> TriangleMesh:
    """Extract the ``iso`` level set of ``field`` on a regular grid.

    ``field`` maps an (N, 3) array of points to N scalars. ``resolution`` is
    the number of cells per axis (so resolution+1 grid corners). A field with
    constant sign on all corners yields an empty mesh.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    n = resolution + 1
    axes = [np.linspace(lo[i], hi[i], n) for i in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    vals = np.asarray(field(pts), dtype=np.float64).reshape(n, n, n)
    if not np.all(np.isfinite(vals)):
        raise ValueError("field is non-finite on the grid")
    if vals.min() > iso or vals.max() < iso:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    spacing = tuple((hi - lo) / resolution)
    verts, faces, _, _ = measure.marching_cubes(vals, level=iso, spacing=spacing)
    verts = verts + lo
    # when the surface passes exactly through grid nodes the extractor emits
    # coincident vertices and zero-area triangles; weld the duplicates and
    # drop faces that collapse, which keeps the mesh watertight
    verts, inverse = np.unique(verts, axis=0, return_inverse=True)
    faces = inverse[faces]
    keep = (
        (faces[:, 0] != faces[:, 1])
        & (faces[:, 1] != faces[:, 2])
        & (faces[:, 0] != faces[:, 2])
    )
    return _drop_unused_vertices(TriangleMesh(verts, faces[keep]))


def _drop_unused_vertices(mesh: TriangleMesh) -> TriangleMesh:
    used = np.unique(mesh.triangles)
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(mesh.vertices[used], remap[mesh.triangles])


def sample_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> PointCloud:
    """Uniform surface samples: triangles by area, barycentric-uniform within."""
    if mesh.is_empty:
        raise ValueError("cannot sample an empty mesh")
    areas = mesh.areas()
    probs = areas / areas.sum()
    tri_idx = rng.choice(len(probs), size=n, p=probs)
    u = rng.uniform(size=(n, 1))
    v = rng.uniform(size=(n, 1))
    flip = (u + v) > 1.0
    u = np.where(flip, 1.0 - u, u)
    v = np.where(flip, 1.0 - v, v)
    t = mesh.triangles[tri_idx]
    a = mesh.vertices[t[:, 0]]
    b = mesh.vertices[t[:, 1]]
    c = mesh.vertices[t[:, 2]]
    return PointCloud(a + u * (b - a) + v * (c - a))


def export_obj(mesh: TriangleMesh) -> bytes:
    lines = [f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}" for v in mesh.vertices]
    lines += [f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}" for t in mesh.triangles]
    return ("\n".join(lines) + ("\n" if lines else "")).encode()


def import_obj(data: bytes) -> TriangleMesh:
    from .shapes import load_obj

    verts, faces = load_obj(data)
    if verts.size == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriangleMesh(verts, faces)


def export_ply(cloud: PointCloud) -> bytes:
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    body = [f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}" for p in cloud.points]
    return ("\n".join(header + body) + "\n").encode()


def import_ply(data: bytes) -> PointCloud:
    lines = data.decode().splitlines()
    try:
        end = lines.index("end_header")
    except ValueError:
        raise ValueError("missing PLY header") from None
    pts = [[float(x) for x in ln.split()[:3]] for ln in lines[end + 1 :] if ln.strip()]
    return PointCloud(np.asarray(pts).reshape(-1, 3))
