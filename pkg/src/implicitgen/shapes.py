"""Ground-truth signed distance fields and training-sample generation.

Analytic primitives (sphere, box, torus, capsule, cylinder) with optional
union composition provide exact desk-scale ground truth; watertight triangle
meshes are supported through closest-triangle distance signed by the
generalized winding number. The sample bank reproduces the DeepSDF-style
point distribution: 5% uniform in a padded bounding box, the rest surface
points perturbed with two Gaussian noise levels.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ShapeSpec",
    "SdfSample",
    "SampleBank",
    "analytic_sdf",
    "mesh_sdf",
    "winding_number",
    "sample_bank",
    "balanced_batch",
    "save_bank",
    "load_bank",
    "load_obj",
    "icosphere",
    "box_mesh",
    "procedural_family",
    "BOUNDS_MIN",
    "BOUNDS_MAX",
]

# uniform samples cover a slightly padded box around the unit ball
BOUNDS_MIN = -1.05
BOUNDS_MAX = 1.05

TAG_UNIFORM = 0
TAG_SURFACE_HI = 1  # variance 2.5e-3
TAG_SURFACE_LO = 2  # variance 2.5e-4

VAR_HI = 2.5e-3
VAR_LO = 2.5e-4
UNIFORM_FRACTION = 0.05

PRIMITIVES = ("sphere", "box", "torus", "capsule", "cylinder")


@dataclass(frozen=True)
class ShapeSpec:
    """One analytic primitive or a union of them, with a rigid pose.

    Parameter meaning per kind:
      sphere:   params = (radius,)
      box:      params = (hx, hy, hz) half-extents
      torus:    params = (major_radius, minor_radius)
      capsule:  params = (half_height, radius), axis z
      cylinder: params = (half_height, radius), axis z
    """

    kind: str
    params: tuple
    rotation: tuple = (0.0, 0.0, 0.0)  # XYZ Euler, radians
    translation: tuple = (0.0, 0.0, 0.0)
    members: tuple = ()  # non-empty only for kind == "union"

    def __post_init__(self):
        if self.kind == "union":
            if not self.members:
                raise ValueError("union requires at least one member")
            return
        if self.kind not in PRIMITIVES:
            raise ValueError(f"unknown primitive {self.kind!r}")
        if any(p <= 0 for p in self.params):
            raise ValueError("shape parameters must be strictly positive")

    def rotation_matrix(self) -> np.ndarray:
        rx, ry, rz = self.rotation
        cx, sx = np.cos(rx), np.sin(rx)
        cy, sy = np.cos(ry), np.sin(ry)
        cz, sz = np.cos(rz), np.sin(rz)
        Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
        Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
        return Rz @ Ry @ Rx

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "params": list(self.params),
            "rotation": list(self.rotation),
            "translation": list(self.translation),
        }
        if self.members:
            d["members"] = [m.to_dict() for m in self.members]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeSpec":
        return cls(
            kind=d["kind"],
            params=tuple(d.get("params", ())),
            rotation=tuple(d.get("rotation", (0.0, 0.0, 0.0))),
            translation=tuple(d.get("translation", (0.0, 0.0, 0.0))),
            members=tuple(cls.from_dict(m) for m in d.get("members", ())),
        )


@dataclass(frozen=True)
class SdfSample:
    p: tuple
    d: float


@dataclass
class SampleBank:
    """Immutable-after-construction store of (point, distance, tag) rows."""

    points: np.ndarray  # (N, 3) f32
    distances: np.ndarray  # (N,) f32
    tags: np.ndarray  # (N,) u8
    shape_id: str = ""

    def __len__(self):
        return self.points.shape[0]


def _primitive_sdf(kind: str, params: tuple, q: np.ndarray) -> np.ndarray:
    """SDF of an axis-aligned, origin-centered primitive at local points q (N,3)."""
    if kind == "sphere":
        (r,) = params
        return np.linalg.norm(q, axis=-1) - r
    if kind == "box":
        h = np.asarray(params)
        a = np.abs(q) - h
        outside = np.linalg.norm(np.maximum(a, 0.0), axis=-1)
        inside = np.minimum(np.max(a, axis=-1), 0.0)
        return outside + inside
    if kind == "torus":
        R, r = params
        ring = np.sqrt(q[..., 0] ** 2 + q[..., 1] ** 2) - R
        return np.sqrt(ring**2 + q[..., 2] ** 2) - r
    if kind == "capsule":
        h, r = params
        z = np.clip(q[..., 2], -h, h)
        seg = q.copy()
        seg[..., 2] -= z
        return np.linalg.norm(seg, axis=-1) - r
    if kind == "cylinder":
        h, r = params
        dr = np.sqrt(q[..., 0] ** 2 + q[..., 1] ** 2) - r
        dz = np.abs(q[..., 2]) - h
        a = np.stack([dr, dz], axis=-1)
        outside = np.linalg.norm(np.maximum(a, 0.0), axis=-1)
        inside = np.minimum(np.max(a, axis=-1), 0.0)
        return outside + inside
    raise ValueError(f"unknown primitive {kind!r}")


def analytic_sdf(spec: ShapeSpec, p: np.ndarray) -> np.ndarray:
    """Signed distance of ``p`` (3,) or (N, 3) to the shape.

    Exact for primitives; unions take the member minimum, which is exact
    outside the shape and a lower bound on the (negated) depth inside.
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    if single:
        p = p[None, :]
    if spec.kind == "union":
        d = np.min([analytic_sdf(m, p) for m in spec.members], axis=0)
    else:
        R = spec.rotation_matrix()
        q = (p - np.asarray(spec.translation)) @ R  # R^T applied to each row
        d = _primitive_sdf(spec.kind, spec.params, q)
    return float(d[0]) if single else d


# ---------------------------------------------------------------------------
# mesh SDF


def load_obj(text_or_bytes) -> tuple[np.ndarray, np.ndarray]:
    """Parse an OBJ (v/f lines, 1-based indices, triangles only)."""
    if isinstance(text_or_bytes, bytes):
        text_or_bytes = text_or_bytes.decode()
    verts, faces = [], []
    for line in text_or_bytes.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) for tok in parts[1:]]
            if len(idx) != 3:
                raise ValueError("only triangle faces are supported")
            faces.append([i - 1 for i in idx])
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def nonmanifold_edges(faces: np.ndarray) -> list:
    """Edges not shared by exactly two triangles (empty for watertight meshes)."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return [tuple(edge) for edge in uniq[counts != 2]]


def winding_number(verts: np.ndarray, faces: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Generalized winding number of points ``p`` (N,3) w.r.t. the mesh.

    Sum of signed solid angles over triangles / 4 pi (van Oosterom-Strackee);
    ~1 inside a watertight mesh, ~0 outside.
    """
    p = np.atleast_2d(p)
    total = np.zeros(p.shape[0])
    tri = verts[faces]  # (F, 3, 3)
    chunk = max(1, int(4e6 // max(len(faces), 1)))
    for start in range(0, p.shape[0], chunk):
        q = p[start : start + chunk]  # (M, 3)
        a = tri[None, :, 0] - q[:, None]  # (M, F, 3)
        b = tri[None, :, 1] - q[:, None]
        c = tri[None, :, 2] - q[:, None]
        la = np.linalg.norm(a, axis=-1)
        lb = np.linalg.norm(b, axis=-1)
        lc = np.linalg.norm(c, axis=-1)
        num = np.einsum("mfi,mfi->mf", a, np.cross(b, c))
        den = (
            la * lb * lc
            + np.einsum("mfi,mfi->mf", a, b) * lc
            + np.einsum("mfi,mfi->mf", b, c) * la
            + np.einsum("mfi,mfi->mf", c, a) * lb
        )
        total[start : start + chunk] = np.arctan2(num, den).sum(axis=1) / (2.0 * np.pi)
    return total


def _point_triangle_distance(tri: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Min distance from each point (M,3) to each triangle (F,3,3) -> (M,F)."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    q = p[:, None, :] - a[None]  # (M, F, 3)
    d00 = np.einsum("fi,fi->f", ab, ab)
    d01 = np.einsum("fi,fi->f", ab, ac)
    d11 = np.einsum("fi,fi->f", ac, ac)
    q0 = np.einsum("mfi,fi->mf", q, ab)
    q1 = np.einsum("mfi,fi->mf", q, ac)
    det = np.maximum(d00 * d11 - d01 * d01, 1e-300)
    # barycentric coords of the unconstrained projection
    u = (d11 * q0 - d01 * q1) / det
    v = (d00 * q1 - d01 * q0) / det
    u = np.clip(u, 0.0, 1.0)
    v = np.clip(v, 0.0, 1.0)
    s = u + v
    scale = np.ones_like(s)
    np.divide(1.0, s, out=scale, where=s > 1.0)
    u *= scale
    v *= scale
    # clamped point may still be off the closest edge; refine by projecting
    # onto each edge and taking the minimum
    proj = a[None] + u[..., None] * ab[None] + v[..., None] * ac[None]
    d_face = np.linalg.norm(p[:, None, :] - proj, axis=-1)

    def edge_dist(e0, e1):
        ev = e1 - e0
        t = np.einsum("mfi,fi->mf", p[:, None, :] - e0[None], ev)
        t = np.clip(t / np.maximum(np.einsum("fi,fi->f", ev, ev), 1e-300), 0.0, 1.0)
        pt = e0[None] + t[..., None] * ev[None]
        return np.linalg.norm(p[:, None, :] - pt, axis=-1)

    d = np.minimum(d_face, edge_dist(a, b))
    d = np.minimum(d, edge_dist(b, c))
    d = np.minimum(d, edge_dist(a, c))
    return d


def mesh_sdf(verts: np.ndarray, faces: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Signed distance to a watertight mesh: closest-triangle distance with the
    sign taken from the generalized winding number (> 0.5 means inside).
    """
    bad = nonmanifold_edges(faces)
    if bad:
        raise ValueError(f"mesh is not watertight; offending edges: {bad[:10]}")
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    if single:
        p = p[None, :]
    tri = verts[faces]
    dist = np.empty(p.shape[0])
    chunk = max(1, int(4e6 // max(len(faces), 1)))
    for start in range(0, p.shape[0], chunk):
        dist[start : start + chunk] = _point_triangle_distance(
            tri, p[start : start + chunk]
        ).min(axis=1)
    inside = winding_number(verts, faces, p) > 0.5
    d = np.where(inside, -dist, dist)
    return float(d[0]) if single else d


# ---------------------------------------------------------------------------
# reference meshes (used by tests and the mesh-ingestion path)


def icosphere(radius: float = 0.5, subdivisions: int = 3) -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    for _ in range(subdivisions):
        cache = {}
        new_faces = []
        verts_list = list(verts)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts_list[i] + verts_list[j]
                m /= np.linalg.norm(m)
                cache[key] = len(verts_list)
                verts_list.append(m)
            return cache[key]

        for f in faces:
            a, b, c = f
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.asarray(verts_list)
        faces = np.asarray(new_faces, dtype=np.int64)
    return verts * radius, faces


def box_mesh(hx: float, hy: float, hz: float) -> tuple[np.ndarray, np.ndarray]:
    v = np.array(
        [[sx, sy, sz] for sx in (-hx, hx) for sy in (-hy, hy) for sz in (-hz, hz)]
    )
    # 12 triangles, outward-facing
    f = np.array(
        [
            [0, 1, 3], [0, 3, 2],  # -x
            [4, 6, 7], [4, 7, 5],  # +x
            [0, 4, 5], [0, 5, 1],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [0, 2, 6], [0, 6, 4],  # -z
            [1, 5, 7], [1, 7, 3],  # +z
        ],
        dtype=np.int64,
    )
    return v, f


# ---------------------------------------------------------------------------
# sample generation


def _project_to_surface(spec: ShapeSpec, p: np.ndarray, steps: int = 20) -> np.ndarray:
    """Sphere-trace points onto the zero level set of the analytic SDF."""
    q = p.copy()
    for _ in range(steps):
        d = analytic_sdf(spec, q)
        g = _sdf_gradient(spec, q)
        q = q - d[:, None] * g
    return q


def _sdf_gradient(spec: ShapeSpec, p: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.empty_like(p)
    for i in range(3):
        dp = np.zeros(3)
        dp[i] = h
        g[:, i] = (analytic_sdf(spec, p + dp) - analytic_sdf(spec, p - dp)) / (2 * h)
    n = np.linalg.norm(g, axis=1, keepdims=True)
    return g / np.maximum(n, 1e-12)


def sample_bank(
    spec: ShapeSpec,
    n: int,
    rng: np.random.Generator,
    shape_id: str = "",
) -> SampleBank:
    """Precompute ``n`` SDF samples: 5% uniform in the padded bounding box,
    the rest surface points perturbed with two isotropic noise variances.
    """
    if n < 100:
        raise ValueError("need at least 100 samples")
    n_uniform = int(round(n * UNIFORM_FRACTION))
    n_surface = n - n_uniform
    n_hi = n_surface // 2
    n_lo = n_surface - n_hi

    uni = rng.uniform(BOUNDS_MIN, BOUNDS_MAX, size=(n_uniform, 3))

    # surface seed points: uniform directions on the bounding sphere, traced
    # onto the zero level set, with failed projections rejected
    seeds_needed = n_surface
    surf = np.empty((0, 3))
    while surf.shape[0] < seeds_needed:
        m = max(256, 2 * (seeds_needed - surf.shape[0]))
        dirs = rng.normal(size=(m, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        cand = _project_to_surface(spec, dirs)
        ok = np.abs(analytic_sdf(spec, cand)) < 1e-5
        surf = np.concatenate([surf, cand[ok]])
    if surf.shape[0] == 0:
        raise ValueError("degenerate shape: surface projection failed everywhere")
    surf = surf[:seeds_needed]

    hi = surf[:n_hi] + rng.normal(scale=np.sqrt(VAR_HI), size=(n_hi, 3))
    lo = surf[n_hi:] + rng.normal(scale=np.sqrt(VAR_LO), size=(n_lo, 3))

    points = np.concatenate([uni, hi, lo])
    tags = np.concatenate(
        [
            np.full(n_uniform, TAG_UNIFORM, dtype=np.uint8),
            np.full(n_hi, TAG_SURFACE_HI, dtype=np.uint8),
            np.full(n_lo, TAG_SURFACE_LO, dtype=np.uint8),
        ]
    )
    dists = analytic_sdf(spec, points)
    return SampleBank(
        points=points.astype(np.float32),
        distances=np.asarray(dists, dtype=np.float32),
        tags=tags,
        shape_id=shape_id,
    )


def balanced_batch(bank: SampleBank, k: int, rng: np.random.Generator):
    """Draw ``k`` samples with balanced SDF signs, without replacement.

    Returns (points (k,3), distances (k,), imbalance_flag). When one sign is
    scarce the batch takes all of it and fills with the other, setting the flag.
    """
    if len(bank) == 0:
        raise ValueError("empty sample bank")
    pos_idx = np.flatnonzero(bank.distances >= 0)
    neg_idx = np.flatnonzero(bank.distances < 0)
    k = min(k, len(bank))
    want_pos = k // 2 + (k % 2)
    want_neg = k // 2
    n_pos = min(want_pos, len(pos_idx))
    n_neg = min(want_neg, len(neg_idx))
    imbalanced = (n_pos < want_pos) or (n_neg < want_neg)
    # backfill from the more plentiful sign
    short = k - n_pos - n_neg
    if short > 0:
        if len(pos_idx) - n_pos >= short:
            n_pos += short
        else:
            n_neg += min(short, len(neg_idx) - n_neg)
    sel_pos = rng.choice(pos_idx, size=n_pos, replace=False) if n_pos else np.empty(0, int)
    sel_neg = rng.choice(neg_idx, size=n_neg, replace=False) if n_neg else np.empty(0, int)
    sel = np.concatenate([sel_pos, sel_neg]).astype(int)
    return bank.points[sel], bank.distances[sel], imbalanced


# ---------------------------------------------------------------------------
# bank persistence: magic, version, shape id, tag bytes, f32 (x, y, z, d) rows

BANK_MAGIC = b"3DLDM-SDF"
BANK_VERSION = 1


def save_bank(bank: SampleBank, path) -> None:
    sid = bank.shape_id.encode()
    n = len(bank)
    buf = io.BytesIO()
    buf.write(BANK_MAGIC)
    buf.write(struct.pack("<II", BANK_VERSION, len(sid)))
    buf.write(sid)
    buf.write(struct.pack("<Q", n))
    buf.write(bank.tags.tobytes())
    rows = np.concatenate(
        [bank.points.astype("<f4"), bank.distances.astype("<f4")[:, None]], axis=1
    )
    buf.write(rows.tobytes())
    payload = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_bank(path) -> SampleBank:
    with open(path, "rb") as fh:
        data = fh.read()
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise ValueError("sample bank checksum mismatch")
    if payload[:9] != BANK_MAGIC:
        raise ValueError("not a sample bank file")
    version, sid_len = struct.unpack("<II", payload[9:17])
    if version != BANK_VERSION:
        raise ValueError(f"unsupported sample bank version {version}")
    off = 17
    sid = payload[off : off + sid_len].decode()
    off += sid_len
    (n,) = struct.unpack("<Q", payload[off : off + 8])
    off += 8
    tags = np.frombuffer(payload, dtype=np.uint8, count=n, offset=off).copy()
    off += n
    rows = np.frombuffer(payload, dtype="<f4", count=4 * n, offset=off).reshape(n, 4)
    return SampleBank(
        points=rows[:, :3].copy(), distances=rows[:, 3].copy(), tags=tags, shape_id=sid
    )


# ---------------------------------------------------------------------------
# procedural dataset


def procedural_family(n: int, rng: np.random.Generator):
    """Mixed family of unit-ball shapes with a descriptor per shape.

    The descriptor (one-hot kind + normalized parameters) doubles as the
    ground-truth condition vector for conditional training. Returns a list of
    (ShapeSpec, descriptor) pairs.
    """
    out = []
    kinds = ("sphere", "box", "torus")
    for i in range(n):
        kind = kinds[i % len(kinds)]
        u = rng.uniform(0.0, 1.0, size=3)
        # One size parameter per kind: n draws then cover each sub-family
        # densely enough that a generative model trained on a small table can
        # plausibly match fresh draws from the same distribution.
        if kind == "sphere":
            spec = ShapeSpec("sphere", (0.2 + 0.4 * u[0],))
        elif kind == "box":
            s = 0.18 + 0.27 * u[0]
            spec = ShapeSpec("box", (s, s, s))
        else:
            R = 0.3 + 0.3 * u[0]
            spec = ShapeSpec("torus", (R, min(0.14, 0.95 - R)))
        onehot = [1.0 if kind == k else 0.0 for k in kinds]
        desc = np.array(onehot + list(u), dtype=np.float32)
        out.append((spec, desc))
    return out
