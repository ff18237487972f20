"""Point-cloud distances and set-level generation metrics.

Chamfer distance follows the squared-Euclidean, mean-aggregated, symmetric
convention of the point-cloud generation literature; EMD is solved exactly by
optimal assignment. Set metrics: MMD (mean over test shapes of the nearest
generated distance), COV (fraction of test shapes that are the nearest test
neighbor of some generated shape; an NN-over-union variant is available),
and leave-one-out 1-NN two-sample accuracy (ideal 50%).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .meshing import PointCloud

__all__ = [
    "MetricsReport",
    "chamfer",
    "emd",
    "pairwise_distance_matrix",
    "mmd",
    "coverage",
    "one_nna",
    "novelty_nn",
    "evaluate_sets",
]


def _points(x) -> np.ndarray:
    if isinstance(x, PointCloud):
        return x.points
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


def chamfer(X, Y) -> float:
    """Symmetric mean squared nearest-neighbor distance between two clouds."""
    X, Y = _points(X), _points(Y)
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("chamfer distance needs nonempty clouds")
    dxy = cKDTree(Y).query(X)[0]
    dyx = cKDTree(X).query(Y)[0]
    return float(np.mean(dxy**2) + np.mean(dyx**2))


def emd(X, Y) -> float:
    """Exact earth mover's distance: mean transport cost of the optimal
    bijection between equal-size clouds.
    """
    X, Y = _points(X), _points(Y)
    if len(X) != len(Y):
        raise ValueError(f"EMD requires equal sizes, got {len(X)} and {len(Y)}")
    if len(X) == 0:
        raise ValueError("EMD needs nonempty clouds")
    cost = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1)
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].mean())


_DISTANCES = {"cd": chamfer, "emd": emd}


def pairwise_distance_matrix(Sg, St, metric: str = "cd") -> np.ndarray:
    """(|Sg|, |St|) matrix of shape distances."""
    fn = _DISTANCES[metric]
    M = np.empty((len(Sg), len(St)))
    for i, X in enumerate(Sg):
        for j, Y in enumerate(St):
            M[i, j] = fn(X, Y)
    return M


def mmd(Sg, St, metric: str = "cd", matrix: np.ndarray | None = None) -> float:
    """Mean over test shapes of the distance to the closest generated shape."""
    if matrix is None:
        matrix = pairwise_distance_matrix(Sg, St, metric)
    if matrix.size == 0:
        raise ValueError("empty shape sets")
    return float(matrix.min(axis=0).mean())


def coverage(Sg, St, metric: str = "cd", matrix: np.ndarray | None = None,
             over_union: bool = False) -> float:
    """Percentage of test shapes that are the nearest neighbor of at least one
    generated shape. NN is taken over the test set by default; ``over_union``
    switches to NN over the union of both sets (generated shapes whose nearest
    union neighbor is another generated shape then cover nothing).
    """
    if matrix is None:
        matrix = pairwise_distance_matrix(Sg, St, metric)
    ng, nt = matrix.shape
    covered = set()
    if over_union:
        gg = pairwise_distance_matrix(Sg, Sg, metric)
        np.fill_diagonal(gg, np.inf)
        for i in range(ng):
            jt = int(np.argmin(matrix[i]))
            if matrix[i, jt] <= gg[i].min():
                covered.add(jt)
    else:
        for i in range(ng):
            covered.add(int(np.argmin(matrix[i])))
    return 100.0 * len(covered) / nt


def one_nna(Sg, St, metric: str = "cd", matrix: np.ndarray | None = None,
            gg: np.ndarray | None = None, tt: np.ndarray | None = None) -> float:
    """Leave-one-out 1-NN two-sample classification accuracy over the union.

    Ties in nearest-neighbor queries are broken by lowest index with
    generated samples ordered before test samples.
    """
    if matrix is None:
        matrix = pairwise_distance_matrix(Sg, St, metric)
    ng, nt = matrix.shape
    if ng + nt < 2:
        raise ValueError("1-NNA needs at least two shapes in the union")
    if gg is None:
        gg = pairwise_distance_matrix(Sg, Sg, metric)
    if tt is None:
        tt = pairwise_distance_matrix(St, St, metric)
    full = np.block([[gg, matrix], [matrix.T, tt]])
    np.fill_diagonal(full, np.inf)
    nn = np.argmin(full, axis=1)
    same = (nn < ng) == (np.arange(ng + nt) < ng)
    return 100.0 * float(np.mean(same))


def novelty_nn(z: np.ndarray, table: np.ndarray, k: int = 1):
    """Top-k latent-table entries by cosine similarity, descending.

    Zero-norm table entries are skipped. Returns a list of (index, similarity).
    """
    z = np.asarray(z, dtype=np.float64)
    table = np.asarray(table, dtype=np.float64)
    nz = np.linalg.norm(z)
    if table.shape[0] == 0:
        raise ValueError("empty latent table")
    if nz == 0:
        raise ValueError("query latent has zero norm")
    norms = np.linalg.norm(table, axis=1)
    valid = norms > 0
    if not np.all(valid):
        import warnings

        warnings.warn(f"skipping {int((~valid).sum())} zero-norm table entries")
    sims = np.full(table.shape[0], -np.inf)
    sims[valid] = table[valid] @ z / (norms[valid] * nz)
    order = np.argsort(-sims, kind="stable")[:k]
    return [(int(i), float(sims[i])) for i in order if np.isfinite(sims[i])]


@dataclass
class MetricsReport:
    mmd_cd: float
    mmd_emd: float
    cov_cd: float
    cov_emd: float
    nna_cd: float
    nna_emd: float
    n_generated: int = 0
    n_reference: int = 0
    points_per_cloud: int = 0
    distance_matrices: dict = field(default_factory=dict, repr=False)

    def to_dict(self, scaled: bool = True) -> dict:
        """JSON payload; MMD(CD) reported x1e3 and MMD(EMD) x1e2 when scaled."""
        return {
            "mmd_cd": self.mmd_cd * (1e3 if scaled else 1.0),
            "mmd_emd": self.mmd_emd * (1e2 if scaled else 1.0),
            "mmd_scale": {"cd": 1e3 if scaled else 1.0, "emd": 1e2 if scaled else 1.0},
            "cov_cd": self.cov_cd,
            "cov_emd": self.cov_emd,
            "nna_cd": self.nna_cd,
            "nna_emd": self.nna_emd,
            "n_generated": self.n_generated,
            "n_reference": self.n_reference,
            "points_per_cloud": self.points_per_cloud,
        }


def evaluate_sets(Sg, St) -> MetricsReport:
    """Full protocol: MMD/COV/1-NNA under both CD and EMD."""
    if not Sg or not St:
        raise ValueError("empty shape sets")
    sizes = {len(_points(c)) for c in list(Sg) + list(St)}
    if len(sizes) != 1:
        raise ValueError(f"all clouds must have identical cardinality, got {sizes}")
    out = {}
    mats = {}
    for m in ("cd", "emd"):
        gt = pairwise_distance_matrix(Sg, St, m)
        gg = pairwise_distance_matrix(Sg, Sg, m)
        tt = pairwise_distance_matrix(St, St, m)
        mats[m] = gt
        out[f"mmd_{m}"] = mmd(Sg, St, m, matrix=gt)
        out[f"cov_{m}"] = coverage(Sg, St, m, matrix=gt)
        out[f"nna_{m}"] = one_nna(Sg, St, m, matrix=gt, gg=gg, tt=tt)
    return MetricsReport(
        mmd_cd=out["mmd_cd"],
        mmd_emd=out["mmd_emd"],
        cov_cd=out["cov_cd"],
        cov_emd=out["cov_emd"],
        nna_cd=out["nna_cd"],
        nna_emd=out["nna_emd"],
        n_generated=len(Sg),
        n_reference=len(St),
        points_per_cloud=sizes.pop(),
        distance_matrices=mats,
    )
