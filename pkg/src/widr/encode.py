"""PCA-whitening, k-means codebooks and VLAD aggregation of local descriptors."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from widr import kernels

FEATURE_MAGIC = b"WIDF"
FEATURE_VERSION = 1


@dataclass
class PcaWhitenModel:
    mean: np.ndarray
    basis: np.ndarray  # (m, D), orthonormal rows
    scales: np.ndarray  # (m,)
    eigenvalues: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def in_dim(self) -> int:
        return self.basis.shape[1]


def fit_pca_white(features, out_dim: int | None = None, ridge: float = 1e-8) -> PcaWhitenModel:
    """Fit PCA-whitening on an (n, D) sample using the population covariance.

    Components are ordered by decreasing eigenvalue; each basis row is signed
    so its largest-magnitude entry is positive. Scales are
    ``1 / sqrt(eigenvalue + ridge)``, eigenvalues clipped at zero first.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D array")
    n, d = x.shape
    m = min(256, d) if out_dim is None else int(out_dim)
    if not 1 <= m <= d:
        raise ValueError(f"out_dim {m} must lie in [1, {d}]")
    if n < m:
        raise ValueError(f"need at least {m} samples for {m} components, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite values")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:m]
    evals = np.clip(evals[order], 0.0, None)
    basis = evecs[:, order].T.copy()
    lead = basis[np.arange(m), np.argmax(np.abs(basis), axis=1)]
    basis *= np.where(lead < 0, -1.0, 1.0)[:, None]
    scales = 1.0 / np.sqrt(evals + ridge)
    if not np.all(np.isfinite(scales)) or np.any(scales <= 0):
        raise ValueError("degenerate spectrum: use a positive ridge")
    return PcaWhitenModel(mean, basis, scales, evals)


def apply_pca_white(model: PcaWhitenModel, features) -> np.ndarray:
    """``scales * (basis @ (f - mean))`` for one vector or each row of a matrix."""
    f = np.asarray(features, dtype=np.float64)
    if f.shape[-1] != model.in_dim:
        raise ValueError(f"feature length {f.shape[-1]} != {model.in_dim}")
    return ((f - model.mean) @ model.basis.T) * model.scales


@dataclass
class Codebook:
    centroids: np.ndarray  # (k, m)
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = kernels.assign_nearest(x, x[chosen])[1]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, kernels.assign_nearest(x, x[[idx]])[1])
    return x[chosen].copy()


def kmeans_fit(features, k: int, seed: int = 0, max_iters: int = 100, tol: float = 1e-6) -> Codebook:
    """k-means++ seeding followed by Lloyd iterations.

    Stops when no centroid moves by ``tol`` or more, or after ``max_iters``.
    An empty cluster is reseeded at the point farthest from its centroid.
    ``inertia_history`` records the objective after each assignment step.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if k < 1 or n < k:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        labels, d2 = kernels.assign_nearest(x, centroids)
        history.append(float(d2.sum()))
        counts = np.bincount(labels, minlength=k)
        new = np.zeros_like(centroids)
        np.add.at(new, labels, x)
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        if not nonempty.all():
            taken = set()
            far = np.argsort(-d2, kind="stable")
            for j in np.flatnonzero(~nonempty):
                pick = next(int(i) for i in far if int(i) not in taken)
                taken.add(pick)
                new[j] = x[pick]
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < tol:
            break
    return Codebook(centroids, history, it)


def kmeans_objective(features, centroids) -> float:
    return float(kernels.assign_nearest(np.asarray(features, dtype=np.float64), centroids)[1].sum())


def vlad_encode(codebook: Codebook | np.ndarray, features, l2_normalize: bool = False) -> np.ndarray:
    """Sum residuals to the nearest centroid per cluster and concatenate (length k*m)."""
    c = codebook.centroids if isinstance(codebook, Codebook) else np.asarray(codebook, dtype=np.float64)
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("vlad_encode needs a non-empty (S, m) feature set")
    if x.shape[1] != c.shape[1]:
        raise ValueError(f"feature dim {x.shape[1]} != codebook dim {c.shape[1]}")
    labels, _ = kernels.assign_nearest(x, c)
    v = kernels.vlad_accumulate(x, c, labels).ravel()
    if l2_normalize:
        norm = np.linalg.norm(v)
        if norm > 0:
            v = v / norm
    return v


# ---- feature file I/O -------------------------------------------------------

def write_features(path: str | Path, rows) -> None:
    """``WIDF`` + version byte, u32 count, u32 dim, then f32 row-major values."""
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None]
    if arr.ndim != 2:
        raise ValueError("feature rows must form a 2-D array")
    header = FEATURE_MAGIC + bytes([FEATURE_VERSION]) + struct.pack("<II", *arr.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_features(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"feature file not found: {path}")
    data = path.read_bytes()
    if data[:4] != FEATURE_MAGIC or len(data) < 13:
        raise ValueError(f"{path}: not a WIDF feature file")
    if data[4] != FEATURE_VERSION:
        raise ValueError(f"{path}: unsupported version {data[4]}")
    count, dim = struct.unpack_from("<II", data, 5)
    if len(data) != 13 + 4 * count * dim:
        raise ValueError(f"{path}: truncated or oversized payload")
    return np.frombuffer(data, dtype="<f4", offset=13).astype(np.float64).reshape(count, dim)
