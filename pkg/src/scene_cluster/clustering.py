"""Distance fusion and the clusterers.

The proposed route builds one Euclidean distance matrix from the local
descriptors and one from the global descriptors, blends them with a single
weight (``D = alpha * L + (1 - alpha) * G``), and hands the negated result
to affinity propagation as similarities.  Density/mode baselines run on
raw downscaled-pixel features by default.

Everything here is deterministic: no random restarts, no similarity jitter,
ties broken by the lowest index.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels

DEFAULT_ALPHA = 0.44

METHODS = ("proposed", "ap", "dbscan", "meanshift", "optics")


@dataclass(frozen=True)
class APConfig:
    """Affinity-propagation settings.

    ``preference`` is the shared self-similarity: the string ``"median"``
    (median off-diagonal similarity, the default) or an explicit number.
    """

    damping: float = 0.5
    max_iterations: int = 500
    convergence_window: int = 50
    preference: float | str = "median"

    def __post_init__(self):
        if not 0.5 <= self.damping < 1.0:
            raise ValueError(f"damping must lie in [0.5, 1), got {self.damping}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be >= 1")
        if isinstance(self.preference, str) and self.preference != "median":
            raise ValueError(f"preference must be 'median' or a number")


@dataclass
class Clustering:
    """One partition: compact 0-based labels, noise as -1 (density methods
    only), optional exemplar indices, and whether iteration converged."""

    labels: np.ndarray
    exemplars: list[int] | None = None
    converged: bool = True

    @property
    def n_clusters(self) -> int:
        return int(np.unique(self.labels[self.labels >= 0]).size)


@dataclass(frozen=True)
class BaselineConfig:
    """Baseline clusterer settings; None means the data-driven default."""

    dbscan_eps: float | None = None
    dbscan_min_pts: int = 4
    meanshift_bandwidth: float | None = None
    optics_min_samples: int = 4
    optics_xi: float = 0.05


@dataclass
class ParticipantFeatures:
    """Per-participant descriptor bundle, rows aligned with image_ids."""

    image_ids: list[str]
    g: np.ndarray
    l: np.ndarray
    baseline: np.ndarray | None = None


def pairwise_distances(vectors) -> np.ndarray:
    """Euclidean distance matrix, float64.

    Computed from explicit differences (not the Gram expansion), so the
    result is exactly symmetric with an exactly zero diagonal.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (n, d) vectors, got shape {x.shape}")
    n, d = x.shape
    out = np.empty((n, n))
    step = max(1, (1 << 22) // max(1, n * d))
    for s in range(0, n, step):
        e = min(n, s + step)
        diff = x[s:e, None, :] - x[None, :, :]
        out[s:e] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def check_distance_matrix(dist: np.ndarray) -> np.ndarray:
    """Validate a distance matrix: square, finite, symmetric, zero diagonal."""
    d = np.asarray(dist, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"distance matrix must be square, got {d.shape}")
    if not np.isfinite(d).all():
        raise ValueError("distance matrix contains NaN or Inf")
    if d.size and (d < 0).any():
        raise ValueError("distance matrix has negative entries")
    if d.size and np.abs(d - d.T).max() > 1e-8:
        raise ValueError("distance matrix is not symmetric")
    if d.size and np.abs(np.diagonal(d)).max() > 1e-12:
        raise ValueError("distance matrix diagonal is not zero")
    return d


def fuse(local_d: np.ndarray, global_d: np.ndarray, alpha: float) -> np.ndarray:
    """Blend the two distance structures: ``alpha * L + (1 - alpha) * G``.

    At alpha 0 or 1 this reproduces G or L bit for bit.
    """
    a = float(alpha)
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    loc = np.asarray(local_d, dtype=np.float64)
    glo = np.asarray(global_d, dtype=np.float64)
    if loc.shape != glo.shape:
        raise ValueError(f"shape mismatch: local {loc.shape} vs global {glo.shape}")
    return a * loc + (1.0 - a) * glo


def compact_labels(labels) -> np.ndarray:
    """Renumber labels to 0..k-1 by first appearance; -1 passes through."""
    labels = np.asarray(labels)
    out = np.full(labels.shape, -1, dtype=np.int32)
    mapping: dict[int, int] = {}
    for i, raw in enumerate(labels):
        v = int(raw)
        if v == -1:
            continue
        if v not in mapping:
            mapping[v] = len(mapping)
        out[i] = mapping[v]
    return out


def _offdiagonal(m: np.ndarray) -> np.ndarray:
    return m[~np.eye(m.shape[0], dtype=bool)]


def affinity_propagation(distances, config: APConfig | None = None) -> Clustering:
    """Cluster a distance matrix by affinity propagation.

    Similarities are negated distances; the shared preference sits on the
    diagonal.  Runs damped message passing until the exemplar set holds
    still for the configured window, then assigns every item to its most
    similar exemplar (exemplars to themselves).  A run that exhausts the
    iteration budget is still assigned but flagged ``converged=False``.
    """
    cfg = config or APConfig()
    d = check_distance_matrix(distances)
    n = d.shape[0]
    if n == 0:
        raise ValueError("empty distance matrix")
    if n == 1:
        return Clustering(
            labels=np.zeros(1, np.int32), exemplars=[0], converged=True
        )
    s = -d
    if cfg.preference == "median":
        pref = float(np.median(_offdiagonal(s)))
    else:
        pref = float(cfg.preference)
    np.fill_diagonal(s, pref)
    resp, avail, _n_iter, converged = kernels.ap_messages(
        s, cfg.damping, cfg.max_iterations, cfg.convergence_window
    )
    crit = np.diagonal(avail) + np.diagonal(resp)
    exemplars = np.flatnonzero(crit > 0.0)
    if exemplars.size == 0:
        exemplars = np.array([int(np.argmax(crit))])
    labels = np.argmax(s[:, exemplars], axis=1).astype(np.int32)
    for j, k in enumerate(exemplars):
        labels[k] = j
    return Clustering(
        labels=labels,
        exemplars=[int(k) for k in exemplars],
        converged=bool(converged),
    )


def default_dbscan_eps(dist: np.ndarray, k: int = 4) -> float:
    """Median distance to the k-th nearest neighbor (self excluded)."""
    n = dist.shape[0]
    col = min(k, n - 1)
    if col < 1:
        return 0.0
    ordered = np.sort(dist, axis=1)
    return float(np.median(ordered[:, col]))


def dbscan(
    data,
    eps: float | None = None,
    min_pts: int = 4,
    precomputed: bool = False,
) -> Clustering:
    """Density clustering with index-ordered expansion.

    Neighborhoods are closed balls (``<= eps``) including the point itself.
    Seeds are visited in index order and each cluster expands breadth-first
    in index order, so the labeling is deterministic; border points go to
    the first cluster that reaches them.  ``eps=None`` uses the median
    4th-nearest-neighbor distance.
    """
    if precomputed:
        dist = check_distance_matrix(data)
    else:
        dist = pairwise_distances(data)
    n = dist.shape[0]
    if eps is None:
        eps = default_dbscan_eps(dist, k=min_pts)
    neigh = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    core = np.array([nb.size >= min_pts for nb in neigh])
    labels = np.full(n, -1, np.int32)
    cid = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cid
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for q in neigh[j]:
                if labels[q] == -1:
                    labels[q] = cid
                    if core[q]:
                        queue.append(q)
        cid += 1
    return Clustering(labels=compact_labels(labels), exemplars=None, converged=True)


def default_meanshift_bandwidth(dist: np.ndarray) -> float:
    """Median off-diagonal pairwise distance, with a floor for degenerate data."""
    if dist.shape[0] < 2:
        return 1.0
    med = float(np.median(_offdiagonal(dist)))
    return med if med > 0 else 1.0


def mean_shift(points, bandwidth: float | None = None, max_iter: int = 300) -> Clustering:
    """Flat-kernel mode seeking.

    Every point iterates to the mean of the sample points within
    ``bandwidth`` of its current position until the largest shift drops
    below ``1e-4 * bandwidth`` (or the budget runs out, flagged via
    ``converged``).  Converged positions within ``bandwidth / 2`` merge into
    one mode, scanned in index order; labels follow the merged modes.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected (n, d) points")
    n = x.shape[0]
    if bandwidth is None:
        bandwidth = default_meanshift_bandwidth(pairwise_distances(x))
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    y = x.copy()
    tol = 1e-4 * bandwidth
    converged = False
    for _ in range(max_iter):
        diff = y[:, None, :] - x[None, :, :]
        inside = np.einsum("ijk,ijk->ij", diff, diff) <= bandwidth * bandwidth
        counts = inside.sum(axis=1)
        y_new = np.where(
            counts[:, None] > 0, (inside @ x) / np.maximum(counts, 1)[:, None], y
        )
        shift = np.sqrt(((y_new - y) ** 2).sum(axis=1)).max() if n else 0.0
        y = y_new
        if shift < tol:
            converged = True
            break
    modes: list[np.ndarray] = []
    mode_id = np.empty(n, np.int32)
    half = bandwidth / 2.0
    for i in range(n):
        assigned = -1
        for mi, m in enumerate(modes):
            if np.sqrt(((y[i] - m) ** 2).sum()) <= half:
                assigned = mi
                break
        if assigned < 0:
            modes.append(y[i])
            assigned = len(modes) - 1
        mode_id[i] = assigned
    return Clustering(
        labels=compact_labels(mode_id), exemplars=None, converged=converged
    )


def optics(points, min_samples: int = 4, xi: float = 0.05) -> Clustering:
    """Reachability-based density clustering (scikit-learn's xi extraction).

    Inputs smaller than ``min_samples`` cannot support any cluster and come
    back as all noise rather than erroring out.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected (n, d) points")
    n = x.shape[0]
    if n < min_samples:
        return Clustering(labels=np.full(n, -1, np.int32), exemplars=None)
    from sklearn.cluster import OPTICS

    fitted = OPTICS(min_samples=min_samples, xi=xi).fit(x)
    return Clustering(labels=compact_labels(fitted.labels_), exemplars=None)


def cluster_participant(
    features: ParticipantFeatures,
    method: str,
    alpha: float = DEFAULT_ALPHA,
    ap_config: APConfig | None = None,
    baseline_config: BaselineConfig | None = None,
    baseline_source: str = "pixels",
) -> Clustering:
    """Cluster one participant's images with the chosen method.

    ``proposed`` fuses local/global descriptor distances and runs affinity
    propagation.  The baselines (``ap``, ``dbscan``, ``meanshift``,
    ``optics``) run on the raw-pixel descriptors; ``baseline_source="fused"``
    reroutes ap/dbscan onto the fused distance matrix for ablations.
    A single image is a trivial singleton cluster.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    n = len(features.image_ids)
    if n == 0:
        raise ValueError("participant has no images")
    if n == 1:
        return Clustering(
            labels=np.zeros(1, np.int32),
            exemplars=[0] if method in ("proposed", "ap") else None,
            converged=True,
        )
    bcfg = baseline_config or BaselineConfig()
    if method == "proposed" or baseline_source == "fused":
        loc = pairwise_distances(features.l)
        glo = pairwise_distances(features.g)
        fused = fuse(loc, glo, alpha)
    if method == "proposed":
        return affinity_propagation(fused, ap_config)
    if baseline_source == "fused":
        if method == "ap":
            return affinity_propagation(fused, ap_config)
        if method == "dbscan":
            return dbscan(
                fused, eps=bcfg.dbscan_eps, min_pts=bcfg.dbscan_min_pts,
                precomputed=True,
            )
        raise ValueError(f"baseline_source='fused' not supported for {method!r}")
    if baseline_source != "pixels":
        raise ValueError(f"unknown baseline_source {baseline_source!r}")
    if features.baseline is None:
        raise ValueError("baseline features missing; extract them first")
    pixels = features.baseline
    if method == "ap":
        return affinity_propagation(pairwise_distances(pixels), ap_config)
    if method == "dbscan":
        return dbscan(pixels, eps=bcfg.dbscan_eps, min_pts=bcfg.dbscan_min_pts)
    if method == "meanshift":
        return mean_shift(pixels, bandwidth=bcfg.meanshift_bandwidth)
    return optics(pixels, min_samples=bcfg.optics_min_samples, xi=bcfg.optics_xi)
