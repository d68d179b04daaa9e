"""Partition agreement metrics, per-participant scoring, and the
fusion-weight/layer sweep.

Both metrics treat label values as opaque ids.  Predicted noise (-1) would
otherwise read as one shared cluster, so each noise item becomes its own
singleton before scoring; truth labels must be complete.
"""

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .clustering import (
    APConfig,
    Clustering,
    ParticipantFeatures,
    affinity_propagation,
    fuse,
    pairwise_distances,
)
from .model import Dataset


def _encode(seq) -> np.ndarray:
    """Map arbitrary hashable labels to dense ints by first appearance."""
    mapping: dict = {}
    out = np.empty(len(seq), np.int64)
    for i, v in enumerate(seq):
        if isinstance(v, (int, np.integer)) and int(v) == -1:
            out[i] = -1
            continue
        key = v
        if key not in mapping:
            mapping[key] = len(mapping)
        out[i] = mapping[key]
    return out


def _noise_to_singletons(labels: np.ndarray) -> np.ndarray:
    labels = labels.copy()
    noise = labels == -1
    if noise.any():
        nxt = labels.max() + 1 if (labels >= 0).any() else 0
        fresh = np.arange(nxt, nxt + noise.sum())
        labels[noise] = fresh
    return labels


def _prepare_pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = _encode(list(pred))
    t = _encode(list(truth))
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {t.size} truths")
    if p.size == 0:
        raise ValueError("empty partitions")
    if (t == -1).any():
        raise ValueError("truth labels must not contain -1")
    return _noise_to_singletons(p), t


def _contingency(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    pu, pi = np.unique(p, return_inverse=True)
    tu, ti = np.unique(t, return_inverse=True)
    table = np.zeros((pu.size, tu.size), np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def _comb2(x):
    return x * (x - 1) / 2.0


def adjusted_rand_index(pred, truth) -> float:
    """Chance-corrected pair-counting agreement in [-1, 1].

    Identical partitions (up to renaming) score 1.  The degenerate cases
    where the correction denominator vanishes (both all-singletons or both
    one cluster) score 1 by convention.
    """
    p, t = _prepare_pair(pred, truth)
    n = p.size
    table = _contingency(p, t)
    sum_cells = _comb2(table.astype(np.float64)).sum()
    sum_rows = _comb2(table.sum(axis=1).astype(np.float64)).sum()
    sum_cols = _comb2(table.sum(axis=0).astype(np.float64)).sum()
    total = _comb2(float(n))
    expected = sum_rows * sum_cols / total if total > 0 else 0.0
    denom = (sum_rows + sum_cols) / 2.0 - expected
    if denom == 0.0:
        return 1.0
    return float((sum_cells - expected) / denom)


def normalized_mutual_info(pred, truth) -> float:
    """Mutual information normalized by the mean entropy, natural log.

    Scores 1 when both partitions are single-cluster (zero entropy on both
    sides), 0 when the partitions are independent.
    """
    p, t = _prepare_pair(pred, truth)
    n = p.size
    table = _contingency(p, t).astype(np.float64)
    joint = table / n
    pr = joint.sum(axis=1)
    tr = joint.sum(axis=0)
    h_p = float(-(pr[pr > 0] * np.log(pr[pr > 0])).sum())
    h_t = float(-(tr[tr > 0] * np.log(tr[tr > 0])).sum())
    if h_p == 0.0 and h_t == 0.0:
        return 1.0
    nz = joint > 0
    outer = pr[:, None] * tr[None, :]
    mi = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    denom = (h_p + h_t) / 2.0
    if mi <= 0.0:
        return 0.0
    return float(min(1.0, mi / denom))


@dataclass(frozen=True)
class ParticipantScore:
    ari: float
    nmi: float
    n_images: int
    n_pred: int
    n_true: int


@dataclass
class ScoreReport:
    """Per-participant scores plus unweighted means across participants."""

    per_participant: dict[str, ParticipantScore]
    mean_ari: float
    mean_nmi: float


def score_participant(pred_labels, truth_labels) -> ParticipantScore:
    p, t = _prepare_pair(pred_labels, truth_labels)
    return ParticipantScore(
        ari=adjusted_rand_index(pred_labels, truth_labels),
        nmi=normalized_mutual_info(pred_labels, truth_labels),
        n_images=int(p.size),
        n_pred=int(np.unique(p).size),
        n_true=int(np.unique(t).size),
    )


def score_dataset(
    dataset: Dataset, clusterings: Mapping[str, Clustering]
) -> ScoreReport:
    """Score every participant against manifest truth labels.

    Participants are weighted equally in the means regardless of image
    count.  Raises when a participant has no clustering or no truth labels.
    """
    per: dict[str, ParticipantScore] = {}
    for pid in dataset.participant_ids():
        if pid not in clusterings:
            raise ValueError(f"no clustering for participant {pid!r}")
        truth = dataset.env_labels(pid)
        pred = clusterings[pid].labels
        if len(pred) != len(truth):
            raise ValueError(
                f"participant {pid!r}: {len(pred)} labels for {len(truth)} images"
            )
        per[pid] = score_participant(pred, truth)
    mean_ari = float(np.mean([s.ari for s in per.values()]))
    mean_nmi = float(np.mean([s.nmi for s in per.values()]))
    return ScoreReport(per_participant=per, mean_ari=mean_ari, mean_nmi=mean_nmi)


REPORT_HEADER = "participant_id,ari,nmi,n_images,n_pred,n_true"


def report_to_csv(report: ScoreReport) -> str:
    """Render a score report as CSV, one row per participant, stable order."""
    lines = [REPORT_HEADER]
    for pid, s in report.per_participant.items():
        lines.append(
            f"{pid},{s.ari!r},{s.nmi!r},{s.n_images},{s.n_pred},{s.n_true}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# fusion-weight / layer sweep

SWEEP_LAYERS = (2, 4, 7, 10, 13)


def default_sweep_alphas() -> list[float]:
    """The canonical fusion-weight grid: 0 to 1 in steps of 0.01."""
    return [i / 100 for i in range(101)]


@dataclass
class SweepResult:
    alphas: list[float]
    layers: list[int]
    mean_ari: np.ndarray  # (len(alphas), len(layers))
    mean_nmi: np.ndarray
    best_alpha: float
    best_layer: int


def sweep(
    dataset: Dataset,
    features_by_layer: Mapping[int, Mapping[str, ParticipantFeatures]]
    | Callable[[int], Mapping[str, ParticipantFeatures]],
    alphas=None,
    layers=SWEEP_LAYERS,
    ap_config: APConfig | None = None,
) -> SweepResult:
    """Grid-search the fusion weight and extraction layer on one dataset.

    ``features_by_layer`` maps a layer to per-participant features (a dict
    or a loader callable).  Distance matrices are computed once per
    (participant, layer) and reused across every alpha.  The best cell is
    the highest mean ARI; ties go to the smallest alpha, then the smallest
    layer.
    """
    alphas = list(default_sweep_alphas() if alphas is None else alphas)
    layers = list(layers)
    if not alphas or not layers:
        raise ValueError("sweep needs at least one alpha and one layer")
    for a in alphas:
        if not 0.0 <= float(a) <= 1.0:
            raise ValueError(f"alpha {a} outside [0, 1]")
    mean_ari = np.zeros((len(alphas), len(layers)))
    mean_nmi = np.zeros((len(alphas), len(layers)))
    for li, layer in enumerate(layers):
        feats = (
            features_by_layer(layer)
            if callable(features_by_layer)
            else features_by_layer[layer]
        )
        dists: dict[str, tuple[np.ndarray, np.ndarray] | None] = {}
        for pid in dataset.participant_ids():
            if pid not in feats:
                raise ValueError(f"layer {layer}: no features for {pid!r}")
            f = feats[pid]
            if len(f.image_ids) == 1:
                dists[pid] = None  # trivial singleton, no matrix needed
            else:
                dists[pid] = (pairwise_distances(f.l), pairwise_distances(f.g))
        for ai, a in enumerate(alphas):
            clusterings = {}
            for pid, pair in dists.items():
                if pair is None:
                    clusterings[pid] = Clustering(
                        labels=np.zeros(1, np.int32), exemplars=[0]
                    )
                else:
                    clusterings[pid] = affinity_propagation(
                        fuse(pair[0], pair[1], float(a)), ap_config
                    )
            rep = score_dataset(dataset, clusterings)
            mean_ari[ai, li] = rep.mean_ari
            mean_nmi[ai, li] = rep.mean_nmi
    best_ai, best_li = 0, 0
    for ai in range(len(alphas)):
        for li in range(len(layers)):
            if mean_ari[ai, li] > mean_ari[best_ai, best_li]:
                best_ai, best_li = ai, li
    return SweepResult(
        alphas=[float(a) for a in alphas],
        layers=[int(m) for m in layers],
        mean_ari=mean_ari,
        mean_nmi=mean_nmi,
        best_alpha=float(alphas[best_ai]),
        best_layer=int(layers[best_li]),
    )


def sweep_grid_csv(result: SweepResult, metric: str = "ari") -> str:
    """Render one sweep grid as CSV: alpha rows, one column per layer."""
    grid = result.mean_ari if metric == "ari" else result.mean_nmi
    header = "alpha," + ",".join(f"layer_{m}" for m in result.layers)
    lines = [header]
    for ai, a in enumerate(result.alphas):
        cells = ",".join(repr(float(v)) for v in grid[ai])
        lines.append(f"{a!r},{cells}")
    return "\n".join(lines) + "\n"


def save_heatmap(result: SweepResult, path) -> None:
    """Save the ARI grid as a heatmap PNG (requires matplotlib)."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise RuntimeError(
            "heatmap rendering needs matplotlib (install the 'viz' extra)"
        ) from exc
    fig, ax = plt.subplots(figsize=(6, 8))
    im = ax.imshow(
        result.mean_ari,
        aspect="auto",
        origin="lower",
        extent=(-0.5, len(result.layers) - 0.5, min(result.alphas), max(result.alphas)),
        cmap="viridis",
    )
    ax.set_xticks(range(len(result.layers)))
    ax.set_xticklabels([str(m) for m in result.layers])
    ax.set_xlabel("conv layer")
    ax.set_ylabel("fusion weight alpha")
    ax.set_title("mean adjusted Rand index")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
