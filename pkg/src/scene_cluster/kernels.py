"""Hot numeric kernels, each built twice: numba ``@njit`` and pure numpy.

:mod:`scene_cluster._accel` picks the backend at import time (env var
``SCENE_CLUSTER_NUMBA``).  The two builds of every kernel follow the same
operation order so results agree across backends; the corner scorer even
accumulates in the same element order, which keeps its output bit-identical.

Kernels
-------
* segment-test corner scores on a 16-pixel Bresenham ring (contiguous arc
  of at least 9 brighter/darker pixels), with 3x3 non-maximum suppression
* 8-connected component labeling of binary masks
* affinity-propagation message passing (responsibilities/availabilities
  with damping and a stable-exemplar-set stop rule)
"""

import numpy as np

from ._accel import USE_NUMBA

if USE_NUMBA:
    from numba import njit

# Ring of radius 3 around the candidate pixel, clockwise from 12 o'clock.
CIRCLE_DY = np.array(
    [-3, -3, -2, -1, 0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3], dtype=np.int64
)
CIRCLE_DX = np.array(
    [0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3, -3, -3, -2, -1], dtype=np.int64
)

ARC_LENGTH = 9


# ---------------------------------------------------------------------------
# segment-test corners


def _fast9_scores_numpy(gray, thresh):
    h, w = gray.shape
    score = np.zeros((h, w), np.float64)
    if h < 7 or w < 7:
        return score
    c = gray[3 : h - 3, 3 : w - 3]
    ring = np.empty((16,) + c.shape, np.float64)
    for i in range(16):
        dy = int(CIRCLE_DY[i])
        dx = int(CIRCLE_DX[i])
        ring[i] = gray[3 + dy : h - 3 + dy, 3 + dx : w - 3 + dx]
    d = ring - c[None, :, :]
    bright = d > thresh
    dark = d < -thresh

    # longest circular run of each polarity, via a doubled walk
    run_b = np.zeros(c.shape, np.int64)
    run_d = np.zeros(c.shape, np.int64)
    max_b = np.zeros(c.shape, np.int64)
    max_d = np.zeros(c.shape, np.int64)
    for k in range(32):
        f = bright[k % 16]
        run_b = np.where(f, run_b + 1, 0)
        np.maximum(max_b, run_b, out=max_b)
        f = dark[k % 16]
        run_d = np.where(f, run_d + 1, 0)
        np.maximum(max_d, run_d, out=max_d)
    is_b = np.minimum(max_b, 16) >= ARC_LENGTH
    is_d = (np.minimum(max_d, 16) >= ARC_LENGTH) & ~is_b

    # sequential adds keep float order identical to the njit build
    sb = np.zeros(c.shape, np.float64)
    sd = np.zeros(c.shape, np.float64)
    for i in range(16):
        sb = sb + np.where(bright[i], d[i] - thresh, 0.0)
        sd = sd + np.where(dark[i], -d[i] - thresh, 0.0)
    score[3 : h - 3, 3 : w - 3] = np.where(is_b, sb, 0.0) + np.where(is_d, sd, 0.0)
    return score


if USE_NUMBA:

    @njit(cache=True)
    def _fast9_scores_njit(gray, thresh):  # pragma: no cover - timed via dispatcher
        h, w = gray.shape
        score = np.zeros((h, w), np.float64)
        for y in range(3, h - 3):
            for x in range(3, w - 3):
                p = gray[y, x]
                run_b = 0
                run_d = 0
                max_b = 0
                max_d = 0
                for k in range(32):
                    i = k if k < 16 else k - 16
                    d = gray[y + CIRCLE_DY[i], x + CIRCLE_DX[i]] - p
                    if d > thresh:
                        run_b += 1
                        if run_b > max_b:
                            max_b = run_b
                    else:
                        run_b = 0
                    if d < -thresh:
                        run_d += 1
                        if run_d > max_d:
                            max_d = run_d
                    else:
                        run_d = 0
                if max_b > 16:
                    max_b = 16
                if max_d > 16:
                    max_d = 16
                if max_b >= ARC_LENGTH:
                    s = 0.0
                    for i in range(16):
                        d = gray[y + CIRCLE_DY[i], x + CIRCLE_DX[i]] - p
                        if d > thresh:
                            s += d - thresh
                    score[y, x] = s
                elif max_d >= ARC_LENGTH:
                    s = 0.0
                    for i in range(16):
                        d = gray[y + CIRCLE_DY[i], x + CIRCLE_DX[i]] - p
                        if d < -thresh:
                            s += -d - thresh
                    score[y, x] = s
        return score


def _nms_first_wins(score):
    """3x3 non-maximum suppression; the scan-order first pixel of a plateau wins.

    A pixel survives when its score is positive, strictly greater than the
    scores of its four already-scanned neighbors, and at least as great as
    the four not-yet-scanned ones.
    """
    h, w = score.shape
    s = np.full((h + 2, w + 2), -1.0)
    s[1:-1, 1:-1] = score
    c = score
    keep = c > 0.0
    for dy, dx in ((-1, -1), (-1, 0), (-1, 1), (0, -1)):
        keep &= s[1 + dy : h + 1 + dy, 1 + dx : w + 1 + dx] < c
    for dy, dx in ((0, 1), (1, -1), (1, 0), (1, 1)):
        keep &= s[1 + dy : h + 1 + dy, 1 + dx : w + 1 + dx] <= c
    ys, xs = np.nonzero(keep)
    return ys, xs, score[ys, xs]


def corner_scores(gray, threshold):
    """Segment-test score map (zero where the test fails), before suppression."""
    gray = np.ascontiguousarray(gray, dtype=np.float64)
    if gray.ndim != 2:
        raise ValueError("expected a 2-D grayscale array")
    t = float(threshold)
    if USE_NUMBA:
        return _fast9_scores_njit(gray, t)
    return _fast9_scores_numpy(gray, t)


def fast9(gray, threshold):
    """Detect ring-test corners with non-maximum suppression.

    Args:
        gray: 2-D float array of intensities (0..255 scale).
        threshold: minimum contrast against the center pixel.

    Returns:
        ``(ys, xs, scores)`` arrays in row-major scan order.
    """
    return _nms_first_wins(corner_scores(gray, threshold))


# ---------------------------------------------------------------------------
# 8-connected components


def _label8_numpy(mask):
    from scipy import ndimage

    lab, n = ndimage.label(mask, structure=np.ones((3, 3), np.int32))
    lab = lab.astype(np.int32, copy=False)
    if n == 0:
        return lab, 0
    # renumber by scan order of each component's first pixel
    flat = lab.ravel()
    idx = np.flatnonzero(flat)
    first = np.full(n + 1, flat.size, np.int64)
    np.minimum.at(first, flat[idx], idx)
    order = np.argsort(first[1:], kind="stable")
    remap = np.zeros(n + 1, np.int32)
    remap[1 + order] = np.arange(1, n + 1, dtype=np.int32)
    return remap[lab], n


if USE_NUMBA:

    @njit(cache=True)
    def _uf_find(parent, i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            nxt = parent[i]
            parent[i] = root
            i = nxt
        return root

    @njit(cache=True)
    def _label8_njit(mask):  # pragma: no cover - timed via dispatcher
        h, w = mask.shape
        labels = np.zeros((h, w), np.int32)
        parent = np.zeros(h * w + 1, np.int32)
        nxt = 0
        for y in range(h):
            for x in range(w):
                if mask[y, x] == 0:
                    continue
                # visited neighbors: NW, N, NE, W
                best = 0
                for t in range(4):
                    if t == 0:
                        ny, nx_ = y - 1, x - 1
                    elif t == 1:
                        ny, nx_ = y - 1, x
                    elif t == 2:
                        ny, nx_ = y - 1, x + 1
                    else:
                        ny, nx_ = y, x - 1
                    if ny < 0 or nx_ < 0 or nx_ >= w:
                        continue
                    l = labels[ny, nx_]
                    if l == 0:
                        continue
                    r = _uf_find(parent, l)
                    if best == 0 or r < best:
                        best = r
                if best == 0:
                    nxt += 1
                    parent[nxt] = nxt
                    labels[y, x] = nxt
                else:
                    labels[y, x] = best
                    for t in range(4):
                        if t == 0:
                            ny, nx_ = y - 1, x - 1
                        elif t == 1:
                            ny, nx_ = y - 1, x
                        elif t == 2:
                            ny, nx_ = y - 1, x + 1
                        else:
                            ny, nx_ = y, x - 1
                        if ny < 0 or nx_ < 0 or nx_ >= w:
                            continue
                        l = labels[ny, nx_]
                        if l == 0:
                            continue
                        r = _uf_find(parent, l)
                        if r != best:
                            parent[r] = best
        remap = np.zeros(nxt + 1, np.int32)
        count = 0
        for y in range(h):
            for x in range(w):
                l = labels[y, x]
                if l == 0:
                    continue
                r = _uf_find(parent, l)
                if remap[r] == 0:
                    count += 1
                    remap[r] = count
                labels[y, x] = remap[r]
        return labels, count


def label8(mask):
    """Label 8-connected foreground components of a binary mask.

    Args:
        mask: 2-D array, nonzero pixels are foreground.

    Returns:
        ``(labels, count)``: int32 map with background 0 and components
        numbered 1..count by scan order of their first pixel.
    """
    mask = np.ascontiguousarray(mask)
    if mask.ndim != 2:
        raise ValueError("expected a 2-D mask array")
    m8 = (mask != 0).astype(np.uint8)
    if USE_NUMBA:
        return _label8_njit(m8)
    return _label8_numpy(m8)


# ---------------------------------------------------------------------------
# affinity-propagation messages


def _ap_run_numpy(S, damping, max_iter, window):
    n = S.shape[0]
    R = np.zeros_like(S)
    A = np.zeros_like(S)
    idx = np.arange(n)
    e_prev = np.zeros(n, bool)
    streak = 0
    converged = False
    it_done = 0
    for it in range(max_iter):
        # responsibilities: r(i,k) = s(i,k) - max_{k'!=k} (a(i,k') + s(i,k'))
        AS = A + S
        k1 = np.argmax(AS, axis=1)
        m1 = AS[idx, k1]
        AS[idx, k1] = -np.inf
        m2 = AS.max(axis=1)
        r_new = S - m1[:, None]
        r_new[idx, k1] = S[idx, k1] - m2
        R = damping * R + (1.0 - damping) * r_new

        # availabilities: a(i,k) = min(0, r(k,k) + sum_{i' not in {i,k}} max(0, r(i',k)))
        # and a(k,k) = sum_{i'!=k} max(0, r(i',k))
        Rp = np.where(R > 0.0, R, 0.0)
        Rp[idx, idx] = 0.0
        # cumsum is a left fold, so the accumulation order matches the njit
        # build row by row and the two backends stay bitwise identical
        tot = Rp.cumsum(axis=0)[-1]
        a_new = (np.diagonal(R) + tot)[None, :] - Rp
        a_new = np.where(a_new > 0.0, 0.0, a_new)
        a_new[idx, idx] = tot
        A = damping * A + (1.0 - damping) * a_new

        e = (np.diagonal(A) + np.diagonal(R)) > 0.0
        if e.any() and np.array_equal(e, e_prev):
            streak += 1
        else:
            streak = 0
        e_prev = e
        it_done = it + 1
        if streak >= window:
            converged = True
            break
    return R, A, it_done, converged


if USE_NUMBA:

    @njit(cache=True)
    def _ap_run_njit(S, damping, max_iter, window):  # pragma: no cover
        n = S.shape[0]
        R = np.zeros((n, n), np.float64)
        A = np.zeros((n, n), np.float64)
        e = np.zeros(n, np.uint8)
        e_prev = np.zeros(n, np.uint8)
        streak = 0
        converged = False
        it_done = 0
        for it in range(max_iter):
            for i in range(n):
                m1 = -np.inf
                m2 = -np.inf
                k1 = -1
                for k in range(n):
                    v = A[i, k] + S[i, k]
                    if v > m1:
                        m2 = m1
                        m1 = v
                        k1 = k
                    elif v > m2:
                        m2 = v
                for k in range(n):
                    base = m2 if k == k1 else m1
                    R[i, k] = damping * R[i, k] + (1.0 - damping) * (S[i, k] - base)
            for k in range(n):
                tot = 0.0
                for i in range(n):
                    if i != k and R[i, k] > 0.0:
                        tot += R[i, k]
                for i in range(n):
                    if i == k:
                        a = tot
                    else:
                        a = R[k, k] + tot
                        if R[i, k] > 0.0:
                            a -= R[i, k]
                        if a > 0.0:
                            a = 0.0
                    A[i, k] = damping * A[i, k] + (1.0 - damping) * a
            same = True
            ne = 0
            for k in range(n):
                ek = 1 if (A[k, k] + R[k, k]) > 0.0 else 0
                e[k] = ek
                ne += ek
                if ek != e_prev[k]:
                    same = False
            if same and ne > 0:
                streak += 1
            else:
                streak = 0
            for k in range(n):
                e_prev[k] = e[k]
            it_done = it + 1
            if streak >= window:
                converged = True
                break
        return R, A, it_done, converged


def ap_messages(S, damping, max_iter, window):
    """Run damped affinity-propagation message passing to stability.

    Args:
        S: (n, n) float64 similarity matrix, preferences on the diagonal.
        damping: weight kept on the previous message value, in [0.5, 1).
        max_iter: sweep budget.
        window: sweeps the exemplar set must stay unchanged (and nonempty)
            before the run counts as converged.

    Returns:
        ``(R, A, n_iter, converged)``: final responsibility and availability
        matrices, sweeps executed, and the convergence flag.
    """
    S = np.ascontiguousarray(S, dtype=np.float64)
    n = S.shape[0]
    if S.ndim != 2 or S.shape[1] != n:
        raise ValueError("similarity matrix must be square")
    if n < 2:
        raise ValueError("need at least two items")
    if not (0.5 <= damping < 1.0):
        raise ValueError("damping must lie in [0.5, 1)")
    if USE_NUMBA:
        return _ap_run_njit(S, float(damping), int(max_iter), int(window))
    return _ap_run_numpy(S, float(damping), int(max_iter), int(window))
