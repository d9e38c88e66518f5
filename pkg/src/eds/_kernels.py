"""Hot numeric kernels with two interchangeable backends.

Every kernel has a pure-numpy implementation and a numba @njit twin with the
same call signature and semantics. The active backend is chosen once at import
time from the EDS_KERNELS environment variable:

    EDS_KERNELS=numba   require numba (ImportError if missing)
    EDS_KERNELS=numpy   force the pure-numpy fallback
    EDS_KERNELS=auto    numba when importable, numpy otherwise (default)

Both backends stay importable side by side so the benchmark and the parity
tests can compare them directly. Results agree to float round-off; within one
backend every kernel is bit-deterministic (fixed summation order, no
thread-order-dependent reductions).
"""

from __future__ import annotations

import os

import numpy as np

_MODE = os.environ.get("EDS_KERNELS", "auto").lower()
if _MODE not in ("auto", "numba", "numpy"):
    raise ValueError(f"EDS_KERNELS must be auto|numba|numpy, got {_MODE!r}")

_numba_err: Exception | None = None
if _MODE in ("auto", "numba"):
    try:
        from numba import config as _numba_config
        from numba import njit, prange

        # skip the TBB probe; omp is present and warning-free
        _numba_config.THREADING_LAYER = "omp"
    except ImportError as e:  # pragma: no cover - depends on environment
        _numba_err = e
        if _MODE == "numba":
            raise
else:
    _numba_err = ImportError("disabled via EDS_KERNELS=numpy")

HAVE_NUMBA = _numba_err is None


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _np_assign_labels(X, centroids):
    """Nearest centroid per row of X in squared Euclidean distance.

    Ties go to the lowest centroid index. Returns (labels int64, sqdist f64).
    """
    n = X.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    # chunked so the n x k x d intermediate stays small
    chunk = max(1, int(2_000_000 // max(1, centroids.size)))
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        d2 = ((X[s:e, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels[s:e] = np.argmin(d2, axis=1)
        best[s:e] = d2[np.arange(e - s), labels[s:e]]
    return labels, best


def _np_centroid_sums(X, labels, k):
    """Per-cluster coordinate sums and member counts, accumulated in row order."""
    d = X.shape[1]
    sums = np.zeros((k, d), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    np.add.at(sums, labels, X)
    np.add.at(counts, labels, 1)
    return sums, counts


def _np_hartigan_sweep(X, labels, sums, counts):
    """One pass of single-point reassignment moves that lower total inertia.

    labels, sums, counts are updated in place; returns the number of moves.
    Points are visited in row order; a point moves to the cluster with the most
    negative inertia delta, donors always keep at least one member.
    """
    n, d = X.shape
    k = sums.shape[0]
    moved = 0
    for i in range(n):
        a = labels[i]
        ca = counts[a]
        if ca <= 1:
            continue
        x = X[i]
        mu_a = sums[a] / ca
        remove_gain = (ca / (ca - 1.0)) * float(((x - mu_a) ** 2).sum())
        best_j = -1
        best_delta = -1e-12
        for j in range(k):
            if j == a:
                continue
            cb = counts[j]
            mu_b = sums[j] / cb
            add_cost = (cb / (cb + 1.0)) * float(((x - mu_b) ** 2).sum())
            delta = add_cost - remove_gain
            if delta < best_delta:
                best_delta = delta
                best_j = j
        if best_j >= 0:
            sums[a] -= x
            counts[a] -= 1
            sums[best_j] += x
            counts[best_j] += 1
            labels[i] = best_j
            moved += 1
    return moved


def _np_softmax2d(logits):
    """Row-wise softmax with max subtraction; rows sum to 1 for any finite input."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _np_ce_loss_grad(probs, labels, weights):
    """Weighted mean cross-entropy and its gradient w.r.t. logits.

    loss = sum_i w_i * (-log p_i[y_i]) / sum_i w_i
    grad = w_i * (p_i - onehot_i) / sum_i w_i
    """
    n, c = probs.shape
    wsum = weights.sum()
    p_true = probs[np.arange(n), labels]
    loss = float((weights * -np.log(p_true)).sum() / wsum)
    grad = probs * (weights / wsum)[:, None]
    grad[np.arange(n), labels] -= weights / wsum
    return loss, grad


def _np_logit_ce_loss(X, labels, W):
    """Mean cross-entropy computed from logits (stable for extreme values)."""
    logits = X @ W.T
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    true = logits[np.arange(X.shape[0]), labels]
    return float((lse - true).mean())


def _np_sgd_epoch(feats, labels, order, W, vel, lr0, power, step0, total_steps,
                  momentum, wd, batch_imgs):
    """One epoch of minibatch SGD with momentum, weight decay and poly LR.

    feats: (n_images, px, F) with a trailing all-ones bias column
    labels: (n_images, px) int64
    order: shuffled image indices for this epoch
    W, vel: (C, F), updated in place
    Returns (sum of batch losses, number of batches).
    """
    n_images = order.shape[0]
    loss_sum = 0.0
    n_batches = 0
    for start in range(0, n_images, batch_imgs):
        idx = order[start:start + batch_imgs]
        Xb = feats[idx].reshape(-1, feats.shape[2])
        yb = labels[idx].reshape(-1)
        probs = _np_softmax2d(Xb @ W.T)
        npix = Xb.shape[0]
        p_true = probs[np.arange(npix), yb]
        loss_sum += float(-np.log(p_true).mean())
        gl = probs
        gl[np.arange(npix), yb] -= 1.0
        grad = gl.T @ Xb / npix + wd * W
        step = step0 + n_batches
        lr = lr0 * (1.0 - step / total_steps) ** power
        vel *= momentum
        vel += grad
        W -= lr * vel
        n_batches += 1
    return loss_sum, n_batches


# ---------------------------------------------------------------------------
# numba twins
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _nb_assign_labels(X, centroids):
        n, d = X.shape
        k = centroids.shape[0]
        labels = np.empty(n, dtype=np.int64)
        best = np.empty(n, dtype=np.float64)
        for i in prange(n):
            bj = 0
            bd = np.inf
            for j in range(k):
                acc = 0.0
                for t in range(d):
                    diff = X[i, t] - centroids[j, t]
                    acc += diff * diff
                if acc < bd:
                    bd = acc
                    bj = j
            labels[i] = bj
            best[i] = bd
        return labels, best

    @njit(cache=True)
    def _nb_centroid_sums(X, labels, k):
        n, d = X.shape
        sums = np.zeros((k, d), dtype=np.float64)
        counts = np.zeros(k, dtype=np.int64)
        for i in range(n):
            j = labels[i]
            counts[j] += 1
            for t in range(d):
                sums[j, t] += X[i, t]
        return sums, counts

    @njit(cache=True)
    def _nb_hartigan_sweep(X, labels, sums, counts):
        n, d = X.shape
        k = sums.shape[0]
        moved = 0
        for i in range(n):
            a = labels[i]
            ca = counts[a]
            if ca <= 1:
                continue
            da = 0.0
            for t in range(d):
                diff = X[i, t] - sums[a, t] / ca
                da += diff * diff
            remove_gain = (ca / (ca - 1.0)) * da
            best_j = -1
            best_delta = -1e-12
            for j in range(k):
                if j == a:
                    continue
                cb = counts[j]
                db = 0.0
                for t in range(d):
                    diff = X[i, t] - sums[j, t] / cb
                    db += diff * diff
                delta = (cb / (cb + 1.0)) * db - remove_gain
                if delta < best_delta:
                    best_delta = delta
                    best_j = j
            if best_j >= 0:
                for t in range(d):
                    sums[a, t] -= X[i, t]
                    sums[best_j, t] += X[i, t]
                counts[a] -= 1
                counts[best_j] += 1
                labels[i] = best_j
                moved += 1
        return moved

    @njit(cache=True)
    def _nb_softmax2d(logits):
        n, c = logits.shape
        out = np.empty((n, c), dtype=np.float64)
        for i in range(n):
            m = logits[i, 0]
            for j in range(1, c):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(c):
                v = np.exp(logits[i, j] - m)
                out[i, j] = v
                s += v
            for j in range(c):
                out[i, j] /= s
        return out

    @njit(cache=True)
    def _nb_ce_loss_grad(probs, labels, weights):
        n, c = probs.shape
        wsum = 0.0
        for i in range(n):
            wsum += weights[i]
        loss = 0.0
        grad = np.empty((n, c), dtype=np.float64)
        for i in range(n):
            wi = weights[i] / wsum
            loss += weights[i] * -np.log(probs[i, labels[i]])
            for j in range(c):
                grad[i, j] = probs[i, j] * wi
            grad[i, labels[i]] -= wi
        return loss / wsum, grad

    @njit(cache=True)
    def _nb_logit_ce_loss(X, labels, W):
        n, f = X.shape
        c = W.shape[0]
        total = 0.0
        for i in range(n):
            m = -np.inf
            true_logit = 0.0
            logits = np.empty(c, dtype=np.float64)
            for j in range(c):
                z = 0.0
                for t in range(f):
                    z += X[i, t] * W[j, t]
                logits[j] = z
                if z > m:
                    m = z
            s = 0.0
            for j in range(c):
                s += np.exp(logits[j] - m)
            true_logit = logits[labels[i]]
            total += (m + np.log(s)) - true_logit
        return total / n

    @njit(cache=True)
    def _nb_sgd_epoch(feats, labels, order, W, vel, lr0, power, step0, total_steps,
                      momentum, wd, batch_imgs):
        n_images, px, f = feats.shape
        c = W.shape[0]
        loss_sum = 0.0
        n_batches = 0
        grad = np.empty((c, f), dtype=np.float64)
        logits = np.empty(c, dtype=np.float64)
        start = 0
        while start < n_images:
            stop = min(start + batch_imgs, n_images)
            npix = (stop - start) * px
            for j in range(c):
                for t in range(f):
                    grad[j, t] = 0.0
            batch_loss = 0.0
            for bi in range(start, stop):
                img = order[bi]
                for p in range(px):
                    m = -np.inf
                    for j in range(c):
                        z = 0.0
                        for t in range(f):
                            z += feats[img, p, t] * W[j, t]
                        logits[j] = z
                        if z > m:
                            m = z
                    s = 0.0
                    for j in range(c):
                        logits[j] = np.exp(logits[j] - m)
                        s += logits[j]
                    y = labels[img, p]
                    batch_loss += -np.log(logits[y] / s)
                    for j in range(c):
                        gl = logits[j] / s
                        if j == y:
                            gl -= 1.0
                        for t in range(f):
                            grad[j, t] += gl * feats[img, p, t]
            loss_sum += batch_loss / npix
            step = step0 + n_batches
            lr = lr0 * (1.0 - step / total_steps) ** power
            for j in range(c):
                for t in range(f):
                    g = grad[j, t] / npix + wd * W[j, t]
                    vel[j, t] = momentum * vel[j, t] + g
                    W[j, t] -= lr * vel[j, t]
            n_batches += 1
            start = stop
        return loss_sum, n_batches


NUMPY_IMPLS = {
    "assign_labels": _np_assign_labels,
    "centroid_sums": _np_centroid_sums,
    "hartigan_sweep": _np_hartigan_sweep,
    "softmax2d": _np_softmax2d,
    "ce_loss_grad": _np_ce_loss_grad,
    "logit_ce_loss": _np_logit_ce_loss,
    "sgd_epoch": _np_sgd_epoch,
}

NUMBA_IMPLS = (
    {
        "assign_labels": _nb_assign_labels,
        "centroid_sums": _nb_centroid_sums,
        "hartigan_sweep": _nb_hartigan_sweep,
        "softmax2d": _nb_softmax2d,
        "ce_loss_grad": _nb_ce_loss_grad,
        "logit_ce_loss": _nb_logit_ce_loss,
        "sgd_epoch": _nb_sgd_epoch,
    }
    if HAVE_NUMBA
    else None
)

BACKEND = "numba" if HAVE_NUMBA else "numpy"
_active = NUMBA_IMPLS if HAVE_NUMBA else NUMPY_IMPLS

assign_labels = _active["assign_labels"]
centroid_sums = _active["centroid_sums"]
hartigan_sweep = _active["hartigan_sweep"]
softmax2d = _active["softmax2d"]
ce_loss_grad = _active["ce_loss_grad"]
logit_ce_loss = _active["logit_ce_loss"]
sgd_epoch = _active["sgd_epoch"]
