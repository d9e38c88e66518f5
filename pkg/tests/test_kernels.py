"""Parity between the numba kernels and their pure-numpy twins."""

import numpy as np
import pytest

from eds import _kernels

pytestmark = pytest.mark.skipif(
    not _kernels.HAVE_NUMBA, reason="numba backend unavailable"
)

NP = _kernels.NUMPY_IMPLS
NB = _kernels.NUMBA_IMPLS


def test_assign_labels_parity(rng):
    X = rng.normal(size=(400, 7))
    centroids = rng.normal(size=(9, 7))
    l1, d1 = NP["assign_labels"](X, centroids)
    l2, d2 = NB["assign_labels"](X, centroids)
    assert np.array_equal(l1, l2)
    assert np.allclose(d1, d2, rtol=1e-12)


def test_assign_labels_tie_breaks_low_both_backends():
    X = np.array([[0.0, 0.0]])
    centroids = np.array([[1.0, 0.0], [-1.0, 0.0]])
    for impl in (NP, NB):
        labels, dists = impl["assign_labels"](X, centroids)
        assert labels[0] == 0
        assert dists[0] == 1.0


def test_centroid_sums_parity(rng):
    X = rng.normal(size=(250, 5))
    labels = rng.integers(0, 6, size=250).astype(np.int64)
    s1, c1 = NP["centroid_sums"](X, labels, 6)
    s2, c2 = NB["centroid_sums"](X, labels, 6)
    assert np.array_equal(c1, c2)
    assert np.allclose(s1, s2, rtol=1e-12)


def test_hartigan_sweep_parity(rng):
    X = rng.normal(size=(120, 4))
    labels = rng.integers(0, 5, size=120).astype(np.int64)
    l1 = labels.copy()
    s1, c1 = NP["centroid_sums"](X, l1, 5)
    l2 = labels.copy()
    s2, c2 = NB["centroid_sums"](X, l2, 5)
    m1 = NP["hartigan_sweep"](X, l1, s1, c1)
    m2 = NB["hartigan_sweep"](X, l2, s2, c2)
    assert m1 == m2
    assert np.array_equal(l1, l2)
    assert np.array_equal(c1, c2)
    assert np.allclose(s1, s2, rtol=1e-12)


def test_hartigan_sweep_lowers_inertia(rng):
    X = rng.normal(size=(60, 3))
    labels = rng.integers(0, 4, size=60).astype(np.int64)

    def inertia(lab):
        total = 0.0
        for j in range(4):
            sub = X[lab == j]
            if len(sub):
                total += ((sub - sub.mean(axis=0)) ** 2).sum()
        return total

    before = inertia(labels)
    sums, counts = NP["centroid_sums"](X, labels, 4)
    moved = NP["hartigan_sweep"](X, labels, sums, counts)
    assert moved > 0
    assert inertia(labels) < before
    assert (counts > 0).all()


def test_softmax_parity(rng):
    logits = rng.normal(scale=20.0, size=(300, 6))
    p1 = NP["softmax2d"](logits)
    p2 = NB["softmax2d"](logits)
    assert np.allclose(p1, p2, rtol=1e-12, atol=1e-15)
    assert np.allclose(p2.sum(axis=1), 1.0, atol=1e-9)


def test_ce_loss_grad_parity(rng):
    n, c = 200, 5
    raw = rng.random((n, c)) + 1e-3
    probs = raw / raw.sum(axis=1, keepdims=True)
    labels = rng.integers(0, c, size=n).astype(np.int64)
    weights = rng.random(n) + 0.1
    l1, g1 = NP["ce_loss_grad"](probs, labels, weights)
    l2, g2 = NB["ce_loss_grad"](probs, labels, weights)
    assert abs(l1 - l2) < 1e-12
    assert np.allclose(g1, g2, rtol=1e-10, atol=1e-14)


def test_logit_ce_loss_parity(rng):
    X = rng.normal(size=(150, 6))
    W = rng.normal(size=(4, 6))
    labels = rng.integers(0, 4, size=150).astype(np.int64)
    l1 = NP["logit_ce_loss"](X, labels, W)
    l2 = NB["logit_ce_loss"](X, labels, W)
    assert abs(l1 - l2) < 1e-10


def test_sgd_epoch_parity(rng):
    n_img, px, f, c = 12, 9, 6, 4
    feats = rng.normal(size=(n_img, px, f))
    feats[..., -1] = 1.0
    labels = rng.integers(0, c, size=(n_img, px)).astype(np.int64)
    order = rng.permutation(n_img).astype(np.int64)

    w1 = rng.normal(size=(c, f))
    v1 = np.zeros_like(w1)
    w2 = w1.copy()
    v2 = np.zeros_like(w2)
    args = dict(lr0=0.1, power=0.9, step0=0, total_steps=20, momentum=0.9,
                wd=1e-4, batch_imgs=4)
    loss1, nb1 = NP["sgd_epoch"](feats, labels, order, w1, v1, **args)
    loss2, nb2 = NB["sgd_epoch"](
        feats, labels, order, w2, v2, args["lr0"], args["power"], args["step0"],
        args["total_steps"], args["momentum"], args["wd"], args["batch_imgs"],
    )
    assert nb1 == nb2 == 3
    assert abs(loss1 - loss2) < 1e-9
    assert np.allclose(w1, w2, rtol=1e-9, atol=1e-12)
    assert np.allclose(v1, v2, rtol=1e-9, atol=1e-12)


def test_active_backend_matches_env():
    assert _kernels.BACKEND in ("numba", "numpy")
    assert _kernels.assign_labels is _kernels.NUMBA_IMPLS["assign_labels"]
