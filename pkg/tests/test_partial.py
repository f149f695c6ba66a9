import numpy as np
import pytest

from fmatch import shapes
from fmatch.descriptors import RankWarning, positional
from fmatch.partial import (
    AlignmentMatrix,
    DegenerateEmbeddingWarning,
    DisjointSpectraError,
    PartialConfig,
    PartialPair,
    estimate_rank,
    offdiag_energy,
    offdiag_energy_grad,
    partial_p2p,
    partial_train_weights,
    solve_alignment,
)
from fmatch.spectral import mesh_eigenbasis


def test_rank_examples():
    cfg = PartialConfig(k_p=4, k_f=3)
    assert estimate_rank([0, 1, 2, 5], [0, 1, 3], cfg) == 3
    lp = np.arange(60.0)
    lf = np.concatenate([np.arange(55.0), [100.0] * 5])
    assert estimate_rank(lp, lf, PartialConfig()) == 40
    ev = np.linspace(0, 10, 30)
    assert estimate_rank(ev, ev, PartialConfig(k_p=30, k_f=30, rank_cap=100)) == 29


def test_rank_is_one_based_and_strict():
    cfg = PartialConfig(k_p=3, k_f=2)
    assert estimate_rank([1.0, 2.0, 3.0], [0.0, 2.0], cfg) == 1
    with pytest.raises(DisjointSpectraError, match="disjoint"):
        estimate_rank([2.0, 3.0], [0.0, 2.0], PartialConfig(k_p=2, k_f=2))
    with pytest.raises(ValueError):
        estimate_rank([1.0], [0.0, 1.0])


def test_rank_monotone_and_tail_invariant(rng):
    for _ in range(100):
        lp = np.sort(rng.uniform(0, 10, 20))
        lf = np.sort(rng.uniform(0, 10, 20))
        lf[-1] = max(lf[-1], lp[0] + 0.1)
        cfg = PartialConfig(k_p=20, k_f=20, rank_cap=40)
        r = estimate_rank(lp, lf, cfg)
        bigger = lf.copy()
        bigger[-1] += rng.uniform(0, 5)
        assert estimate_rank(lp, bigger, cfg) >= r
        extended = np.concatenate([lp, lf.max() + np.sort(rng.uniform(0, 5, 5))])
        assert estimate_rank(extended, lf, PartialConfig(k_p=25, k_f=20, rank_cap=40)) == r


def test_config_validation():
    with pytest.raises(ValueError):
        PartialConfig(k_p=1)
    with pytest.raises(ValueError):
        PartialConfig(rank_cap=0)


def test_alignment_exact_fit(rng):
    A = rng.standard_normal((6, 15))
    X = solve_alignment(A, A, 6)
    assert np.allclose(X.X, np.eye(6), atol=1e-8)
    assert (X.k_p, X.r) == (6, 6)


def test_alignment_recovers_orthogonal(rng):
    kp, r, d = 8, 5, 30
    Q, _ = np.linalg.qr(rng.standard_normal((kp, r)))
    A_r = rng.standard_normal((r, d))
    A_full = np.vstack([A_r, rng.standard_normal((3, d))])
    B = Q @ A_r + 0.0
    # Q^T B = A_r, but B has rank r < k_p so the minimum-norm X is Q itself
    X = solve_alignment(A_full, B, r)
    assert np.allclose(X.X, Q, atol=1e-6)


def test_alignment_underdetermined_warns(rng):
    with pytest.warns(RankWarning):
        X = solve_alignment(rng.standard_normal((4, 1)), rng.standard_normal((4, 1)), 3)
    assert np.all(np.isfinite(X.X))


def test_alignment_dimension_errors(rng):
    with pytest.raises(ValueError):
        solve_alignment(rng.standard_normal((3, 5)), rng.standard_normal((3, 5)), 4)
    with pytest.raises(ValueError):
        solve_alignment(rng.standard_normal((3, 5)), rng.standard_normal((3, 6)), 2)


def test_offdiag_examples():
    sel = np.eye(4)[:, [0, 2]]
    assert offdiag_energy(sel, [1, 2, 3, 4]) == 0
    X = np.ones((2, 2)) / np.sqrt(2)
    assert offdiag_energy(X, [1, 2]) == pytest.approx(4.5)


def test_offdiag_scalar_spectrum(rng):
    X = rng.standard_normal((5, 3))
    G = X.T @ X
    gram_off = np.sum(G**2) - np.sum(np.diag(G) ** 2)
    assert offdiag_energy(X, np.full(5, 3.0)) == pytest.approx(9.0 * gram_off, rel=1e-12)


def test_offdiag_zero_iff_diagonal(rng):
    for _ in range(20):
        lam = np.sort(rng.uniform(0.5, 5, 6))
        # X = Lambda^{-1/2} Q D makes X^T Lambda X = D Q^T Q D diagonal
        Q, _ = np.linalg.qr(rng.standard_normal((6, 4)))
        X = (Q / np.sqrt(lam)[:, None]) * rng.uniform(0.5, 2, 4)
        assert offdiag_energy(X, lam) < 1e-20
        Y = X + 1e-3 * rng.standard_normal(X.shape)
        assert offdiag_energy(Y, lam) > 0
    with pytest.raises(ValueError):
        offdiag_energy(np.eye(3), [1, 2])


def test_offdiag_gradient(rng):
    X = rng.standard_normal((5, 3))
    lam = rng.uniform(0, 4, 5)
    _, g = offdiag_energy_grad(X, lam)
    h = 1e-6
    fd = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        E = np.zeros_like(X)
        E[idx] = h
        fd[idx] = (offdiag_energy(X + E, lam) - offdiag_energy(X - E, lam)) / (2 * h)
    assert np.allclose(fd, g, rtol=1e-6, atol=1e-8)


def test_partial_p2p_self():
    m = shapes.bumpy_sphere(300, seed=3)
    b = mesh_eigenbasis(m, 20)
    pmap = partial_p2p(b, b, np.eye(20)[:, :15])
    assert np.array_equal(pmap.assignment, np.arange(300))
    assert (pmap.source, pmap.target) == ("full", "partial")


def test_partial_p2p_rank_one_warns():
    m = shapes.bumpy_sphere(200, seed=3)
    b = mesh_eigenbasis(m, 5)
    with pytest.warns(DegenerateEmbeddingWarning):
        pmap = partial_p2p(b, b, np.eye(5)[:, :1])
    assert len(pmap) == 200
    with pytest.raises(ValueError):
        partial_p2p(b, b, np.ones((6, 2)))


def test_alignment_matrix_validation():
    with pytest.raises(ValueError):
        AlignmentMatrix(np.ones((3, 0)))
    with pytest.raises(ValueError):
        AlignmentMatrix(np.array([[np.inf]]))


def test_trained_alignment_slanted_diagonal():
    full = shapes.bumpy_sphere(400, seed=2)
    part, _ = shapes.crop_fraction(full, 0.6)
    bf, bp = mesh_eigenbasis(full, 40), mesh_eigenbasis(part, 40)
    df = positional(full.vertices, n_anchors=128).values
    dp = positional(part.vertices, n_anchors=128).values
    pair = PartialPair.from_bases(bf, bp, df, dp, PartialConfig(k_p=40, k_f=40, rank_cap=30))
    res = partial_train_weights([pair], lr=1e-3, steps=100)
    assert res.final_loss < res.initial_loss
    again = partial_train_weights([pair], lr=1e-3, steps=100)
    assert np.array_equal(res.weights.matrix, again.weights.matrix)

    def slant(W):
        # correlation between column index and the row of its dominant entry
        X = solve_alignment(pair.coeffs_full @ W, pair.coeffs_partial @ W, pair.r).X
        peak = np.abs(X).argmax(axis=0)
        return np.corrcoef(peak, np.arange(pair.r))[0, 1]

    before, after = slant(np.eye(pair.d_in)), slant(res.weights.matrix)
    assert after > 0.4 and after > before + 0.3
