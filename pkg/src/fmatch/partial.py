"""Partial-to-full matching through an alignment of the partial eigenbasis.

The alignment ``X`` (``k_p x r``) satisfies ``X^T B ~= A_r``: it sends
partial spectral coefficients to coefficients in the first ``r`` full
eigenfunctions. Training drives ``X^T diag(lambda_p) X`` towards a diagonal
matrix, i.e. the aligned partial basis is made of Dirichlet-orthogonal functions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .descriptors import CombinationWeights, RankWarning
from .fmap import (
    FmapError,
    TrainResult,
    checked_loss,
    initial_weights,
    lstsq_map,
    lstsq_map_backward,
    run_adam,
)
from .p2p import PointMap, nearest_neighbors
from .spectral import project


class DisjointSpectraError(ValueError):
    pass


class DegenerateEmbeddingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PartialConfig:
    k_p: int = 60
    k_f: int = 60
    rank_cap: int = 40

    def __post_init__(self):
        if self.k_p < 2 or self.k_f < 2:
            raise ValueError("k_p and k_f must be at least 2")
        if self.rank_cap < 1:
            raise ValueError("rank_cap must be at least 1")


@dataclass(frozen=True, eq=False)
class AlignmentMatrix:
    X: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] < 1 or not np.all(np.isfinite(X)):
            raise FmapError(f"alignment must be a finite k_p x r matrix, got shape {X.shape}")
        object.__setattr__(self, "X", X)

    @property
    def r(self):
        return self.X.shape[1]

    @property
    def k_p(self):
        return self.X.shape[0]


def estimate_rank(evals_partial, evals_full, cfg=None):
    """Largest 1-based ``i <= k_p`` with ``lambda_i^p < max_j lambda_j^f``, capped at ``rank_cap``."""
    cfg = cfg or PartialConfig()
    lp = np.asarray(evals_partial, dtype=np.float64)[: cfg.k_p]
    lf = np.asarray(evals_full, dtype=np.float64)[: cfg.k_f]
    if len(lp) < 2 or len(lf) < 2:
        raise ValueError("both spectra need at least two eigenvalues")
    below = np.flatnonzero(lp < lf.max())
    if below.size == 0:
        raise DisjointSpectraError(
            f"disjoint spectra: smallest partial eigenvalue {lp.min():.6g} >= "
            f"largest full eigenvalue {lf.max():.6g}"
        )
    return int(min(below[-1] + 1, cfg.rank_cap))


def _alignment(A_full, B_partial, r):
    if r > A_full.shape[0]:
        raise FmapError(f"rank {r} exceeds the {A_full.shape[0]} full coefficients")
    if A_full.shape[1] != B_partial.shape[1]:
        raise FmapError(
            f"full coefficients have {A_full.shape[1]} descriptors, partial have {B_partial.shape[1]}"
        )
    # X^T = argmin_Y ||Y B - A_r||^2 is the fmap solve with roles swapped
    Xt, cache = lstsq_map(B_partial, A_full[:r])
    return Xt.T, cache


def solve_alignment(A_full, B_partial, r):
    """Closed-form ``argmin_X ||A_r - X^T B||^2`` with ``A_r`` the first ``r`` rows of ``A_full``."""
    A_full = np.asarray(A_full, dtype=np.float64)
    B_partial = np.asarray(B_partial, dtype=np.float64)
    if B_partial.shape[1] < r:
        warnings.warn(
            f"{B_partial.shape[1]} descriptors for rank {r}: alignment is underdetermined",
            RankWarning,
            stacklevel=2,
        )
    return AlignmentMatrix(_alignment(A_full, B_partial, r)[0])


def _x_mat(X):
    return X.X if isinstance(X, AlignmentMatrix) else np.asarray(X, dtype=np.float64)


def offdiag_energy(X, evals_partial):
    """Sum of squared off-diagonal entries of ``X^T diag(evals) X``."""
    X = _x_mat(X)
    lam = np.asarray(evals_partial, dtype=np.float64)
    if len(lam) != X.shape[0]:
        raise ValueError(f"{len(lam)} eigenvalues for X with {X.shape[0]} rows")
    S = X.T @ (lam[:, None] * X)
    np.fill_diagonal(S, 0.0)  # subtracting the diagonal sum would cancel badly
    return float(np.sum(S**2))


def offdiag_energy_grad(X, evals_partial):
    X = _x_mat(X)
    lam = np.asarray(evals_partial, dtype=np.float64)
    S = X.T @ (lam[:, None] * X)
    off = S - np.diag(np.diag(S))
    return float(np.sum(off**2)), 4.0 * (lam[:, None] * X) @ off


@dataclass(eq=False)
class PartialPair:
    """Projected base descriptors of a (full, partial) pair with its estimated rank."""

    coeffs_full: np.ndarray  # k_f x d_in
    coeffs_partial: np.ndarray  # k_p x d_in
    evals_partial: np.ndarray
    r: int
    name: str = ""

    @classmethod
    def from_bases(cls, basis_full, basis_partial, desc_full, desc_partial, cfg=None, name=""):
        cfg = cfg or PartialConfig()
        bf = basis_full.truncated(min(cfg.k_f, basis_full.k))
        bp = basis_partial.truncated(min(cfg.k_p, basis_partial.k))
        r = estimate_rank(bp.evals, bf.evals, cfg)
        vf = getattr(desc_full, "values", desc_full)
        vp = getattr(desc_partial, "values", desc_partial)
        return cls(project(bf, vf), project(bp, vp), bp.evals, r, name)

    @property
    def d_in(self):
        return self.coeffs_full.shape[1]


def partial_pair_loss_grad(pair, W):
    """Off-diagonal energy of the aligned basis under weights ``W`` and its gradient."""
    A = pair.coeffs_full @ W
    B = pair.coeffs_partial @ W
    X, cache = _alignment(A, B, pair.r)
    loss, gX = offdiag_energy_grad(X, pair.evals_partial)
    gB, gAr = lstsq_map_backward(cache, gX.T)
    grad_W = pair.coeffs_partial.T @ gB + pair.coeffs_full[: pair.r].T @ gAr
    return loss, grad_W


def partial_pair_loss(pair, W):
    X = _alignment(pair.coeffs_full @ W, pair.coeffs_partial @ W, pair.r)[0]
    return offdiag_energy(X, pair.evals_partial)


def partial_train_weights(pairs, d_out=None, lr=1e-4, steps=100, batch_size=8, seed=0, init=None):
    """Learn shared descriptor weights with the off-diagonal energy as the only loss."""
    if not pairs:
        raise FmapError("no training pairs")
    d_in = pairs[0].d_in
    if any(p.d_in != d_in for p in pairs):
        raise FmapError("all pairs must share the same base descriptor count")
    d_out = d_in if d_out is None else d_out
    W0 = (init if init is not None else initial_weights(d_in, d_out, seed)).matrix

    def full(W):
        return float(sum(partial_pair_loss(p, W) for p in pairs))

    initial = checked_loss(full, W0, 0, [])
    W, trace = run_adam(partial_pair_loss_grad, pairs, W0, lr, steps, batch_size, seed)
    return TrainResult(CombinationWeights(W), trace, initial, checked_loss(full, W, steps, trace), seed)


def partial_p2p(basis_full, basis_partial, X):
    """Map each partial vertex to its nearest full vertex in the aligned embedding.

    Rows of ``Phi_p X`` are compared with rows of the first ``r`` full
    eigenfunctions; ties go to the lowest full vertex index.
    """
    X = _x_mat(X)
    r = X.shape[1]
    if X.shape[0] > basis_partial.k:
        raise FmapError(f"X has {X.shape[0]} rows, partial basis stores {basis_partial.k}")
    if r > basis_full.k:
        raise FmapError(f"rank {r} exceeds the full basis size {basis_full.k}")
    if r == 1:
        warnings.warn("rank-1 alignment: the embedding is one-dimensional", DegenerateEmbeddingWarning,
                      stacklevel=2)
    query = basis_partial.evecs[:, : X.shape[0]] @ X
    assignment = nearest_neighbors(basis_full.evecs[:, :r], query)
    return PointMap(assignment, source="full", target="partial")
