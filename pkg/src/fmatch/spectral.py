"""Cotangent Laplace-Beltrami operator and its truncated eigenbasis."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as sla

from .mesh import vertex_areas

logger = logging.getLogger(__name__)

COT_CLAMP = 1e4
DENSE_MAX_N = 512
DEFAULT_SHIFT = -1e-8


class EigenSolverError(RuntimeError):
    """Eigensolver failed to converge; ``residual`` is the worst achieved."""

    def __init__(self, message, residual=float("nan")):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3g})")


class CotangentClampWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class LaplacianPair:
    """Stiffness ``W`` (cotangent, PSD) and lumped diagonal mass."""

    stiffness: sparse.csr_matrix
    mass: np.ndarray
    n_clamped: int = 0

    @property
    def n(self):
        return self.stiffness.shape[0]

    @property
    def mass_matrix(self):
        return sparse.diags(self.mass, format="csr")


def _cotangents(vertices, triangles):
    """Cotangent of the angle at each corner; column c is the corner at triangles[:, c]."""
    cots = np.empty(triangles.shape, dtype=np.float64)
    for c in range(3):
        k = triangles[:, c]
        i = triangles[:, (c + 1) % 3]
        j = triangles[:, (c + 2) % 3]
        u = vertices[i] - vertices[k]
        v = vertices[j] - vertices[k]
        dot = np.einsum("ij,ij->i", u, v)
        cross = np.linalg.norm(np.cross(u, v), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            cots[:, c] = dot / cross
    return cots


def build_laplacian(mesh):
    """Assemble the cotangent stiffness matrix and lumped mass of ``mesh``.

    Off-diagonal entry ``(i, j)`` is ``-(cot a + cot b) / 2`` over the
    triangles sharing edge ``(i, j)``; the diagonal makes each row sum to zero.
    Cotangents are clamped to ``[-1e4, 1e4]``.
    """
    v, t = mesh.vertices, mesh.triangles
    n = mesh.n_vertices
    cots = _cotangents(v, t)
    bad = ~np.isfinite(cots) | (np.abs(cots) > COT_CLAMP)
    n_clamped = int(bad.sum())
    if n_clamped:
        cots = np.nan_to_num(cots, nan=COT_CLAMP, posinf=COT_CLAMP, neginf=-COT_CLAMP)
        cots = np.clip(cots, -COT_CLAMP, COT_CLAMP)
        warnings.warn(f"{n_clamped} cotangent values clamped to +-{COT_CLAMP:g}",
                      CotangentClampWarning, stacklevel=2)

    # corner c is opposite the edge (c+1, c+2)
    rows, cols, vals = [], [], []
    for c in range(3):
        i = t[:, (c + 1) % 3]
        j = t[:, (c + 2) % 3]
        rows.append(np.minimum(i, j))
        cols.append(np.maximum(i, j))
        vals.append(-0.5 * cots[:, c])
    upper = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    upper.sum_duplicates()
    off = (upper + upper.T).tocsr()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    stiffness = (off + sparse.diags(diag)).tocsr()
    stiffness.sort_indices()
    return LaplacianPair(stiffness=stiffness, mass=vertex_areas(mesh), n_clamped=n_clamped)


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """First ``k`` eigenpairs of ``W phi = lambda M phi``.

    Attributes
    ----------
    evecs : (n, k) M-orthonormal eigenfunctions
    evals : (k,) ascending eigenvalues
    mass : (n,) lumped mass diagonal
    """

    evecs: np.ndarray
    evals: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        if self.evecs.ndim != 2 or self.evecs.shape != (len(self.mass), len(self.evals)):
            raise ValueError(
                f"inconsistent basis shapes: evecs {self.evecs.shape}, "
                f"{len(self.evals)} evals, {len(self.mass)} masses"
            )

    @property
    def k(self):
        return self.evecs.shape[1]

    @property
    def n(self):
        return self.evecs.shape[0]

    def truncated(self, k):
        if not 1 <= k <= self.k:
            raise ValueError(f"requested {k} basis functions, basis stores {self.k}")
        return SpectralBasis(self.evecs[:, :k], self.evals[:k], self.mass)

    def project(self, f):
        return project(self, f)

    def reconstruct(self, a):
        return reconstruct(self, a)


def _fix_signs(evecs):
    """Flip each column so its largest-magnitude entry is positive.

    ``np.argmax`` returns the first maximum, so ties go to the lowest index.
    """
    idx = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[idx, np.arange(evecs.shape[1])])
    signs[signs == 0] = 1.0
    return evecs * signs


def _residuals(W, mass, evals, evecs):
    """Relative backward error of each eigenpair."""
    r = W @ evecs - (mass[:, None] * evecs) * evals
    w_norm = abs(W).sum(axis=1).max()
    scale = (w_norm + np.abs(evals) * mass.max()) * np.linalg.norm(evecs, axis=0)
    return np.linalg.norm(r, axis=0) / np.maximum(scale, np.finfo(float).tiny)


def eigenbasis(lap, k, method="auto", shift=DEFAULT_SHIFT, tol=1e-6, maxiter=None):
    """Compute the ``k`` smallest generalized eigenpairs of ``(W, M)``.

    Parameters
    ----------
    lap : LaplacianPair
    k : int
        Number of eigenpairs, ``1 <= k < n``.
    method : {'auto', 'dense', 'sparse'}
        ``auto`` uses the dense solver for ``n <= 512`` and shift-invert
        Lanczos otherwise.
    shift : float
        Shift-invert target; slightly negative so the constant mode is solvable.
    tol : float
        Largest accepted relative residual.
    """
    n = lap.n
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    if method == "auto":
        method = "dense" if n <= DENSE_MAX_N else "sparse"
    W, mass = lap.stiffness, lap.mass
    if method == "dense":
        evals, evecs = scipy.linalg.eigh(W.toarray(), np.diag(mass), subset_by_index=[0, k - 1])
    elif method == "sparse":
        M = lap.mass_matrix
        # A few guard eigenpairs keep a repeated eigenvalue at the cutoff from
        # losing members; a fixed start vector makes the run reproducible.
        k_solve = min(n - 1, k + max(10, k // 5))
        v0 = np.random.default_rng(0).standard_normal(n)
        try:
            evals, evecs = sla.eigsh(W, k=k_solve, M=M, sigma=shift, which="LM", maxiter=maxiter, v0=v0)
        except sla.ArpackNoConvergence as exc:
            res = _residuals(W, mass, exc.eigenvalues, exc.eigenvectors) if len(exc.eigenvalues) else [np.inf]
            raise EigenSolverError(
                f"shift-invert Lanczos did not converge for k={k}", float(np.max(res))
            ) from exc
        # Rayleigh-Ritz on the returned subspace restores exact M-orthonormality
        # inside clusters of repeated eigenvalues.
        Mv = mass[:, None] * evecs
        gram_w = evecs.T @ (W @ evecs)
        gram_m = evecs.T @ Mv
        gram_w = 0.5 * (gram_w + gram_w.T)
        gram_m = 0.5 * (gram_m + gram_m.T)
        evals, rot = scipy.linalg.eigh(gram_w, gram_m)
        evecs = evecs @ rot
    else:
        raise ValueError(f"unknown method {method!r}")

    order = np.argsort(evals, kind="stable")[:k]
    evals = np.asarray(evals[order], dtype=np.float64)
    evecs = _fix_signs(np.asarray(evecs[:, order], dtype=np.float64))
    res = _residuals(W, mass, evals, evecs)
    worst = float(res.max())
    if not np.isfinite(worst) or worst > tol:
        raise EigenSolverError(f"eigenpairs exceed residual tolerance {tol:g}", worst)
    logger.debug("eigenbasis n=%d k=%d method=%s residual=%.2e", n, k, method, worst)
    return SpectralBasis(evecs=evecs, evals=evals, mass=np.asarray(mass, dtype=np.float64))


def mesh_eigenbasis(mesh, k, **kwargs):
    return eigenbasis(build_laplacian(mesh), k, **kwargs)


def project(basis, f):
    """Spectral coefficients ``Phi^T M f`` of per-vertex functions ``f``."""
    f = np.asarray(f, dtype=np.float64)
    vec = f.ndim == 1
    if vec:
        f = f[:, None]
    if f.shape[0] != basis.n:
        raise ValueError(f"function has {f.shape[0]} rows, basis has {basis.n} vertices")
    out = basis.evecs.T @ (basis.mass[:, None] * f)
    return out[:, 0] if vec else out


def reconstruct(basis, a):
    """Per-vertex functions ``Phi a`` from spectral coefficients."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[0] != basis.k:
        raise ValueError(f"coefficients have {a.shape[0]} rows, basis has k={basis.k}")
    return basis.evecs @ a
