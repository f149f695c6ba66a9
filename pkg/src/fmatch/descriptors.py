"""Probe functions: HKS, WKS, positional features, external files, linear combination."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io

SOURCES = ("hks", "wks", "positional", "external", "combined")
ZERO_EIGENVALUE = 1e-8


class DescriptorError(ValueError):
    pass


class RankWarning(UserWarning):
    """A descriptor or coefficient matrix is rank deficient."""


@dataclass(frozen=True, eq=False)
class DescriptorSet:
    values: np.ndarray
    labels: tuple
    source: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] < 1:
            raise DescriptorError(f"descriptor values must be (n, d>=1), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            r, c = np.argwhere(~np.isfinite(vals))[0]
            raise DescriptorError(f"non-finite descriptor value at row {r}, column {c}")
        if len(self.labels) != vals.shape[1]:
            raise DescriptorError(f"{len(self.labels)} labels for {vals.shape[1]} columns")
        if self.source not in SOURCES:
            raise DescriptorError(f"unknown descriptor source {self.source!r}")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]


def concatenate(*sets):
    """Stack descriptor sets column-wise; the result is marked ``external`` if sources differ."""
    sources = {s.source for s in sets}
    source = sources.pop() if len(sources) == 1 else "external"
    labels = tuple(lab for s in sets for lab in s.labels)
    return DescriptorSet(np.hstack([s.values for s in sets]), labels, source)


def mass_normalize(values, mass):
    """Divide each column by its mass-weighted L2 norm."""
    norms = np.sqrt(np.einsum("ij,i,ij->j", values, mass, values))
    return values / np.where(norms > 0, norms, 1.0)


def default_hks_times(evals, n_times=16):
    """Log-spaced times on ``[4 ln 10 / lambda_max, 4 ln 10 / lambda_1]``."""
    pos = np.sort(np.abs(np.asarray(evals)))
    pos = pos[pos > ZERO_EIGENVALUE]
    if pos.size == 0:
        raise DescriptorError("no nonzero eigenvalue to derive HKS times from")
    return np.geomspace(4 * np.log(10) / pos[-1], 4 * np.log(10) / pos[0], n_times)


def default_wks_energies(evals, n_energies=16):
    """Energies linear in ``log lambda`` with ``sigma = 7 * range / n_energies``."""
    pos = np.asarray(evals)
    pos = pos[pos > ZERO_EIGENVALUE]
    if pos.size == 0:
        raise DescriptorError("WKS needs at least one eigenvalue above 1e-8")
    e_min, e_max = np.log(pos.min()), np.log(pos.max())
    span = e_max - e_min
    sigma = 7.0 * span / n_energies if span > 0 else 1.0
    return np.linspace(e_min, e_max, n_energies), sigma


def hks(basis, times=None, normalize=True):
    """Heat kernel signature ``sum_i exp(-lambda_i t) phi_i(v)^2``, one column per time."""
    if times is None:
        times = default_hks_times(basis.evals)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if times.size == 0 or np.any(times <= 0):
        raise DescriptorError("HKS times must be nonempty and positive")
    weights = np.exp(-np.outer(basis.evals, times))  # (k, T)
    values = np.square(basis.evecs) @ weights
    if normalize:
        values = mass_normalize(values, basis.mass)
    return DescriptorSet(values, tuple(f"hks_t{t:.6g}" for t in times), "hks")


def wks(basis, energies=None, sigma=None, normalize=True):
    """Wave kernel signature on log-eigenvalues, skipping eigenvalues <= 1e-8."""
    if basis.k < 2:
        raise DescriptorError("WKS needs k >= 2")
    if energies is None:
        energies, auto_sigma = default_wks_energies(basis.evals)
        sigma = auto_sigma if sigma is None else sigma
    energies = np.atleast_1d(np.asarray(energies, dtype=np.float64))
    if energies.size == 0:
        raise DescriptorError("WKS energies must be nonempty")
    if sigma is None or not sigma > 0:
        raise DescriptorError("WKS sigma must be positive")
    keep = basis.evals > ZERO_EIGENVALUE
    if not keep.any():
        raise DescriptorError("all eigenvalues are <= 1e-8; WKS is undefined")
    log_ev = np.log(basis.evals[keep])
    gauss = np.exp(-np.square(energies[None, :] - log_ev[:, None]) / (2 * sigma**2))  # (k', E)
    values = (np.square(basis.evecs[:, keep]) @ gauss) / gauss.sum(axis=0)
    if normalize:
        values = mass_normalize(values, basis.mass)
    return DescriptorSet(values, tuple(f"wks_e{e:.6g}" for e in energies), "wks")


def fibonacci_sphere(count):
    """``count`` nearly uniform unit directions (deterministic)."""
    i = np.arange(count) + 0.5
    polar = np.arccos(1 - 2 * i / count)
    azim = np.pi * (1 + 5**0.5) * i
    return np.column_stack([np.cos(azim) * np.sin(polar), np.cos(polar), np.sin(azim) * np.sin(polar)])


def positional(vertices, mass=None, n_anchors=256, scale=1.0, bandwidth=None, normalize=False):
    """Gaussian bumps around fixed anchors in the ambient frame.

    Only meaningful for shapes sharing a rigid frame (consistent up and
    forward axes). Anchors lie on spheres of radius ``scale`` and
    ``scale / 2`` around the origin; ``bandwidth`` defaults to ``0.2 * scale``.
    Values are left unnormalized by default: per-shape normalization would
    rescale a cropped shape differently from its full counterpart.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    outer = fibonacci_sphere(n_anchors - n_anchors // 2) * scale
    inner = fibonacci_sphere(n_anchors // 2) * (0.5 * scale)
    anchors = np.vstack([outer, inner])
    if bandwidth is None:
        bandwidth = 0.2 * scale
    d2 = np.square(vertices[:, None, :] - anchors[None, :, :]).sum(-1)
    values = np.exp(-d2 / (2 * bandwidth**2))
    if normalize:
        if mass is None:
            raise DescriptorError("mass-normalizing positional features needs the vertex masses")
        values = mass_normalize(values, mass)
    return DescriptorSet(values, tuple(f"pos_{i}" for i in range(len(anchors))), "positional")


def load_descriptors(path, mesh=None, n=None, header=False):
    """Read an ``n x d`` descriptor matrix from CSV or FMMAT1.

    The expected row count comes from ``mesh`` or ``n``.
    """
    path = Path(path)
    if n is None and mesh is not None:
        n = mesh.n_vertices
    if io.is_matrix_file(path):
        values = io.load_matrix(path)
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            r, c = bad[0]
            raise DescriptorError(f"{path}: non-finite value at row {r}, column {c}")
    else:
        rows = []
        with open(path, newline="") as f:
            reader = csv.reader(f)
            if header:
                next(reader, None)
            for r, row in enumerate(reader):
                if not row:
                    continue
                try:
                    vals = [float(x) for x in row]
                except ValueError:
                    raise DescriptorError(f"{path}: row {r} is not numeric") from None
                for c, x in enumerate(vals):
                    if not np.isfinite(x):
                        raise DescriptorError(f"{path}: non-finite value {row[c]!r} at row {r}, column {c}")
                if rows and len(vals) != len(rows[0]):
                    raise DescriptorError(f"{path}: row {r} has {len(vals)} columns, expected {len(rows[0])}")
                rows.append(vals)
        if not rows:
            raise DescriptorError(f"{path}: no descriptor rows")
        values = np.asarray(rows, dtype=np.float64)
    if n is not None and values.shape[0] != n:
        raise DescriptorError(f"{path}: file has {values.shape[0]} rows but the mesh has {n} vertices")
    return DescriptorSet(values, tuple(f"ext_{i}" for i in range(values.shape[1])), "external")


@dataclass(frozen=True, eq=False)
class CombinationWeights:
    """Linear map ``d_in -> d_out`` shared by every shape (siamese)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or not np.all(np.isfinite(m)):
            raise DescriptorError("combination weights must be a finite 2-D matrix")
        object.__setattr__(self, "matrix", m)

    @property
    def d_in(self):
        return self.matrix.shape[0]

    @property
    def d_out(self):
        return self.matrix.shape[1]

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d))

    @classmethod
    def random(cls, d_in, d_out, seed=0):
        """Identity on the leading block plus small Gaussian noise."""
        rng = np.random.default_rng(seed)
        m = np.eye(d_in, d_out) + 0.1 * rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)
        return cls(m)


def combine(desc, weights):
    """Apply ``weights`` to the descriptor columns (``values @ matrix``)."""
    w = weights.matrix if isinstance(weights, CombinationWeights) else np.asarray(weights)
    if w.shape[0] != desc.d:
        raise DescriptorError(f"weights have {w.shape[0]} rows, descriptors have {desc.d} columns")
    values = desc.values @ w
    if not np.any(w):
        warnings.warn("combination weights are zero; descriptors vanish", RankWarning, stacklevel=2)
    return DescriptorSet(values, tuple(f"comb_{j}" for j in range(w.shape[1])), "combined")
