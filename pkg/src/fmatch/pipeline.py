"""Shape preparation with on-disk caches, and the match / partial-match compositions."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__, io
from .config import canonical_json
from .descriptors import (
    DescriptorSet,
    combine,
    concatenate,
    default_hks_times,
    default_wks_energies,
    hks,
    positional,
    wks,
)
from .fmap import FmapSolveOptions, solve_fmap, total_loss
from .mesh import load_mesh, normalize_pose
from .p2p import fmap_to_p2p, zoomout
from .partial import PartialConfig, estimate_rank, offdiag_energy, partial_p2p, solve_alignment
from .spectral import SpectralBasis, mesh_eigenbasis, project

logger = logging.getLogger(__name__)

CACHE_ENV = "FMATCH_CACHE_DIR"


class CacheWarning(UserWarning):
    pass


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def default_cache_dir():
    return Path(os.environ.get(CACHE_ENV, ".fmatch-cache"))


@dataclass(eq=False)
class ShapeData:
    path: Path
    mesh: object
    basis: SpectralBasis
    descriptors: DescriptorSet
    cache_status: str = "computed"  # hit | computed | recomputed


def compute_descriptors(mesh, basis, dcfg, k_desc):
    b = basis.truncated(min(k_desc, basis.k))
    parts = []
    if dcfg.hks:
        parts.append(hks(b, default_hks_times(b.evals, dcfg.hks)))
    if dcfg.wks:
        energies, sigma = default_wks_energies(b.evals, dcfg.wks)
        parts.append(wks(b, energies, sigma))
    if dcfg.positional:
        parts.append(positional(mesh.vertices, n_anchors=dcfg.positional, scale=dcfg.positional_scale))
    return concatenate(*parts)


def load_prepared_mesh(path, cfg):
    mesh = load_mesh(path)
    if cfg.pose is not None:
        mesh, _ = normalize_pose(mesh, cfg.pose.up, cfg.pose.forward)
    return mesh


def _cache_params(cfg, k_desc):
    return {
        "k_desc": k_desc,
        "descriptors": asdict(cfg.descriptors),
        "pose": None if cfg.pose is None else asdict(cfg.pose),
    }


def _read_cache(stem, mesh_sha, params, k_basis):
    """Return ``(basis, values)`` or ``None``; raise ``CacheFormatError`` on corruption."""
    meta_path = stem.with_suffix(".json")
    basis_path = stem.with_suffix(".fmsb")
    desc_path = stem.with_suffix(".desc.fmmat")
    if not meta_path.exists():
        return None
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise io.CacheFormatError(f"{meta_path}: unreadable sidecar") from exc
    if meta.get("mesh_sha256") != mesh_sha or meta.get("params") != params:
        return None
    if meta.get("k", 0) < k_basis:
        return None
    for p, key in ((basis_path, "basis_sha256"), (desc_path, "desc_sha256")):
        if not p.exists() or sha256_file(p) != meta.get(key):
            raise io.CacheFormatError(f"{p}: content hash does not match the sidecar")
    mass, evals, evecs = io.basis_from_bytes(basis_path.read_bytes(), str(basis_path))
    values = io.load_matrix(desc_path)
    return SpectralBasis(evecs, evals, mass), values


def prepare_shape(path, cfg, k_basis, k_desc, cache_dir=None):
    """Load a mesh with its eigenbasis and base descriptors, using the cache when fresh."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {path}")
    cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    mesh = load_prepared_mesh(path, cfg)
    mesh_sha = sha256_file(path)
    params = _cache_params(cfg, k_desc)
    key = sha256_bytes((mesh_sha + canonical_json(params)).encode())[:24]
    stem = cache_dir / f"{path.stem}-{key}"
    status = "computed"
    try:
        cached = _read_cache(stem, mesh_sha, params, k_basis)
    except io.CacheFormatError as exc:
        warnings.warn(f"corrupted cache for {path}, recomputing: {exc}", CacheWarning, stacklevel=2)
        logger.warning("corrupted cache for %s, recomputing", path)
        cached = None
        status = "recomputed"
    if cached is not None:
        basis, values = cached
        logger.info("cache hit: %s", path)
        desc = DescriptorSet(values, tuple(f"base_{i}" for i in range(values.shape[1])), "external")
        return ShapeData(path, mesh, basis, desc, "hit")

    basis = mesh_eigenbasis(mesh, k_basis)
    desc = compute_descriptors(mesh, basis, cfg.descriptors, k_desc)
    basis_bytes = io.basis_to_bytes(basis.mass, basis.evals, basis.evecs)
    desc_bytes = io.matrix_to_bytes(desc.values)
    io.atomic_write_bytes(stem.with_suffix(".fmsb"), basis_bytes)
    io.atomic_write_bytes(stem.with_suffix(".desc.fmmat"), desc_bytes)
    meta = {
        "mesh": path.name,
        "mesh_sha256": mesh_sha,
        "params": params,
        "k": basis.k,
        "n": basis.n,
        "basis_sha256": sha256_bytes(basis_bytes),
        "desc_sha256": sha256_bytes(desc_bytes),
        "version": __version__,
    }
    io.atomic_write_text(stem.with_suffix(".json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")
    logger.info("precomputed %s: n=%d k=%d d=%d", path, basis.n, basis.k, desc.d)
    return ShapeData(path, mesh, basis, desc, status)


def prepare_many(paths, cfg, k_basis, k_desc, cache_dir=None, jobs=1):
    def one(p):
        return prepare_shape(p, cfg, k_basis, k_desc, cache_dir)

    if jobs <= 1 or len(paths) <= 1:
        return [one(p) for p in paths]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, paths))


def _descriptor_values(shape, weights):
    if weights is None:
        return shape.descriptors.values
    return combine(shape.descriptors, weights).values


@dataclass
class MatchResult:
    C: np.ndarray
    assignment: np.ndarray
    loss: object  # LossReport


def match_shapes(source, target, cfg, weights=None):
    """Estimate ``C`` (source -> target), optionally refine, recover the pointwise map."""
    k = cfg.k
    b1, b2 = source.basis.truncated(k), target.basis.truncated(k)
    A = project(b1, _descriptor_values(source, weights))
    B = project(b2, _descriptor_values(target, weights))
    opts = FmapSolveOptions(alpha=cfg.alpha, mode=cfg.mode)
    C12 = solve_fmap(A, B, opts, b1.evals, b2.evals)
    C21 = solve_fmap(B, A, opts, b2.evals, b1.evals)
    loss = total_loss(C12, C21, b1.evals, b2.evals, cfg.loss_weights)
    if cfg.refine:
        C, pmap = zoomout(C12, source.basis, target.basis, cfg.zoomout.k_final, cfg.zoomout.step)
    else:
        C, pmap = C12, fmap_to_p2p(C12, b1, b2)
    return MatchResult(C.C, pmap.assignment, loss)


@dataclass
class PartialMatchResult:
    X: np.ndarray
    r: int
    assignment: np.ndarray
    offdiag: float


def partial_match_shapes(full, part, cfg, weights=None):
    pcfg = PartialConfig(k_p=cfg.k_partial, k_f=cfg.k_partial, rank_cap=cfg.rank_cap)
    bf = full.basis.truncated(cfg.k_partial)
    bp = part.basis.truncated(cfg.k_partial)
    r = estimate_rank(bp.evals, bf.evals, pcfg)
    A = project(bf, _descriptor_values(full, weights))
    B = project(bp, _descriptor_values(part, weights))
    X = solve_alignment(A, B, r)
    pmap = partial_p2p(bf, bp, X)
    return PartialMatchResult(X.X, r, pmap.assignment, offdiag_energy(X, bp.evals))


def write_manifest(out_dir, command, cfg, inputs, outputs, extra=None):
    """Record config hash, input and output hashes and tool version (no timestamps)."""
    manifest = {
        "tool": "fmatch",
        "version": __version__,
        "command": command,
        "seed": cfg.training.seed,
        "config_sha256": cfg.sha256(),
        "config": cfg.to_dict(),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = Path(out_dir) / "manifest.json"
    io.atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
