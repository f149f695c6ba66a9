"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import scipy.linalg

from . import __version__, io
from .config import ConfigError, load_config
from .descriptors import CombinationWeights, DescriptorError
from .evaluation import evaluate_map
from .fmap import FmapError, LossReport, ShapePair, TrainingDivergedError, train_weights
from .mesh import MeshError, load_mesh
from .partial import DisjointSpectraError, PartialConfig, PartialPair, partial_train_weights
from .pipeline import (
    match_shapes,
    partial_match_shapes,
    prepare_many,
    write_manifest,
)
from .report import write_report
from .spectral import EigenSolverError

logger = logging.getLogger("fmatch")

EXIT_INPUT = 2
EXIT_NUMERIC = 3


class ManifestError(ValueError):
    pass


def _add_common(p):
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--k", type=int, help="spectral basis size")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None, help="worker threads")
    p.add_argument("--cache-dir", type=Path, default=None,
                   help="cache directory (default: $FMATCH_CACHE_DIR or ./.fmatch-cache)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _add_match_flags(p):
    p.add_argument("--alpha", type=float, help="Laplacian-commutativity weight")
    p.add_argument("--mode", choices=["plain_lsq", "commutativity_weighted"])
    p.add_argument("--refine", action="store_true", default=None, help="run ZoomOut")
    p.add_argument("--k-final", type=int, help="ZoomOut final size")
    p.add_argument("--step", type=int, help="ZoomOut step")
    p.add_argument("--weights", type=Path, help="FMMAT1 descriptor combination weights")


def build_parser():
    parser = argparse.ArgumentParser(prog="fmatch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fmatch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precompute", help="eigenbasis and descriptor caches")
    p.add_argument("meshes", nargs="+", type=Path)
    p.add_argument("--refine", action="store_true", default=None,
                   help="store enough eigenpairs for ZoomOut")
    p.add_argument("--k-final", type=int)
    p.add_argument("--partial", action="store_true", help="prepare for partial matching")
    _add_common(p)

    p = sub.add_parser("match", help="full-to-full functional map and pointwise map")
    p.add_argument("source", type=Path)
    p.add_argument("target", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _add_match_flags(p)
    _add_common(p)

    p = sub.add_parser("partial-match", help="partial-to-full alignment and pointwise map")
    p.add_argument("full", type=Path)
    p.add_argument("partial", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--weights", type=Path)
    p.add_argument("--rank-cap", type=int)
    _add_common(p)

    p = sub.add_parser("train-weights", help="learn descriptor combination weights")
    p.add_argument("--manifest", type=Path, required=True,
                   help="JSON list of [source, target] (or [full, partial] with --partial)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--partial", action="store_true")
    p.add_argument("--d-out", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    _add_common(p)

    p = sub.add_parser("eval", help="geodesic error report of point maps")
    p.add_argument("pred", type=Path, nargs="?")
    p.add_argument("gt", type=Path, nargs="?")
    p.add_argument("mesh", type=Path, nargs="?", help="source mesh of the maps")
    p.add_argument("--manifest", type=Path, help="JSON list of {id, pred, gt, mesh}")
    p.add_argument("--id", default=None)
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)
    return parser


def _config(args):
    overrides = {
        "k": getattr(args, "k", None),
        "alpha": getattr(args, "alpha", None),
        "mode": getattr(args, "mode", None),
        "refine": getattr(args, "refine", None),
        "zoomout.k_final": getattr(args, "k_final", None),
        "zoomout.step": getattr(args, "step", None),
        "rank_cap": getattr(args, "rank_cap", None),
        "training.seed": getattr(args, "seed", None),
        "training.steps": getattr(args, "steps", None),
        "training.lr": getattr(args, "lr", None),
        "training.batch": getattr(args, "batch", None),
        "training.d_out": getattr(args, "d_out", None),
        "jobs": getattr(args, "jobs", None),
    }
    return load_config(args.config, overrides)


def _weights(path):
    if path is None:
        return None
    return CombinationWeights(io.load_matrix(path))


def _pair_paths(manifest_path, keys):
    try:
        data = json.loads(Path(manifest_path).read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(data, list) or not data:
        raise ManifestError(f"{manifest_path}: expected a nonempty JSON list of pairs")
    base = Path(manifest_path).parent
    pairs = []
    for i, item in enumerate(data):
        if isinstance(item, dict):
            missing = [k for k in keys if k not in item]
            if missing:
                raise ManifestError(f"{manifest_path}: entry {i} is missing field {missing[0]!r}")
            vals = [item[k] for k in keys]
        elif isinstance(item, list) and len(item) == len(keys):
            vals = item
        else:
            raise ManifestError(
                f"{manifest_path}: entry {i} must be an object with fields {list(keys)} "
                f"or a list of {len(keys)} paths"
            )
        for k, v in zip(keys, vals):
            if not isinstance(v, str):
                raise ManifestError(f"{manifest_path}: entry {i} field {k!r} must be a path string")
        pairs.append(tuple(base / v for v in vals))
    return pairs


def cmd_precompute(args, cfg):
    k_basis = cfg.k_match_basis
    k_desc = cfg.k
    if args.partial:
        k_basis = k_desc = cfg.k_partial
    shapes = prepare_many(args.meshes, cfg, k_basis, k_desc, args.cache_dir, cfg.jobs)
    for s in shapes:
        print(f"{s.path}\t{s.cache_status}\tn={s.basis.n}\tk={s.basis.k}\td={s.descriptors.d}")
    return 0


def cmd_match(args, cfg):
    weights = _weights(args.weights)
    src, tgt = prepare_many([args.source, args.target], cfg, cfg.k_match_basis, cfg.k,
                            args.cache_dir, cfg.jobs)
    result = match_shapes(src, tgt, cfg, weights)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    c_path, p_path, l_path = out / "fmap.fmmat", out / "p2p.txt", out / "loss.csv"
    io.save_matrix(c_path, result.C)
    io.atomic_write_text(p_path, io.format_point_map(result.assignment, args.source.stem, args.target.stem))
    io.atomic_write_text(l_path, LossReport.CSV_HEADER + "\n" + result.loss.csv_row() + "\n")
    inputs = [args.source, args.target] + ([args.weights] if args.weights else [])
    write_manifest(out, "match", cfg, inputs, [c_path, p_path, l_path],
                   {"map_direction": "target vertex -> source vertex"})
    print(f"loss {result.loss.csv_row()}")
    return 0


def cmd_partial_match(args, cfg):
    weights = _weights(args.weights)
    full, part = prepare_many([args.full, args.partial], cfg, cfg.k_partial, cfg.k_partial,
                              args.cache_dir, cfg.jobs)
    result = partial_match_shapes(full, part, cfg, weights)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    x_path, side, p_path, e_path = out / "X.fmmat", out / "X.json", out / "p2p.txt", out / "offdiag.csv"
    io.save_matrix(x_path, result.X)
    io.atomic_write_text(side, json.dumps({"r": result.r, "k_p": int(result.X.shape[0])}, sort_keys=True) + "\n")
    io.atomic_write_text(p_path, io.format_point_map(result.assignment, args.full.stem, args.partial.stem))
    io.atomic_write_text(e_path, f"r,offdiag\n{result.r},{result.offdiag!r}\n")
    inputs = [args.full, args.partial] + ([args.weights] if args.weights else [])
    write_manifest(out, "partial-match", cfg, inputs, [x_path, side, p_path, e_path],
                   {"map_direction": "partial vertex -> full vertex"})
    print(f"r={result.r} offdiag={result.offdiag!r}")
    return 0


def cmd_train_weights(args, cfg):
    t = cfg.training
    if args.partial:
        paths = _pair_paths(args.manifest, ("full", "partial"))
        k_basis = k_desc = cfg.k_partial
    else:
        paths = _pair_paths(args.manifest, ("source", "target"))
        k_basis = k_desc = cfg.k
    unique = sorted({p for pair in paths for p in pair}, key=str)
    shapes = dict(zip(unique, prepare_many(unique, cfg, k_basis, k_desc, args.cache_dir, cfg.jobs)))
    if args.partial:
        pcfg = PartialConfig(k_p=cfg.k_partial, k_f=cfg.k_partial, rank_cap=cfg.rank_cap)
        pairs = [PartialPair.from_bases(shapes[a].basis, shapes[b].basis, shapes[a].descriptors,
                                        shapes[b].descriptors, pcfg, name=f"{a.stem}:{b.stem}")
                 for a, b in paths]
        result = partial_train_weights(pairs, t.d_out, t.lr, t.steps, t.batch, t.seed)
    else:
        pairs = [ShapePair.from_bases(shapes[a].basis, shapes[b].basis, shapes[a].descriptors,
                                      shapes[b].descriptors, k=cfg.k, name=f"{a.stem}:{b.stem}")
                 for a, b in paths]
        result = train_weights(pairs, t.d_out, t.lr, t.steps, t.batch, t.seed,
                               loss_weights=cfg.loss_weights)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    w_path, tr_path = out / "weights.fmmat", out / "trace.csv"
    io.save_matrix(w_path, result.weights.matrix)
    rows = ["iteration,loss"] + [f"{i},{v!r}" for i, v in enumerate(result.trace)]
    io.atomic_write_text(tr_path, "\n".join(rows) + "\n")
    write_manifest(out, "train-weights", cfg, [args.manifest] + unique, [w_path, tr_path],
                   {"initial_loss": result.initial_loss, "final_loss": result.final_loss,
                    "partial": bool(args.partial)})
    print(f"loss {result.initial_loss!r} -> {result.final_loss!r}")
    return 0


def _read_map(path):
    values, _, _ = io.parse_point_map(Path(path).read_text(), str(path))
    return values


def cmd_eval(args, cfg):
    if args.manifest is not None:
        try:
            items = json.loads(args.manifest.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{args.manifest}: invalid JSON ({exc})") from exc
        if not isinstance(items, list) or not items:
            raise ManifestError(f"{args.manifest}: expected a nonempty JSON list")
        base = args.manifest.parent
        jobs = []
        for i, item in enumerate(items):
            if not isinstance(item, dict):
                raise ManifestError(f"{args.manifest}: entry {i} must be an object")
            for key in ("pred", "gt", "mesh"):
                if not isinstance(item.get(key), str):
                    raise ManifestError(f"{args.manifest}: entry {i} is missing field {key!r}")
            jobs.append((str(item.get("id", i)), base / item["pred"], base / item["gt"], base / item["mesh"]))
    else:
        if args.pred is None or args.gt is None or args.mesh is None:
            raise ManifestError("eval needs PRED GT MESH or --manifest")
        jobs = [(args.id or args.pred.stem, args.pred, args.gt, args.mesh)]

    meshes = {}
    summaries = []
    for pair_id, pred, gt, mesh_path in jobs:
        if mesh_path not in meshes:
            meshes[mesh_path] = load_mesh(mesh_path)
        summaries.append(evaluate_map(_read_map(pred), _read_map(gt), meshes[mesh_path], pair_id=pair_id))
    paths = write_report(summaries, args.out, metadata={"normalization": "sqrt(source area)",
                                                        "distance": "edge-graph dijkstra"})
    inputs = sorted({p for _, a, b, c in jobs for p in (a, b, c)}, key=str)
    write_manifest(args.out, "eval", cfg, inputs, list(paths))
    for s in summaries:
        print(f"{s.pair_id}\tmean_x100={s.mean_x100:.6g}")
    return 0


COMMANDS = {
    "precompute": cmd_precompute,
    "match": cmd_match,
    "partial-match": cmd_partial_match,
    "train-weights": cmd_train_weights,
    "eval": cmd_eval,
}

INPUT_ERRORS = (OSError, MeshError, DescriptorError, ConfigError, ManifestError, io.CacheFormatError,
                io.PointMapFormatError, DisjointSpectraError, FmapError, ValueError)
NUMERIC_ERRORS = (EigenSolverError, TrainingDivergedError, FloatingPointError,
                  np.linalg.LinAlgError, scipy.linalg.LinAlgError)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except NUMERIC_ERRORS as exc:
        print(f"fmatch: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        print(f"fmatch: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
