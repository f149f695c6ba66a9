"""Binary matrix/basis containers and point-map text files.

Both binary containers are little-endian: a magic string, two ``uint64``
dimensions, then ``float64`` payload in row-major order.

``FMMAT1`` : magic, rows, cols, matrix.
``FMSB1``  : magic, n, k, mass diagonal (n), eigenvalues (k), eigenvectors (n x k).
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MATRIX_MAGIC = b"FMMAT1"
BASIS_MAGIC = b"FMSB1"
_DIMS = struct.Struct("<QQ")
_F64 = np.dtype("<f8")


class CacheFormatError(ValueError):
    """A binary container is truncated, has the wrong magic or bad sizes."""


def atomic_write_bytes(path, data):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def matrix_to_bytes(mat):
    mat = np.asarray(mat, dtype=_F64)
    if mat.ndim == 1:
        mat = mat[:, None]
    if mat.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {mat.shape}")
    return MATRIX_MAGIC + _DIMS.pack(*mat.shape) + np.ascontiguousarray(mat).tobytes()


def matrix_from_bytes(data, source="<bytes>"):
    head = len(MATRIX_MAGIC) + _DIMS.size
    if data[: len(MATRIX_MAGIC)] != MATRIX_MAGIC:
        raise CacheFormatError(f"{source}: not an FMMAT1 file")
    if len(data) < head:
        raise CacheFormatError(f"{source}: truncated header")
    rows, cols = _DIMS.unpack_from(data, len(MATRIX_MAGIC))
    expected = head + 8 * rows * cols
    if len(data) != expected:
        raise CacheFormatError(f"{source}: expected {expected} bytes for {rows}x{cols}, got {len(data)}")
    return np.frombuffer(data, dtype=_F64, offset=head).reshape(rows, cols).astype(np.float64)


def save_matrix(path, mat):
    atomic_write_bytes(path, matrix_to_bytes(mat))


def load_matrix(path):
    return matrix_from_bytes(Path(path).read_bytes(), source=str(path))


def is_matrix_file(path):
    with open(path, "rb") as f:
        return f.read(len(MATRIX_MAGIC)) == MATRIX_MAGIC


def basis_to_bytes(mass, evals, evecs):
    mass = np.asarray(mass, dtype=_F64).ravel()
    evals = np.asarray(evals, dtype=_F64).ravel()
    evecs = np.ascontiguousarray(evecs, dtype=_F64)
    n, k = evecs.shape
    if mass.shape != (n,) or evals.shape != (k,):
        raise ValueError("inconsistent basis arrays")
    return BASIS_MAGIC + _DIMS.pack(n, k) + mass.tobytes() + evals.tobytes() + evecs.tobytes()


def basis_from_bytes(data, source="<bytes>"):
    """Return ``(mass, evals, evecs)`` parsed from an FMSB1 payload."""
    head = len(BASIS_MAGIC) + _DIMS.size
    if data[: len(BASIS_MAGIC)] != BASIS_MAGIC:
        raise CacheFormatError(f"{source}: not an FMSB1 file")
    if len(data) < head:
        raise CacheFormatError(f"{source}: truncated header")
    n, k = _DIMS.unpack_from(data, len(BASIS_MAGIC))
    expected = head + 8 * (n + k + n * k)
    if len(data) != expected:
        raise CacheFormatError(f"{source}: expected {expected} bytes for n={n}, k={k}, got {len(data)}")
    flat = np.frombuffer(data, dtype=_F64, offset=head).astype(np.float64)
    return flat[:n], flat[n : n + k], flat[n + k :].reshape(n, k)


# ---------------------------------------------------------------------------
# point maps


class PointMapFormatError(ValueError):
    pass


def format_point_map(assignment, source="source", target="target"):
    assignment = np.asarray(assignment, dtype=np.int64)
    lines = [f"# p2p {source} {target} {len(assignment)}"]
    lines.extend(str(int(i)) for i in assignment)
    return "\n".join(lines) + "\n"


def parse_point_map(text, source_name="<text>"):
    """Return ``(assignment, source_id, target_id)``.

    The header line is optional; when present its count must match.
    """
    src = tgt = None
    declared = None
    values = []
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            tok = line[1:].split()
            if tok and tok[0] == "p2p":
                if len(tok) != 4:
                    raise PointMapFormatError(f"{source_name}:{num}: malformed header {line!r}")
                src, tgt = tok[1], tok[2]
                declared = int(tok[3])
            continue
        try:
            idx = int(line)
        except ValueError:
            raise PointMapFormatError(f"{source_name}:{num}: not an integer index: {line!r}") from None
        if idx < 0:
            raise PointMapFormatError(f"{source_name}:{num}: negative index {idx}")
        values.append(idx)
    if declared is not None and declared != len(values):
        raise PointMapFormatError(
            f"{source_name}: header declares {declared} entries, found {len(values)}"
        )
    return np.asarray(values, dtype=np.int64), src, tgt
