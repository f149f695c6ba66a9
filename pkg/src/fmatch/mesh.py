"""Triangle meshes: representation, OFF/OBJ/PLY I/O, areas and pose normalization."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

logger = logging.getLogger(__name__)

FORMATS = ("off", "obj", "ply")


class MeshError(ValueError):
    """Base class for invalid mesh content."""


class MeshLoadError(MeshError):
    """A mesh file could not be turned into a valid :class:`TriMesh`.

    ``path`` and ``line`` (1-based, when known) locate the problem.
    """

    def __init__(self, message, path=None, line=None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if self.path is not None:
            where = self.path if line is None else f"{self.path}:{line}"
            where += ": "
        super().__init__(where + message)


class MeshParseError(MeshLoadError):
    pass


class MeshIndexError(MeshLoadError):
    pass


class DegenerateTriangleError(MeshLoadError):
    pass


class MeshConnectivityError(MeshLoadError):
    def __init__(self, message, component_sizes=(), path=None):
        self.component_sizes = tuple(int(s) for s in component_sizes)
        super().__init__(message, path=path)


class IsolatedVertexWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable triangle mesh.

    Parameters
    ----------
    vertices : (n, 3) float array
    triangles : (m, 3) int array of 0-based vertex indices
    normals : (n, 3) float array, optional
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        t = np.array(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (n, 3), got {v.shape}")
        if t.size == 0:
            t = t.reshape(0, 3)
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must have shape (m, 3), got {t.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshError("vertices contain non-finite coordinates")
        n = len(v)
        if t.size:
            bad = np.flatnonzero((t < 0).any(axis=1) | (t >= n).any(axis=1))
            if bad.size:
                f = int(bad[0])
                raise MeshIndexError(
                    f"triangle {f} has index out of range [0, {n}): {t[f].tolist()}"
                )
            degen = np.flatnonzero(
                (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
            )
            if degen.size:
                f = int(degen[0])
                raise DegenerateTriangleError(
                    f"triangle {f} repeats a vertex index: {t[f].tolist()}"
                )
        nrm = None
        if self.normals is not None:
            nrm = np.array(self.normals, dtype=np.float64)
            if nrm.shape != v.shape:
                raise MeshError(f"normals shape {nrm.shape} does not match vertices {v.shape}")
            nrm.setflags(write=False)
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "normals", nrm)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def edges(self):
        """Unique undirected edges as an (e, 2) array with ``i < j``."""
        if "edges" not in self._cache:
            t = self.triangles
            e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            e.sort(axis=1)
            e = np.unique(e, axis=0)
            e.setflags(write=False)
            self._cache["edges"] = e
        return self._cache["edges"]

    def adjacency(self):
        """Symmetric sparse matrix of Euclidean edge lengths."""
        e = self.edges()
        lengths = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
        n = self.n_vertices
        adj = sparse.coo_matrix((lengths, (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
        return (adj + adj.T).tocsr()

    def face_areas(self):
        v = self.vertices
        t = self.triangles
        cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def total_area(self):
        return float(self.face_areas().sum())

    def component_sizes(self):
        """Sizes of the connected components of the edge graph, largest first."""
        n = self.n_vertices
        e = self.edges()
        graph = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        _, labels = csgraph.connected_components(graph, directed=False)
        return sorted(np.bincount(labels).tolist(), reverse=True)

    def check_connected(self, path=None):
        sizes = self.component_sizes()
        if len(sizes) > 1:
            raise MeshConnectivityError(
                f"edge graph has {len(sizes)} connected components of sizes {sizes}",
                component_sizes=sizes,
                path=path,
            )

    def with_vertices(self, vertices, normals=None):
        return TriMesh(vertices, self.triangles, normals=normals, name=self.name)


def vertex_areas(mesh):
    """Lumped per-vertex area: one third of the incident triangle areas.

    Vertices touched by no triangle get ``1e-12 * total_area`` and an
    :class:`IsolatedVertexWarning` is emitted.
    """
    n = mesh.n_vertices
    fa = mesh.face_areas() / 3.0
    areas = np.zeros(n)
    for c in range(3):
        np.add.at(areas, mesh.triangles[:, c], fa)
    isolated = areas <= 0
    if isolated.any():
        total = fa.sum() * 3.0
        warnings.warn(
            f"{int(isolated.sum())} isolated vertices; area clamped to 1e-12 * total",
            IsolatedVertexWarning,
            stacklevel=2,
        )
        areas[isolated] = 1e-12 * (total if total > 0 else 1.0)
    return areas


# ---------------------------------------------------------------------------
# pose normalization

_AXES = {"x": 0, "y": 1, "z": 2}


def _axis_vector(axis):
    """Parse ``'x'``, ``'-y'``, ``'+z'`` or an int 0..2 into a signed unit vector."""
    if isinstance(axis, (int, np.integer)):
        if not 0 <= axis <= 2:
            raise ValueError(f"axis index must be 0, 1 or 2, got {axis}")
        vec = np.zeros(3)
        vec[axis] = 1.0
        return vec
    s = str(axis).strip().lower()
    sign = 1.0
    if s[:1] in "+-":
        sign = -1.0 if s[0] == "-" else 1.0
        s = s[1:]
    if s not in _AXES:
        raise ValueError(f"unknown axis id {axis!r}; expected x, y, z with optional sign")
    vec = np.zeros(3)
    vec[_AXES[s]] = sign
    return vec


@dataclass(frozen=True)
class PoseNormalization:
    """``v_out = scale * rotation @ (v_in + translation)``.

    ``rotation`` is a signed permutation matrix taking the declared up axis
    to +y and the declared forward axis to +z.
    """

    translation: np.ndarray
    scale: float
    rotation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        r = np.asarray(self.rotation, dtype=np.float64)
        if not np.allclose(r @ r.T, np.eye(3)):
            raise ValueError("rotation must be orthogonal")

    def apply(self, vertices):
        v = np.asarray(vertices, dtype=np.float64)
        return self.scale * ((v + self.translation) @ self.rotation.T)

    def apply_normals(self, normals):
        return np.asarray(normals, dtype=np.float64) @ self.rotation.T


def normalize_pose(mesh, up_axis="y", forward_axis="z"):
    """Center, scale to unit surface area and permute axes to +y up / +z forward.

    Returns
    -------
    (TriMesh, PoseNormalization)
    """
    up = _axis_vector(up_axis)
    fwd = _axis_vector(forward_axis)
    if abs(up @ fwd) > 0:
        raise ValueError(f"up axis {up_axis!r} and forward axis {forward_axis!r} must differ")
    area = mesh.total_area()
    if not area > 0:
        raise MeshError("cannot normalize a mesh with zero surface area")
    # new axes expressed in old coordinates, one per row (right-handed)
    rotation = np.vstack([np.cross(up, fwd), up, fwd])
    pose = PoseNormalization(
        translation=-mesh.vertices.mean(axis=0),
        scale=1.0 / np.sqrt(area),
        rotation=rotation,
    )
    normals = None if mesh.normals is None else pose.apply_normals(mesh.normals)
    return mesh.with_vertices(pose.apply(mesh.vertices), normals=normals), pose


# ---------------------------------------------------------------------------
# file I/O


def _infer_format(path, fmt):
    if fmt is None:
        fmt = Path(path).suffix.lstrip(".").lower()
    fmt = fmt.lower()
    if fmt == "ply-ascii":
        fmt = "ply"
    if fmt not in FORMATS:
        raise MeshParseError(f"unsupported mesh format {fmt!r}", path=path)
    return fmt


def _fan(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _data_lines(text):
    """Yield (line_number, tokens) for non-empty, non-comment lines."""
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield num, line.split()


def _read_off(path, text):
    lines = _data_lines(text)
    try:
        num, tok = next(lines)
    except StopIteration:
        raise MeshParseError("empty file", path=path) from None
    header = tok[0].upper()
    if not header.endswith("OFF"):
        raise MeshParseError(f"expected OFF header, got {tok[0]!r}", path=path, line=num)
    has_normals = header.startswith("N")
    tok = tok[1:]
    if not tok:
        try:
            num, tok = next(lines)
        except StopIteration:
            raise MeshParseError("missing counts line", path=path) from None
    try:
        n_v, n_f = int(tok[0]), int(tok[1])
    except (ValueError, IndexError):
        raise MeshParseError(f"bad counts line {' '.join(tok)!r}", path=path, line=num) from None
    verts, norms, tris = [], [], []
    for _ in range(n_v):
        try:
            num, tok = next(lines)
        except StopIteration:
            raise MeshParseError(f"expected {n_v} vertices, found {len(verts)}", path=path) from None
        try:
            verts.append([float(x) for x in tok[:3]])
            if has_normals:
                norms.append([float(x) for x in tok[3:6]])
        except ValueError:
            raise MeshParseError(f"bad vertex line {' '.join(tok)!r}", path=path, line=num) from None
        if len(verts[-1]) != 3 or (has_normals and len(norms[-1]) != 3):
            raise MeshParseError("vertex line has too few coordinates", path=path, line=num)
    for _ in range(n_f):
        try:
            num, tok = next(lines)
        except StopIteration:
            raise MeshParseError(f"expected {n_f} faces", path=path) from None
        try:
            cnt = int(tok[0])
            poly = [int(x) for x in tok[1 : 1 + cnt]]
        except ValueError:
            raise MeshParseError(f"bad face line {' '.join(tok)!r}", path=path, line=num) from None
        if cnt < 3 or len(poly) != cnt:
            raise MeshParseError(f"face needs >= 3 indices, got {' '.join(tok)!r}", path=path, line=num)
        _check_face(poly, n_v, path, num)
        tris.extend(_fan(poly))
    return verts, tris, (norms if has_normals else None)


def _check_face(poly, n_v, path, line):
    for idx in poly:
        if not 0 <= idx < n_v:
            raise MeshIndexError(
                f"face index {idx} out of range for {n_v} vertices", path=path, line=line
            )
    if len(set(poly)) != len(poly):
        raise DegenerateTriangleError(f"face repeats a vertex index: {poly}", path=path, line=line)


def _read_obj(path, text):
    verts, norms, tris, face_lines = [], [], [], []
    for num, tok in _data_lines(text):
        kind = tok[0]
        try:
            if kind == "v":
                verts.append([float(x) for x in tok[1:4]])
                if len(verts[-1]) != 3:
                    raise ValueError
            elif kind == "vn":
                norms.append([float(x) for x in tok[1:4]])
            elif kind == "f":
                face_lines.append((num, [int(x.split("/")[0]) for x in tok[1:]]))
        except ValueError:
            raise MeshParseError(f"bad {kind!r} line {' '.join(tok)!r}", path=path, line=num) from None
    n_v = len(verts)
    for num, poly in face_lines:
        if len(poly) < 3:
            raise MeshParseError("face needs >= 3 indices", path=path, line=num)
        poly = [i - 1 if i > 0 else n_v + i for i in poly]
        _check_face(poly, n_v, path, num)
        tris.extend(_fan(poly))
    return verts, tris, (norms if len(norms) == n_v and n_v else None)


def _read_ply(path, text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshParseError("expected 'ply' magic line", path=path, line=1)
    elements = []  # (name, count, [(prop_name, is_list)])
    body_start = None
    for num, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok:
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise MeshParseError(f"only ASCII PLY is supported, got {raw.strip()!r}", path=path, line=num)
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise MeshParseError("property before element", path=path, line=num)
            elements[-1][2].append((tok[-1], tok[1] == "list"))
        elif tok[0] == "end_header":
            body_start = num
            break
    if body_start is None:
        raise MeshParseError("missing end_header", path=path)
    cursor = body_start  # index into lines of the next body line (0-based)
    verts, norms, tris = [], [], []
    n_v = 0
    for name, count, props in elements:
        for _ in range(count):
            while cursor < len(lines) and not lines[cursor].strip():
                cursor += 1
            if cursor >= len(lines):
                raise MeshParseError(f"unexpected end of file in element {name!r}", path=path)
            num = cursor + 1
            tok = lines[cursor].split()
            cursor += 1
            try:
                if name == "vertex":
                    vals = dict(zip([p for p, _ in props], (float(x) for x in tok)))
                    verts.append([vals["x"], vals["y"], vals["z"]])
                    if "nx" in vals:
                        norms.append([vals["nx"], vals["ny"], vals["nz"]])
                elif name == "face":
                    cnt = int(tok[0])
                    poly = [int(x) for x in tok[1 : 1 + cnt]]
                    if cnt < 3 or len(poly) != cnt:
                        raise MeshParseError("face needs >= 3 indices", path=path, line=num)
                    _check_face(poly, n_v, path, num)
                    tris.extend(_fan(poly))
            except (ValueError, KeyError):
                raise MeshParseError(f"bad {name} line {lines[num - 1].strip()!r}", path=path, line=num) from None
        if name == "vertex":
            n_v = len(verts)
    return verts, tris, (norms if len(norms) == len(verts) and norms else None)


_READERS = {"off": _read_off, "obj": _read_obj, "ply": _read_ply}


def load_mesh(path, fmt=None, check_connected=True):
    """Read an OFF, OBJ or ASCII PLY file.

    Vertex order is kept exactly as stored in the file. Polygons with more
    than three corners are fan-triangulated.

    Raises
    ------
    MeshLoadError
        Parse failure, out-of-range or repeated face indices, or (when
        ``check_connected``) an edge graph with several components.
    """
    path = Path(path)
    fmt = _infer_format(path, fmt)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise
    except (OSError, UnicodeDecodeError) as exc:
        raise MeshParseError(f"cannot read file: {exc}", path=path) from exc
    verts, tris, norms = _READERS[fmt](path, text)
    if not tris:
        raise DegenerateTriangleError("mesh has no triangles", path=path)
    mesh = TriMesh(
        np.asarray(verts, dtype=np.float64).reshape(-1, 3),
        np.asarray(tris, dtype=np.int64),
        normals=norms,
        name=path.stem,
    )
    if check_connected:
        mesh.check_connected(path=path)
    logger.debug("loaded %s: %d vertices, %d triangles", path, mesh.n_vertices, mesh.n_triangles)
    return mesh


def _fmt_float(x):
    return repr(float(x))


def save_mesh(mesh, path, fmt=None):
    """Write ``mesh`` in ASCII OFF, OBJ or PLY with round-trip float precision."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    v, t = mesh.vertices, mesh.triangles
    out = []
    if fmt == "off":
        out.append("OFF")
        out.append(f"{len(v)} {len(t)} 0")
        out.extend(" ".join(map(_fmt_float, row)) for row in v)
        out.extend("3 " + " ".join(map(str, row)) for row in t)
    elif fmt == "obj":
        out.extend("v " + " ".join(map(_fmt_float, row)) for row in v)
        if mesh.normals is not None:
            out.extend("vn " + " ".join(map(_fmt_float, row)) for row in mesh.normals)
        out.extend("f " + " ".join(str(i + 1) for i in row) for row in t)
    else:
        has_n = mesh.normals is not None
        out += ["ply", "format ascii 1.0", f"element vertex {len(v)}"]
        out += [f"property double {c}" for c in "xyz"]
        if has_n:
            out += [f"property double n{c}" for c in "xyz"]
        out += [f"element face {len(t)}", "property list uchar int vertex_indices", "end_header"]
        rows = np.hstack([v, mesh.normals]) if has_n else v
        out.extend(" ".join(map(_fmt_float, row)) for row in rows)
        out.extend("3 " + " ".join(map(str, row)) for row in t)
    path.write_text("\n".join(out) + "\n")
