"""Small synthetic meshes with known correspondences."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh


def tetrahedron(edge=1.0):
    """Regular tetrahedron with the given edge length, outward-oriented faces."""
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
    v *= edge / (2 * np.sqrt(2))
    t = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriMesh(v, t, name="tetrahedron")


def grid(nx, ny, spacing=1.0):
    """Planar ``nx x ny`` vertex grid in the xy-plane; vertex ``(i, j)`` has index ``j * nx + i``."""
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing)
    v = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(nx * ny)])
    tris = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b, c, d = a + 1, a + nx, a + nx + 1
            tris += [(a, b, d), (a, d, c)]
    return TriMesh(v, np.asarray(tris), name=f"grid{nx}x{ny}")


def icosphere(subdivisions=3, radius=1.0):
    """Subdivided icosahedron; 10 * 4**s + 2 vertices."""
    phi = (1 + 5**0.5) / 2
    v = [[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
         [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
         [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.asarray(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        midpoint = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    return TriMesh(np.asarray(verts) * radius, np.asarray(faces), name=f"icosphere{subdivisions}")


def sphere(n=1000, radius=1.0):
    """Unit sphere with exactly ``n`` near-uniform vertices (hull of a Fibonacci lattice)."""
    from scipy.spatial import ConvexHull

    from .descriptors import fibonacci_sphere

    pts = fibonacci_sphere(n)
    hull = ConvexHull(pts)
    tris = hull.simplices.copy()
    # orient outwards
    centers = pts[tris].mean(axis=1)
    normals = np.cross(pts[tris[:, 1]] - pts[tris[:, 0]], pts[tris[:, 2]] - pts[tris[:, 0]])
    flip = np.einsum("ij,ij->i", normals, centers) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return TriMesh(pts * radius, tris, name=f"sphere{n}")


def radial_noise(mesh, amplitude=0.01, seed=0):
    """Scale every vertex radially by ``1 + amplitude * N(0, 1)``."""
    rng = np.random.default_rng(seed)
    factors = 1.0 + amplitude * rng.standard_normal(mesh.n_vertices)
    return TriMesh(mesh.vertices * factors[:, None], mesh.triangles, name=f"{mesh.name}_noisy")


def bumpy_sphere(n=1000, n_bumps=6, height=0.35, width=0.45, seed=0):
    """Sphere with random Gaussian bumps and an ellipsoidal stretch, free of symmetries."""
    rng = np.random.default_rng(seed)
    base = sphere(n)
    dirs = rng.standard_normal((n_bumps, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    heights = height * rng.uniform(0.4, 1.0, n_bumps)
    widths = width * rng.uniform(0.6, 1.0, n_bumps)
    u = base.vertices
    cosang = u @ dirs.T
    r = 1.0 + (heights * np.exp(-(1 - cosang) / widths**2)).sum(axis=1)
    v = u * r[:, None] * np.array([1.3, 1.0, 0.8])
    return TriMesh(v, base.triangles, name=f"bumpy{n}_{seed}")


def submesh(mesh, keep):
    """Restrict ``mesh`` to the triangles whose three vertices are all kept.

    Returns ``(partial_mesh, index_map)`` where ``index_map[j]`` is the full
    vertex of partial vertex ``j``. Vertices left without triangles are dropped.
    """
    keep = np.asarray(keep)
    if keep.dtype != bool:
        mask = np.zeros(mesh.n_vertices, dtype=bool)
        mask[keep] = True
        keep = mask
    tri_ok = keep[mesh.triangles].all(axis=1)
    tris = mesh.triangles[tri_ok]
    used = np.unique(tris)
    remap = -np.ones(mesh.n_vertices, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(mesh.vertices[used], remap[tris], name=f"{mesh.name}_part"), used


def crop_fraction(mesh, fraction=0.6, direction=(0.0, 1.0, 0.0)):
    """Keep the ``fraction`` of vertices with the largest coordinate along ``direction``."""
    h = mesh.vertices @ np.asarray(direction, dtype=np.float64)
    cut = np.quantile(h, 1.0 - fraction)
    return submesh(mesh, h >= cut)


def permute(mesh, seed=0):
    """Shuffle the vertex order. Returns ``(mesh, perm)`` with ``new[j] = old[perm[j]]``."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(mesh.n_vertices)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return TriMesh(mesh.vertices[perm], inv[mesh.triangles], name=f"{mesh.name}_perm"), perm
