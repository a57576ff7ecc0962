"""Structured triangulations of the unit square with edge adjacency."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

# local edge k is opposite local vertex k
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangle mesh.

    Attributes
    ----------
    vertices : (V, 2) float array
    triangles : (F, 3) int array, counterclockwise
    edges : (E, 2) int array, sorted vertex pairs
    edge_triangles : (E, 2) int array; second column is -1 on the boundary
    triangle_edges : (F, 3) int array; entry k is the edge opposite vertex k
    h : largest edge length
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_triangles: np.ndarray
    triangle_edges: np.ndarray
    boundary_vertices: np.ndarray
    boundary_edges: np.ndarray
    h: float
    rho_min: float = field(default=0.0)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def edge_lengths(self):
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def edge_midpoints(self):
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])


def _connect(vertices, triangles, h):
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    nt = len(triangles)
    local = triangles[:, LOCAL_EDGES]  # (F, 3, 2)
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    triangle_edges = inverse.reshape(nt, 3)

    edge_triangles = np.full((len(edges), 2), -1, dtype=np.int64)
    owner = np.repeat(np.arange(nt), 3)
    for e, t in zip(inverse, owner):
        if edge_triangles[e, 0] < 0:
            edge_triangles[e, 0] = t
        else:
            edge_triangles[e, 1] = t

    boundary_edges = edge_triangles[:, 1] < 0
    boundary_vertices = np.zeros(len(vertices), dtype=bool)
    boundary_vertices[edges[boundary_edges].ravel()] = True

    d = vertices[edges[:, 1]] - vertices[edges[:, 0]]
    lengths = np.hypot(d[:, 0], d[:, 1])
    return Mesh(
        vertices=vertices,
        triangles=triangles,
        edges=edges,
        edge_triangles=edge_triangles,
        triangle_edges=triangle_edges,
        boundary_vertices=boundary_vertices,
        boundary_edges=boundary_edges,
        h=h,
        rho_min=float(lengths.min() / h),
    )


def build_unit_square_mesh(n):
    """Split an ``n`` x ``n`` grid of the unit square along the lower-left to
    upper-right diagonal of every cell."""
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s)  # row j is y = s[j]
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return _connect(vertices, triangles, math.sqrt(2.0) / n)


def refine_uniform(mesh):
    """Split every triangle into four congruent children through its edge midpoints.

    Parent vertices keep their indices; the midpoint of edge ``e`` becomes
    vertex ``V + e``.
    """
    nv = mesh.n_vertices
    vertices = np.vstack([mesh.vertices, mesh.edge_midpoints])
    a, b, c = mesh.triangles.T
    ma, mb, mc = (nv + mesh.triangle_edges).T  # midpoints opposite a, b, c
    children = np.stack(
        [
            np.column_stack([a, mc, mb]),
            np.column_stack([mc, b, ma]),
            np.column_stack([mb, ma, c]),
            np.column_stack([mc, ma, mb]),
        ],
        axis=1,
    ).reshape(-1, 3)
    return _connect(vertices, children, 0.5 * mesh.h)


def interior_edges(mesh):
    """Interior edges with their two neighbours and the unit normal pointing
    from the first (left) triangle into the second (right) one.

    Returns ``(edges, left, right, normals)`` as arrays.
    """
    idx = np.flatnonzero(~mesh.boundary_edges)
    edges = mesh.edges[idx]
    left = mesh.edge_triangles[idx, 0]
    right = mesh.edge_triangles[idx, 1]
    d = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    normals = np.column_stack([d[:, 1], -d[:, 0]])
    normals /= np.hypot(normals[:, 0], normals[:, 1])[:, None]
    # orient away from the left triangle's centroid
    mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    centroid = mesh.vertices[mesh.triangles[left]].mean(axis=1)
    flip = np.einsum("ij,ij->i", normals, mid - centroid) < 0
    normals[flip] *= -1.0
    return idx, left, right, normals
