"""Nested uniform triangulations of the unit square.

All meshes are criss-cross grids: ``n`` by ``n`` square cells on
``[0,1]^2``, each cell split along the diagonal running from its
lower-left to its upper-right corner.  Vertices are numbered row by row
(x fastest), triangles cell by cell with the lower triangle first, so
text dumps and regression baselines are stable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import IO

import numpy as np


@dataclass(frozen=True, eq=False)
class Triangulation:
    """Conforming triangle mesh of the closed unit square.

    Attributes:
        n: lattice subdivisions per side.
        vertices: (num_vertices, 2) coordinates; vertex ``j*(n+1)+i`` sits
            at ``(i/n, j/n)``.
        triangles: (num_triangles, 3) vertex indices, counterclockwise.
        boundary_vertices: bool mask marking vertices on the square's boundary.
        mesh_size: largest element diameter, ``sqrt(2)/n``.
    """

    n: int
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertices: np.ndarray
    mesh_size: float

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def areas(self) -> np.ndarray:
        """Signed triangle areas, positive for counterclockwise orientation."""
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def vertex_triangle_counts(self) -> np.ndarray:
        """Number of triangles incident to each vertex."""
        return np.bincount(self.triangles.ravel(), minlength=self.num_vertices)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs, shape (num_edges, 2)."""
        return self._edge_data[0]

    @cached_property
    def edge_triangles(self) -> np.ndarray:
        """Triangles adjacent to each edge, shape (num_edges, 2); -1 pads
        boundary edges that have a single neighbor."""
        return self._edge_data[1]

    @cached_property
    def _edge_data(self) -> tuple[np.ndarray, np.ndarray]:
        tris = self.triangles
        raw = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        raw.sort(axis=1)
        owner = np.tile(np.arange(self.num_triangles), 3)
        edges, inverse = np.unique(raw, axis=0, return_inverse=True)
        adj = np.full((len(edges), 2), -1, dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        slot = np.zeros(len(edges), dtype=np.int64)
        for e, t in zip(inverse[order], owner[order]):
            adj[e, slot[e]] = t
            slot[e] += 1
        return edges, adj

    def grow_by_vertex_adjacency(self, tri_mask: np.ndarray, steps: int) -> np.ndarray:
        """Enlarge a triangle set ``steps`` times by adding every triangle
        that shares at least one vertex with the current set."""
        mask = tri_mask.copy()
        for _ in range(steps):
            touched = np.zeros(self.num_vertices, dtype=bool)
            touched[self.triangles[mask].ravel()] = True
            new = touched[self.triangles].any(axis=1)
            if np.array_equal(new, mask):
                break
            mask = new
        return mask


@dataclass(frozen=True, eq=False)
class RefinementHierarchy:
    """A coarse mesh together with a uniform refinement of it.

    Attributes:
        coarse, fine: the two meshes; ``fine.n == coarse.n * 2**levels``.
        levels: number of uniform refinement steps.
        children: (num_coarse_triangles, 4**levels) fine triangles per
            coarse triangle; each row partitions its coarse parent.
        parents: coarse triangle index for every fine triangle.
    """

    coarse: Triangulation
    fine: Triangulation
    levels: int
    children: np.ndarray
    parents: np.ndarray

    @property
    def ratio(self) -> int:
        """Fine lattice cells per coarse lattice cell, per side."""
        return self.fine.n // self.coarse.n

    @cached_property
    def fine_vertex_of_coarse(self) -> np.ndarray:
        """Fine vertex index coinciding with each coarse vertex."""
        m = self.ratio
        nc, nf = self.coarse.n, self.fine.n
        jj, ii = np.divmod(np.arange(self.coarse.num_vertices), nc + 1)
        return (jj * m) * (nf + 1) + ii * m


def build_uniform_mesh(n: int) -> Triangulation:
    """Criss-cross triangulation of the unit square with ``n`` cells per side.

    Produces ``2*n**2`` right triangles on ``(n+1)**2`` vertices.
    """
    if n < 1:
        raise ValueError(f"need at least one subdivision per side, got n={n}")
    idx = np.arange((n + 1) ** 2)
    jj, ii = np.divmod(idx, n + 1)
    vertices = np.column_stack([ii, jj]).astype(float) / n
    boundary = (ii == 0) | (ii == n) | (jj == 0) | (jj == n)

    cell = np.arange(n * n)
    cj, ci = np.divmod(cell, n)
    v00 = cj * (n + 1) + ci
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    return Triangulation(
        n=n,
        vertices=vertices,
        triangles=triangles,
        boundary_vertices=boundary,
        mesh_size=np.sqrt(2.0) / n,
    )


def refine_uniform(coarse: Triangulation, levels: int) -> RefinementHierarchy:
    """Refine every triangle ``levels`` times into four congruent children.

    The fine mesh coincides with ``build_uniform_mesh(coarse.n * 2**levels)``
    including its numbering, so nested-lattice arithmetic stays valid.
    """
    if levels < 0:
        raise ValueError(f"levels must be nonnegative, got {levels}")
    m = 2 ** levels
    fine = build_uniform_mesh(coarse.n * m)

    # Parent of each fine triangle from lattice arithmetic: a fine cell at
    # offset (a, b) inside its coarse cell lies below the coarse diagonal
    # when b <= a (lower fine triangle) resp. b < a (upper fine triangle).
    tri = np.arange(fine.num_triangles)
    cell, sub = np.divmod(tri, 2)
    q, p = np.divmod(cell, fine.n)
    big_i, a = np.divmod(p, m)
    big_j, b = np.divmod(q, m)
    in_lower = np.where(sub == 0, b <= a, b < a)
    parents = 2 * (big_j * coarse.n + big_i) + np.where(in_lower, 0, 1)

    order = np.argsort(parents, kind="stable")
    children = order.reshape(coarse.num_triangles, 4 ** levels)
    return RefinementHierarchy(
        coarse=coarse, fine=fine, levels=levels, children=children, parents=parents
    )


def coarse_element_patch(hier: RefinementHierarchy, T: int, k: int) -> np.ndarray:
    """Indices of the coarse elements within ``k`` vertex-contact layers of ``T``.

    Layer zero is ``{T}`` itself; each further layer adds every coarse
    triangle touching the current set in at least one vertex.  Saturates at
    the full coarse mesh.
    """
    mesh = hier.coarse
    if not 0 <= T < mesh.num_triangles:
        raise ValueError(f"unknown coarse element index {T}")
    if k < 0:
        raise ValueError(f"layer count must be nonnegative, got {k}")
    mask = np.zeros(mesh.num_triangles, dtype=bool)
    mask[T] = True
    mask = mesh.grow_by_vertex_adjacency(mask, k)
    return np.flatnonzero(mask)


def write_mesh(mesh: Triangulation, stream: IO[str]) -> None:
    """Plain-text dump: header, vertex lines ``x y flag``, triangle lines."""
    stream.write(f"vertices {mesh.num_vertices} triangles {mesh.num_triangles}\n")
    for (x, y), flag in zip(mesh.vertices, mesh.boundary_vertices):
        stream.write(f"{x:.17g} {y:.17g} {int(flag)}\n")
    for a, b, c in mesh.triangles:
        stream.write(f"{a} {b} {c}\n")
