"""P1 finite element assembly, Dirichlet elimination, and SPD solves.

Stiffness entries are ``area * (A grad(lam_j)) . grad(lam_i)`` with the
coefficient sampled per element; loads use the 3-point edge-midpoint rule,
which integrates quadratics exactly.  Dirichlet conditions are imposed by
eliminating boundary degrees of freedom, keeping reduced systems symmetric
positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .mesh import RefinementHierarchy, Triangulation
from .problems import CoefficientField

QUADRATURE_RULES = ("centroid", "edge-midpoints")


class SolverError(RuntimeError):
    """A linear solve failed to meet its residual contract."""


@dataclass(eq=False)
class FeFunction:
    """Nodal coefficient vector over the P1 basis of a mesh."""

    mesh: Triangulation
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.num_vertices,):
            raise ValueError(
                f"expected {self.mesh.num_vertices} nodal values, "
                f"got shape {self.values.shape}"
            )

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the piecewise-linear interpolant at arbitrary points."""
        pts = np.asarray(points, dtype=float)
        n = self.mesh.n
        scaled = np.clip(pts * n, 0.0, n)
        cell = np.minimum(scaled.astype(np.int64), n - 1)
        ci, cj = cell[..., 0], cell[..., 1]
        a = scaled[..., 0] - ci
        b = scaled[..., 1] - cj
        v00 = cj * (n + 1) + ci
        vals = self.values
        lower = (
            (1.0 - a) * vals[v00]
            + (a - b) * vals[v00 + 1]
            + b * vals[v00 + n + 2]
        )
        upper = (
            (1.0 - b) * vals[v00]
            + a * vals[v00 + n + 2]
            + (b - a) * vals[v00 + n + 1]
        )
        return np.where(b <= a, lower, upper)


@dataclass(eq=False)
class ElementwiseField:
    """Per-element nodal values, allowing jumps across element boundaries.

    ``values[t, i]`` is the field at local vertex ``i`` of triangle ``t``
    seen from inside ``t``.  Conforming functions embed via
    :func:`to_elementwise`; broken multiscale reconstructions use this
    representation directly.
    """

    mesh: Triangulation
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.num_triangles, 3):
            raise ValueError(f"expected (num_triangles, 3) values, got {self.values.shape}")


def to_elementwise(fe: FeFunction) -> ElementwiseField:
    return ElementwiseField(fe.mesh, fe.values[fe.mesh.triangles])


def element_gradients(mesh: Triangulation) -> np.ndarray:
    """Gradients of the three barycentric hat functions, shape (nt, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    grads = np.empty((mesh.num_triangles, 3, 2))
    for i in range(3):
        edge = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        grads[:, i, 0] = -edge[:, 1]
        grads[:, i, 1] = edge[:, 0]
    return grads / (2.0 * mesh.areas)[:, None, None]


def element_stiffness(triangle: np.ndarray, a_local: np.ndarray) -> np.ndarray:
    """Stiffness matrix of one triangle for a constant coefficient matrix.

    ``K[i, j] = area * (a_local grad(lam_j)) . grad(lam_i)``; rows and
    columns follow the vertex order of ``triangle`` (counterclockwise).
    """
    p = np.asarray(triangle, dtype=float)
    if p.shape != (3, 2):
        raise ValueError(f"triangle must be (3, 2) coordinates, got {p.shape}")
    area2 = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (
        p[2, 0] - p[0, 0]
    )
    if area2 <= 1e-14 * max(1.0, np.abs(p).max() ** 2):
        raise ValueError("degenerate (or clockwise) triangle")
    grads = np.empty((3, 2))
    for i in range(3):
        edge = p[(i + 2) % 3] - p[(i + 1) % 3]
        grads[i] = (-edge[1], edge[0])
    grads /= area2
    return 0.5 * area2 * grads @ np.asarray(a_local, dtype=float) @ grads.T


def coefficient_on_elements(
    mesh: Triangulation, coefficient: CoefficientField, quadrature: str = "centroid"
) -> np.ndarray:
    """Per-element 2x2 coefficient samples, shape (nt, 2, 2).

    ``centroid`` uses the one-point rule; ``edge-midpoints`` averages the
    coefficient over the three edge midpoints of each element.
    """
    if quadrature not in QUADRATURE_RULES:
        raise ValueError(f"unknown quadrature {quadrature!r}; known: {QUADRATURE_RULES}")
    p = mesh.vertices[mesh.triangles]
    if quadrature == "centroid":
        return coefficient.matrix(p.mean(axis=1))
    mids = 0.5 * (p + np.roll(p, -1, axis=1))
    return coefficient.matrix(mids).mean(axis=1)


def _stiffness_coo(mesh: Triangulation, aloc: np.ndarray):
    grads = element_gradients(mesh)
    kloc = np.einsum("tia,tab,tjb->tij", grads, aloc, grads)
    kloc *= mesh.areas[:, None, None]
    rows = np.broadcast_to(mesh.triangles[:, :, None], kloc.shape)
    cols = np.broadcast_to(mesh.triangles[:, None, :], kloc.shape)
    return kloc, rows, cols


def assemble_stiffness(mesh: Triangulation, aloc: np.ndarray) -> sparse.csr_matrix:
    """Global stiffness over all vertices (no boundary treatment)."""
    kloc, rows, cols = _stiffness_coo(mesh, aloc)
    n = mesh.num_vertices
    return sparse.csr_matrix(
        (kloc.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)
    )


def assemble_mass(mesh: Triangulation) -> sparse.csr_matrix:
    """Global P1 mass matrix; element blocks are ``area/12 * (1 + I)``."""
    mloc = (np.ones((3, 3)) + np.eye(3)) / 12.0
    vals = mesh.areas[:, None, None] * mloc
    rows = np.broadcast_to(mesh.triangles[:, :, None], vals.shape)
    cols = np.broadcast_to(mesh.triangles[:, None, :], vals.shape)
    n = mesh.num_vertices
    return sparse.csr_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)
    )


def element_load_rows(mesh: Triangulation, source) -> sparse.csr_matrix:
    """Per-element load contributions as a (nt, np) sparse matrix.

    Row ``t`` holds ``integral over t of f * lam_i`` for the three local
    hats, via the edge-midpoint rule.  Column sums give the global load.
    """
    p = mesh.vertices[mesh.triangles]
    mids = 0.5 * (p + np.roll(p, -1, axis=1))  # midpoints of edges 01, 12, 20
    fm = np.asarray(source(mids), dtype=float)
    w = mesh.areas / 6.0
    vals = np.empty((mesh.num_triangles, 3))
    vals[:, 0] = w * (fm[:, 0] + fm[:, 2])
    vals[:, 1] = w * (fm[:, 0] + fm[:, 1])
    vals[:, 2] = w * (fm[:, 1] + fm[:, 2])
    rows = np.repeat(np.arange(mesh.num_triangles), 3)
    return sparse.csr_matrix(
        (vals.ravel(), (rows, mesh.triangles.ravel())),
        shape=(mesh.num_triangles, mesh.num_vertices),
    )


def directional_flux_rows(mesh: Triangulation, aloc: np.ndarray, direction: int) -> sparse.csr_matrix:
    """Entries ``area_t * (A_t e_dir) . grad(lam_v)`` as a (nt, np) matrix.

    Summing selected rows yields right-hand sides of corrector problems;
    summing all rows gives the global directional load.
    """
    grads = element_gradients(mesh)
    ae = aloc[:, :, direction]
    vals = mesh.areas[:, None] * np.einsum("tia,ta->ti", grads, ae)
    rows = np.repeat(np.arange(mesh.num_triangles), 3)
    return sparse.csr_matrix(
        (vals.ravel(), (rows, mesh.triangles.ravel())),
        shape=(mesh.num_triangles, mesh.num_vertices),
    )


def prolongation_matrix(hier: RefinementHierarchy) -> sparse.csr_matrix:
    """P1 interpolation from coarse to fine nodal vectors on nested meshes."""
    fine, coarse = hier.fine, hier.coarse
    m = hier.ratio
    nf, nc = fine.n, coarse.n
    idx = np.arange(fine.num_vertices)
    q, p = np.divmod(idx, nf + 1)
    big_i = np.minimum(p // m, nc - 1)
    big_j = np.minimum(q // m, nc - 1)
    a = (p - big_i * m) / m
    b = (q - big_j * m) / m
    v00 = big_j * (nc + 1) + big_i
    v10 = v00 + 1
    v01 = v00 + (nc + 1)
    v11 = v01 + 1

    in_lower = b <= a
    cols = np.where(
        in_lower[:, None],
        np.column_stack([v00, v10, v11]),
        np.column_stack([v00, v11, v01]),
    )
    weights = np.where(
        in_lower[:, None],
        np.column_stack([1.0 - a, a - b, b]),
        np.column_stack([1.0 - b, a, b - a]),
    )
    rows = np.repeat(idx, 3)
    mat = sparse.csr_matrix(
        (weights.ravel(), (rows, cols.ravel())),
        shape=(fine.num_vertices, coarse.num_vertices),
    )
    mat.eliminate_zeros()
    return mat


class Assembly:
    """All fine-scale discrete operators for one problem on one mesh.

    Bundles the stiffness, mass, per-element load rows, and per-element
    directional flux rows so that downstream corrector and coarse solves
    can slice instead of reassembling.
    """

    def __init__(self, mesh: Triangulation, coefficient: CoefficientField,
                 source, quadrature: str = "centroid"):
        self.mesh = mesh
        self.coefficient = coefficient
        self.source = source
        self.quadrature = quadrature
        self.aloc = coefficient_on_elements(mesh, coefficient, quadrature)

    @cached_property
    def stiffness(self) -> sparse.csr_matrix:
        return assemble_stiffness(self.mesh, self.aloc)

    @cached_property
    def stiffness_unweighted(self) -> sparse.csr_matrix:
        eye = np.broadcast_to(np.eye(2), (self.mesh.num_triangles, 2, 2))
        return assemble_stiffness(self.mesh, eye)

    @cached_property
    def mass(self) -> sparse.csr_matrix:
        return assemble_mass(self.mesh)

    @cached_property
    def load_rows(self) -> sparse.csr_matrix:
        return element_load_rows(self.mesh, self.source)

    @cached_property
    def load(self) -> np.ndarray:
        return np.asarray(self.load_rows.sum(axis=0)).ravel()

    @cached_property
    def flux_rows(self) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
        return (
            directional_flux_rows(self.mesh, self.aloc, 0),
            directional_flux_rows(self.mesh, self.aloc, 1),
        )

    @cached_property
    def directional_load(self) -> tuple[np.ndarray, np.ndarray]:
        e0, e1 = self.flux_rows
        return (
            np.asarray(e0.sum(axis=0)).ravel(),
            np.asarray(e1.sum(axis=0)).ravel(),
        )

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.mesh.boundary_vertices)

    def reduced_system(self) -> "SparseSystem":
        free = self.interior
        matrix = self.stiffness[free][:, free].tocsc()
        rhs = self.load[free]
        return SparseSystem(matrix=matrix, rhs=rhs, free_vertices=free, mesh=self.mesh)


@dataclass(eq=False)
class SparseSystem:
    """Reduced SPD system over the free (non-Dirichlet) degrees of freedom."""

    matrix: sparse.csc_matrix
    rhs: np.ndarray
    free_vertices: np.ndarray
    mesh: Triangulation

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def assemble_system(
    mesh: Triangulation,
    coefficient: CoefficientField,
    source,
    quadrature: str = "centroid",
) -> SparseSystem:
    """Assemble the Dirichlet-reduced stiffness system for a problem."""
    return Assembly(mesh, coefficient, source, quadrature).reduced_system()


def solve_spd(system: SparseSystem, tol: float = 1e-12, method: str = "direct") -> FeFunction:
    """Solve the reduced system; boundary entries of the result are zero.

    ``direct`` uses a sparse LU factorization, ``cg`` unpreconditioned
    conjugate gradients.  Either way the relative residual is verified
    against ``tol`` and violations raise :class:`SolverError`.
    """
    if system.size == 0:
        raise SolverError("empty system: mesh has no interior vertices")
    b = system.rhs
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x = np.zeros_like(b)
    elif method == "direct":
        x = spla.spsolve(system.matrix, b)
    elif method == "cg":
        x, info = spla.cg(system.matrix, b, rtol=tol, atol=0.0, maxiter=10 * system.size)
        if info != 0:
            achieved = np.linalg.norm(system.matrix @ x - b) / bnorm
            raise SolverError(
                f"cg did not converge within iteration cap; "
                f"achieved relative residual {achieved:.3e}"
            )
    else:
        raise ValueError(f"unknown method {method!r}")
    if bnorm > 0.0:
        achieved = np.linalg.norm(system.matrix @ x - b) / bnorm
        if achieved > max(tol, 1e-30):
            raise SolverError(f"residual contract violated: {achieved:.3e} > {tol:.3e}")
    values = np.zeros(system.mesh.num_vertices)
    values[system.free_vertices] = x
    return FeFunction(system.mesh, values)
