"""Quasi-interpolation onto the coarse space and its kernel.

The interpolant assigns to each interior coarse node the weighted average
``integral(v * hat_z) / integral(hat_z)`` over the node's support patch.
Its kernel inside the fine space is the "fine-scale" complement: every
fine function splits uniquely into a prolonged coarse part and a kernel
part, and the splitting is L2-orthogonal against the coarse hats.

Constraint blocks restrict the kernel condition to oversampling patches:
a patch-supported fine vector extended by zero lies in the kernel exactly
when all constraint rows vanish on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from . import fem
from .mesh import RefinementHierarchy


@dataclass(eq=False)
class ConstraintBlock:
    """Kernel constraints of one patch.

    ``rows @ w = 0`` for a vector ``w`` over ``patch.interior_dofs`` holds
    iff the zero-extension of ``w`` interpolates to zero at every active
    coarse node.  Nodes whose support misses the patch contribute nothing
    and are omitted.
    """

    active_nodes: np.ndarray      # coarse vertex indices with support overlap
    rows: sparse.csr_matrix       # (n_active, n_patch_dofs)


class QuasiInterpolator:
    """Averaging interpolation from the fine space onto the coarse space."""

    def __init__(self, hier: RefinementHierarchy):
        self.hier = hier
        self.prolongation = fem.prolongation_matrix(hier)
        mass = fem.assemble_mass(hier.fine)
        pt_mass = (self.prolongation.T @ mass).tocsr()
        volumes = pt_mass @ np.ones(hier.fine.num_vertices)

        self.interior_nodes = np.flatnonzero(~hier.coarse.boundary_vertices)
        scale = sparse.diags(1.0 / volumes[self.interior_nodes])
        # weights[k] represents v -> integral(v * hat_z) / integral(hat_z)
        # for the k-th interior coarse node z.
        self.weights = (scale @ pt_mass[self.interior_nodes]).tocsr()
        self.node_volumes = volumes

        self._gram = (self.weights @ self.prolongation)[:, self.interior_nodes].tocsc()
        self._gram_lu = self._factorize(self._gram)
        self._row_of_node = np.full(hier.coarse.num_vertices, -1, dtype=np.int64)
        self._row_of_node[self.interior_nodes] = np.arange(len(self.interior_nodes))

    @staticmethod
    def _factorize(gram: sparse.csc_matrix):
        try:
            return spla.splu(gram)
        except RuntimeError as exc:  # singular factorization
            raise RuntimeError(
                "coarse interpolation system is singular; hierarchy is inconsistent"
            ) from exc

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_gram_lu"] = None  # factor objects do not pickle
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._gram_lu = self._factorize(self._gram)

    def _check_fine(self, v: fem.FeFunction) -> None:
        if v.mesh is not self.hier.fine and v.mesh.n != self.hier.fine.n:
            raise ValueError("function does not live on the hierarchy's fine mesh")

    def interpolate(self, v: fem.FeFunction) -> fem.FeFunction:
        """Coarse function with the averaged nodal values; zero on the boundary."""
        self._check_fine(v)
        values = np.zeros(self.hier.coarse.num_vertices)
        values[self.interior_nodes] = self.weights @ v.values
        return fem.FeFunction(self.hier.coarse, values)

    def coarse_component(self, v: fem.FeFunction) -> fem.FeFunction:
        """The unique coarse function whose prolongation interpolates like ``v``."""
        self._check_fine(v)
        rhs = self.weights @ v.values
        values = np.zeros(self.hier.coarse.num_vertices)
        values[self.interior_nodes] = self._gram_lu.solve(rhs)
        return fem.FeFunction(self.hier.coarse, values)

    def project_to_kernel(self, v: fem.FeFunction) -> fem.FeFunction:
        """Kernel part of ``v``: subtracting the prolonged coarse component."""
        coarse = self.coarse_component(v)
        return fem.FeFunction(
            self.hier.fine, v.values - self.prolongation @ coarse.values
        )

    def build_constraints(self, patch, scope: str = "inside") -> ConstraintBlock:
        """Constraint rows of the kernel condition over one patch.

        ``inside`` (default) activates the coarse nodes whose full support
        lies in the patch, mirroring a quasi-interpolation taken with
        respect to the patch itself; it leaves small patches unconstrained
        and reproduces the reference convergence tables.  ``overlap``
        activates every coarse node whose support merely intersects the
        patch, which is the zero-extension reading of the global operator;
        it overconstrains patch boundaries and is kept for comparison.
        """
        tris = np.asarray(patch.triangles)
        if tris.size == 0:
            raise ValueError("empty patch")
        if scope == "overlap":
            parents = np.unique(self.hier.parents[tris])
            touched = np.unique(self.hier.coarse.triangles[parents])
            active = touched[~self.hier.coarse.boundary_vertices[touched]]
        elif scope == "inside":
            covered = np.zeros(self.hier.fine.num_vertices, dtype=bool)
            covered[patch.interior_dofs] = True
            fine_ids = self.hier.fine_vertex_of_coarse[self.interior_nodes]
            active = self.interior_nodes[covered[fine_ids]]
        else:
            raise ValueError(f"unknown constraint scope {scope!r}")
        rows = self.weights[self._row_of_node[active]][:, patch.interior_dofs]
        return ConstraintBlock(active_nodes=active, rows=rows.tocsr())
