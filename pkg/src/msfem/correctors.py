"""Local corrector problems for the three oversampling strategies.

Each coarse element T gets two fine-scale correctors, one per coordinate
direction, supported on its oversampling patch:

* Strategy 1: solve in the patch-interior fine space with the degrees of
  freedom at T's corner positions removed, driven by the directional load
  over the whole patch.
* Strategy 2: same load, full patch-interior fine space.
* Strategy 3: solve in the patch-restricted kernel of the coarse
  quasi-interpolation, driven by the directional load over T only; the
  kernel condition is enforced with Lagrange multipliers.

Corrector solves are independent across elements and may run in a process
pool; results are gathered in element order so output never depends on
scheduling.
"""

from __future__ import annotations

import concurrent.futures
import multiprocessing
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from . import fem
from .interpolation import ConstraintBlock, QuasiInterpolator
from .mesh import RefinementHierarchy
from .patches import Patch


@dataclass(frozen=True)
class CorrectorDiagnostics:
    """Solver health of one element's pair of corrector problems."""

    element: int
    dofs: int
    constraints: int
    dropped_rows: int
    residual: float
    constraint_violation: float
    dense_fallback: bool = False


@dataclass(eq=False)
class CorrectorBasis:
    """Per-element fine-scale correctors for one strategy and patch family.

    ``vectors[T, i]`` is the full-length fine nodal vector of the corrector
    of element ``T`` in direction ``i``; it vanishes outside the patch of
    ``T`` by construction.
    """

    strategy: int
    hier: RefinementHierarchy
    patches: Sequence[Patch]
    vectors: np.ndarray
    diagnostics: list[CorrectorDiagnostics]

    @property
    def max_residual(self) -> float:
        return max(d.residual for d in self.diagnostics)

    @property
    def max_constraint_violation(self) -> float:
        return max(d.constraint_violation for d in self.diagnostics)


def _solve_reduced(kp, rhs_list, tol):
    lu = spla.splu(kp.tocsc())
    sols, residual = [], 0.0
    for b in rhs_list:
        x = lu.solve(b)
        bnorm = np.linalg.norm(b)
        if bnorm > 0:
            residual = max(residual, np.linalg.norm(kp @ x - b) / bnorm)
        sols.append(x)
    return sols, residual


def _solve_saddle(kp, cmat, rhs_list, tol):
    """Solve [[K, C^T], [C, 0]] systems; drops dependent constraint rows."""
    if cmat.shape[0] == 0:
        sols, residual = _solve_reduced(kp, rhs_list, tol)
        return sols, residual, 0.0, 0, False
    row_norms = np.sqrt(np.asarray(cmat.multiply(cmat).sum(axis=1)).ravel())
    keep = row_norms > 1e-14 * max(row_norms.max(), 1.0)
    dropped = int((~keep).sum())
    c = cmat[keep]
    nd, nc = kp.shape[0], c.shape[0]
    if nc == 0:
        sols, residual = _solve_reduced(kp, rhs_list, tol)
        return sols, residual, 0.0, dropped, False
    saddle = sparse.bmat([[kp, c.T], [c, None]], format="csc")
    try:
        lu = spla.splu(saddle)
    except RuntimeError:
        lu = None

    sols, residual, violation = [], 0.0, 0.0
    dense_fallback = False
    for b in rhs_list:
        full = np.concatenate([b, np.zeros(nc)])
        x = lu.solve(full) if lu is not None else np.full(nd + nc, np.nan)
        w = x[:nd]
        bnorm = max(np.linalg.norm(b), 1e-300)
        res = np.linalg.norm(saddle @ x - full) / bnorm
        vio = np.abs(c @ w).max() if nc else 0.0
        if not np.isfinite(res) or res > tol or vio > tol:
            # Rank-deficient or ill-conditioned block: fall back to an
            # explicit kernel basis and a reduced SPD solve.
            dense_fallback = True
            z = scipy.linalg.null_space(c.toarray()) if nc else np.eye(nd)
            kz = z.T @ (kp @ z)
            w = z @ np.linalg.solve(kz, z.T @ b)
            # Residual of the constrained problem lives in ker(C).
            res = np.linalg.norm(z.T @ (kp @ w - b)) / bnorm
            vio = np.abs(c @ w).max() if nc else 0.0
        residual = max(residual, res)
        violation = max(violation, vio)
        sols.append(w)
    return sols, residual, violation, dropped, dense_fallback


def _element_task(
    strategy: int,
    hier: RefinementHierarchy,
    stiffness: sparse.csr_matrix,
    flux_rows: tuple,
    directional_load: tuple,
    patch: Patch,
    constraints: Optional[ConstraintBlock],
    tol: float,
):
    T = patch.owner
    dofs = patch.interior_dofs
    npf = hier.fine.num_vertices

    if strategy == 1:
        corner_fine = hier.fine_vertex_of_coarse[hier.coarse.triangles[T]]
        dofs = np.setdiff1d(dofs, corner_fine)

    if dofs.size == 0:
        zeros = np.zeros((2, npf))
        return zeros, CorrectorDiagnostics(T, 0, 0, 0, 0.0, 0.0)

    kp = stiffness[dofs][:, dofs]
    if strategy in (1, 2):
        rhs = [-directional_load[i][dofs] for i in (0, 1)]
        sols, residual = _solve_reduced(kp, rhs, tol)
        violation, dropped, fallback, ncons = 0.0, 0, False, 0
    elif strategy == 3:
        own = hier.children[T]
        rhs = [
            -np.asarray(flux_rows[i][own].sum(axis=0)).ravel()[dofs] for i in (0, 1)
        ]
        sols, residual, violation, dropped, fallback = _solve_saddle(
            kp, constraints.rows, rhs, tol
        )
        ncons = constraints.rows.shape[0]
    else:
        raise ValueError(f"unknown strategy {strategy}")

    if residual > tol:
        raise fem.SolverError(
            f"corrector solve for element {T} missed its residual contract: "
            f"{residual:.3e} > {tol:.3e}"
        )
    vectors = np.zeros((2, npf))
    for i, w in enumerate(sols):
        vectors[i, dofs] = w
    diag = CorrectorDiagnostics(
        T, dofs.size, ncons, dropped, residual, violation, fallback
    )
    return vectors, diag


_WORKER_PAYLOAD: dict = {}


def _init_worker(payload):
    _WORKER_PAYLOAD.update(payload)


def _run_worker(T: int):
    p = _WORKER_PAYLOAD
    constraints = p["constraints"][T] if p["constraints"] is not None else None
    return _element_task(
        p["strategy"], p["hier"], p["stiffness"], p["flux_rows"],
        p["directional_load"], p["patches"][T], constraints, p["tol"],
    )


def solve_corrector_strategy1(asm: fem.Assembly, hier: RefinementHierarchy,
                              patch: Patch, tol: float = 1e-10):
    """Correctors of one element in the corner-pinned patch space."""
    vectors, diag = _element_task(
        1, hier, asm.stiffness, asm.flux_rows, asm.directional_load, patch, None, tol
    )
    return vectors[0], vectors[1], diag


def solve_corrector_strategy2(asm: fem.Assembly, hier: RefinementHierarchy,
                              patch: Patch, tol: float = 1e-10):
    """Correctors of one element in the full patch-interior space."""
    vectors, diag = _element_task(
        2, hier, asm.stiffness, asm.flux_rows, asm.directional_load, patch, None, tol
    )
    return vectors[0], vectors[1], diag


def solve_corrector_strategy3(asm: fem.Assembly, hier: RefinementHierarchy,
                              patch: Patch, constraints: ConstraintBlock,
                              tol: float = 1e-10):
    """Correctors of one element in the patch-restricted interpolation kernel."""
    vectors, diag = _element_task(
        3, hier, asm.stiffness, asm.flux_rows, asm.directional_load, patch,
        constraints, tol,
    )
    return vectors[0], vectors[1], diag


def compute_corrector_basis(
    asm: fem.Assembly,
    hier: RefinementHierarchy,
    strategy: int,
    patches: Sequence[Patch],
    interpolator: Optional[QuasiInterpolator] = None,
    tol: float = 1e-10,
    parallel: int = 1,
    constraint_scope: str = "inside",
) -> CorrectorBasis:
    """Solve all corrector problems of one strategy over a patch family."""
    if strategy not in (1, 2, 3):
        raise ValueError(f"strategy must be 1, 2 or 3, got {strategy}")
    ntc = hier.coarse.num_triangles
    if len(patches) != ntc:
        raise ValueError("need exactly one patch per coarse element")
    if strategy == 3:
        if interpolator is None:
            raise ValueError("strategy 3 requires a quasi-interpolator")
        constraints = [
            interpolator.build_constraints(p, scope=constraint_scope)
            for p in patches
        ]
    else:
        constraints = None

    payload = {
        "strategy": strategy,
        "hier": hier,
        "stiffness": asm.stiffness,
        "flux_rows": asm.flux_rows,
        "directional_load": asm.directional_load,
        "patches": list(patches),
        "constraints": constraints,
        "tol": tol,
    }

    if parallel > 1 and ntc > 1:
        ctx = multiprocessing.get_context("fork")
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=parallel, mp_context=ctx,
            initializer=_init_worker, initargs=(payload,),
        ) as pool:
            results = list(pool.map(_run_worker, range(ntc),
                                    chunksize=max(1, ntc // (4 * parallel))))
    else:
        _init_worker(payload)
        try:
            results = [_run_worker(T) for T in range(ntc)]
        finally:
            _WORKER_PAYLOAD.clear()

    vectors = np.stack([vec for vec, _ in results])
    diagnostics = [diag for _, diag in results]
    return CorrectorBasis(
        strategy=strategy, hier=hier, patches=list(patches),
        vectors=vectors, diagnostics=diagnostics,
    )


@dataclass(eq=False)
class CorrectionOperator:
    """Realizes the correction of coarse functions by a corrector basis.

    Gradients of the coarse argument are read off at the element
    barycenters (they are constant per element for P1 functions).  The
    image is conforming for strategy 3 and elementwise (restricted to the
    owner element) for strategies 1 and 2.
    """

    basis: CorrectorBasis

    @property
    def hier(self) -> RefinementHierarchy:
        return self.basis.hier

    @cached_property
    def evaluation_points(self) -> np.ndarray:
        coarse = self.hier.coarse
        return coarse.vertices[coarse.triangles].mean(axis=1)

    @cached_property
    def coarse_gradients(self) -> np.ndarray:
        return fem.element_gradients(self.hier.coarse)

    def gradient_weights(self, phi: fem.FeFunction) -> np.ndarray:
        """Per-element gradient (ntc, 2) of a coarse P1 function."""
        coarse = self.hier.coarse
        nodal = phi.values[coarse.triangles]
        return np.einsum("tld,tl->td", self.coarse_gradients, nodal)

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        """Sparse map from coarse nodal vectors to conforming corrections.

        Only meaningful for strategy 3, whose correctors sum conformingly.
        """
        if self.basis.strategy != 3:
            raise ValueError("conforming corrector matrix requires strategy 3")
        hier = self.hier
        ntc = hier.coarse.num_triangles
        npf = hier.fine.num_vertices

        cols, rows, data = [], [], []
        for T in range(ntc):
            for i in (0, 1):
                support = np.flatnonzero(self.basis.vectors[T, i])
                rows.append(support)
                cols.append(np.full(support.size, 2 * T + i))
                data.append(self.basis.vectors[T, i][support])
        wmat = sparse.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(npf, 2 * ntc),
        )
        tri = hier.coarse.triangles
        grow = np.repeat(np.arange(ntc), 3)
        gmat = sparse.csr_matrix(
            (
                np.concatenate([self.coarse_gradients[:, :, 0].ravel(),
                                self.coarse_gradients[:, :, 1].ravel()]),
                (
                    np.concatenate([2 * grow, 2 * grow + 1]),
                    np.concatenate([tri.ravel(), tri.ravel()]),
                ),
            ),
            shape=(2 * ntc, hier.coarse.num_vertices),
        )
        return (wmat @ gmat).tocsr()

    def apply(self, phi: fem.FeFunction):
        """Correction of a coarse function; type depends on the strategy."""
        if phi.mesh.n != self.hier.coarse.n:
            raise ValueError("argument must live on the coarse mesh")
        if self.basis.strategy == 3:
            return fem.FeFunction(self.hier.fine, self.matrix @ phi.values)
        hier = self.hier
        weights = self.gradient_weights(phi)
        vals = np.zeros((hier.fine.num_triangles, 3))
        tris = hier.fine.triangles
        for T in range(hier.coarse.num_triangles):
            own = hier.children[T]
            loc = tris[own]
            w = self.basis.vectors[T]
            vals[own] = weights[T, 0] * w[0][loc] + weights[T, 1] * w[1][loc]
        return fem.ElementwiseField(hier.fine, vals)


def apply_correction(op: CorrectionOperator, phi: fem.FeFunction):
    """Functional form of :meth:`CorrectionOperator.apply`."""
    return op.apply(phi)
