"""Coarse-scale multiscale systems and reconstruction.

Two formulations are offered.  The Petrov-Galerkin form tests the
corrected trial functions against plain coarse hats; it is the customary
choice for strategies 1 and 2 but carries no well-posedness guarantee, so
a near-singular coarse matrix surfaces as a first-class error.  The
symmetric form tests against corrected functions; for strategy 3 it
inherits coercivity from the coefficient and the coarse matrix is
verified to be symmetric positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
import scipy.linalg

from . import fem
from .correctors import CorrectionOperator, CorrectorBasis

RHS_VARIANTS = ("corrected", "plain")


class SingularCoarseSystemError(RuntimeError):
    """The coarse matrix is numerically singular; no solution is claimed."""

    def __init__(self, condition: float):
        super().__init__(
            f"coarse system is numerically singular "
            f"(condition estimate {condition:.3e})"
        )
        self.condition = condition


class CoarseAssemblyError(RuntimeError):
    """The coarse matrix violates a structural guarantee (symmetry, SPD)."""


@dataclass(eq=False)
class MsfemSolution:
    """A coarse solution together with its corrected reconstruction."""

    strategy: int
    formulation: str
    u_coarse: fem.FeFunction
    corrected: Union[fem.FeFunction, fem.ElementwiseField]
    diagnostics: dict = field(default_factory=dict)

    @property
    def is_conforming(self) -> bool:
        return isinstance(self.corrected, fem.FeFunction)


def _check_compatible(basis: CorrectorBasis, asm: fem.Assembly) -> None:
    if asm.mesh.n != basis.hier.fine.n:
        raise ValueError("assembly and corrector basis use different fine meshes")


def _corrected_flux(basis: CorrectorBasis, asm: fem.Assembly) -> np.ndarray:
    """Per-element matrices F with column i = integral over T of
    A (e_i + grad w_i), shape (ntc, 2, 2)."""
    hier = basis.hier
    grads = fem.element_gradients(hier.fine)
    areas = hier.fine.areas
    tris = hier.fine.triangles
    out = np.empty((hier.coarse.num_triangles, 2, 2))
    eye = np.eye(2)
    for T in range(hier.coarse.num_triangles):
        own = hier.children[T]
        g, a, al = grads[own], areas[own], asm.aloc[own]
        for i in (0, 1):
            gw = np.einsum("tl,tld->td", basis.vectors[T, i][tris[own]], g)
            out[T, :, i] = np.einsum("t,tde,te->d", a, al, eye[i] + gw)
    return out


def _corrected_energy(basis: CorrectorBasis, asm: fem.Assembly) -> np.ndarray:
    """Per-element matrices S with S[i, j] = integral over T of
    A (e_i + grad w_i) . (e_j + grad w_j), shape (ntc, 2, 2)."""
    hier = basis.hier
    grads = fem.element_gradients(hier.fine)
    areas = hier.fine.areas
    tris = hier.fine.triangles
    out = np.empty((hier.coarse.num_triangles, 2, 2))
    eye = np.eye(2)
    for T in range(hier.coarse.num_triangles):
        own = hier.children[T]
        g, a, al = grads[own], areas[own], asm.aloc[own]
        fields = []
        for i in (0, 1):
            gw = np.einsum("tl,tld->td", basis.vectors[T, i][tris[own]], g)
            fields.append(eye[i] + gw)
        for i in (0, 1):
            for j in (0, 1):
                out[T, i, j] = np.einsum("t,tde,te,td->", a, al, fields[i], fields[j])
    return out


def _accumulate_coarse(hier, per_t: np.ndarray) -> np.ndarray:
    """Sum gz @ per_t @ gz^T element blocks into a dense coarse matrix."""
    coarse = hier.coarse
    gc = fem.element_gradients(coarse)
    mat = np.zeros((coarse.num_vertices, coarse.num_vertices))
    for T in range(coarse.num_triangles):
        idx = coarse.triangles[T]
        mat[np.ix_(idx, idx)] += gc[T] @ per_t[T] @ gc[T].T
    return mat


def _broken_source_terms(basis: CorrectorBasis, asm: fem.Assembly) -> np.ndarray:
    """q[T, i] = integral over T of f * w_{T,i}, shape (ntc, 2)."""
    hier = basis.hier
    out = np.empty((hier.coarse.num_triangles, 2))
    for T in range(hier.coarse.num_triangles):
        rows = asm.load_rows[hier.children[T]]
        lumped = np.asarray(rows.sum(axis=0)).ravel()
        out[T, 0] = lumped @ basis.vectors[T, 0]
        out[T, 1] = lumped @ basis.vectors[T, 1]
    return out


def reconstruct(basis: CorrectorBasis, u_coarse: fem.FeFunction):
    """The multiscale field, coarse part plus correction.

    Conforming fine function for strategy 3; per-element values with the
    correction restricted to each owner element for strategies 1 and 2.
    """
    hier = basis.hier
    op = CorrectionOperator(basis)
    prolong = fem.prolongation_matrix(hier)
    base = prolong @ u_coarse.values
    if basis.strategy == 3:
        return fem.FeFunction(hier.fine, base + op.matrix @ u_coarse.values)
    correction = op.apply(u_coarse)
    vals = base[hier.fine.triangles] + correction.values
    return fem.ElementwiseField(hier.fine, vals)


def _finish_solution(basis, asm, coarse_values, strategy, formulation, diagnostics):
    u_coarse = fem.FeFunction(basis.hier.coarse, coarse_values)
    corrected = reconstruct(basis, u_coarse)
    return MsfemSolution(
        strategy=strategy, formulation=formulation,
        u_coarse=u_coarse, corrected=corrected, diagnostics=diagnostics,
    )


def solve_pg(basis: CorrectorBasis, asm: fem.Assembly,
             tol: float = 1e-12, cond_limit: float = 1e13) -> MsfemSolution:
    """Petrov-Galerkin coarse solve for strategies 1 and 2.

    Existence is not guaranteed by theory; a condition estimate beyond
    ``cond_limit`` raises :class:`SingularCoarseSystemError` instead of
    returning a meaningless vector.
    """
    if basis.strategy not in (1, 2):
        raise ValueError("petrov-galerkin form is reserved for strategies 1 and 2")
    _check_compatible(basis, asm)
    hier = basis.hier
    flux = _corrected_flux(basis, asm)
    mat = _accumulate_coarse(hier, flux)

    prolong = fem.prolongation_matrix(hier)
    rhs_full = prolong.T @ asm.load
    interior = np.flatnonzero(~hier.coarse.boundary_vertices)
    a = mat[np.ix_(interior, interior)]
    b = rhs_full[interior]

    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularCoarseSystemError(cond)
    x = np.linalg.solve(a, b)
    resid = np.linalg.norm(a @ x - b) / max(np.linalg.norm(b), 1e-300)
    if resid > tol:
        raise fem.SolverError(f"coarse residual {resid:.3e} exceeds {tol:.3e}")

    values = np.zeros(hier.coarse.num_vertices)
    values[interior] = x
    return _finish_solution(
        basis, asm, values, basis.strategy, "pg",
        {"condition": cond, "residual": resid},
    )


def solve_symmetric(basis: CorrectorBasis, asm: fem.Assembly,
                    rhs_variant: str = "corrected",
                    tol: float = 1e-12) -> MsfemSolution:
    """Symmetric coarse solve; mandatory form for strategy 3.

    For strategy 3 the coarse matrix is assembled from the conforming
    corrected basis and must pass a Cholesky factorization; a failure is a
    hard error, not a reportable outcome.  The ``plain`` right-hand-side
    variant drops the correction from the source pairing.
    """
    if rhs_variant not in RHS_VARIANTS:
        raise ValueError(f"unknown rhs variant {rhs_variant!r}; known: {RHS_VARIANTS}")
    _check_compatible(basis, asm)
    hier = basis.hier
    interior = np.flatnonzero(~hier.coarse.boundary_vertices)
    prolong = fem.prolongation_matrix(hier)
    plain_rhs_full = prolong.T @ asm.load

    if basis.strategy == 3:
        op = CorrectionOperator(basis)
        corrected_basis = (prolong + op.matrix).tocsr()
        full = (corrected_basis.T @ (asm.stiffness @ corrected_basis)).toarray()
        a = full[np.ix_(interior, interior)]
        asym = np.abs(a - a.T).max()
        if asym > 1e-12:
            raise CoarseAssemblyError(f"coarse matrix asymmetry {asym:.3e}")
        a = 0.5 * (a + a.T)
        try:
            chol = scipy.linalg.cho_factor(a)
        except np.linalg.LinAlgError as exc:
            raise CoarseAssemblyError(
                "coarse matrix is not positive definite"
            ) from exc
        if rhs_variant == "corrected":
            b = (corrected_basis.T @ asm.load)[interior]
        else:
            b = plain_rhs_full[interior]
        x = scipy.linalg.cho_solve(chol, b)
        diagnostics = {"spd": True}
    else:
        energy = _corrected_energy(basis, asm)
        mat = _accumulate_coarse(hier, energy)
        a = mat[np.ix_(interior, interior)]
        if rhs_variant == "corrected":
            q = _broken_source_terms(basis, asm)
            gc = fem.element_gradients(hier.coarse)
            rhs_full = plain_rhs_full.copy()
            for T in range(hier.coarse.num_triangles):
                idx = hier.coarse.triangles[T]
                rhs_full[idx] += gc[T] @ q[T]
            b = rhs_full[interior]
        else:
            b = plain_rhs_full[interior]
        cond = np.linalg.cond(a)
        if not np.isfinite(cond) or cond > 1e13:
            raise SingularCoarseSystemError(cond)
        x = np.linalg.solve(a, b)
        diagnostics = {"condition": cond}

    resid = np.linalg.norm(a @ x - b) / max(np.linalg.norm(b), 1e-300)
    if resid > tol:
        raise fem.SolverError(f"coarse residual {resid:.3e} exceeds {tol:.3e}")
    diagnostics["residual"] = resid

    values = np.zeros(hier.coarse.num_vertices)
    values[interior] = x
    return _finish_solution(
        basis, asm, values, basis.strategy, "symmetric", diagnostics
    )
