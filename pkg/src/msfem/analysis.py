"""Error norms against the fine reference, decay profiling, and rate fits.

Table-style norms use plain (unweighted) gradients; the coefficient-
weighted energy seminorm appears only in corrector decay profiles where
that is the quantity of interest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import fem
from .coarse import MsfemSolution
from .mesh import RefinementHierarchy, coarse_element_patch


@dataclass(frozen=True)
class ErrorReport:
    """Norms of the difference to the fine reference solution."""

    l2_error: float
    broken_h1_error: float        # elementwise gradient seminorm
    h1_full_error: float          # sqrt(l2^2 + seminorm^2)
    coarse_l2_error: float        # reference minus prolonged coarse part
    per_element: np.ndarray       # squared broken-H1 share per coarse element


@dataclass(frozen=True)
class DecayProfile:
    """Tail energies of one corrector over growing coarse neighborhoods."""

    element: int
    direction: int
    energies: np.ndarray          # E_k for k = 0..k_max
    rate: float                   # fitted exponent of E_k ~ exp(-rate * k)
    fit_residual: float
    flagged_zero: bool            # all-zero corrector, rate undefined


def _difference_elementwise(ref: fem.FeFunction, approx) -> np.ndarray:
    mesh = ref.mesh
    ref_vals = ref.values[mesh.triangles]
    if isinstance(approx, fem.FeFunction):
        if approx.mesh.n != mesh.n:
            raise ValueError("reference and approximation use different meshes")
        return ref_vals - approx.values[mesh.triangles]
    if isinstance(approx, fem.ElementwiseField):
        if approx.mesh.n != mesh.n:
            raise ValueError("reference and approximation use different meshes")
        return ref_vals - approx.values
    raise TypeError(f"cannot take difference with {type(approx).__name__}")


def _l2_sq_per_element(mesh, vals: np.ndarray) -> np.ndarray:
    sq = 2.0 * (vals ** 2).sum(axis=1) + 2.0 * (
        vals[:, 0] * vals[:, 1] + vals[:, 1] * vals[:, 2] + vals[:, 0] * vals[:, 2]
    )
    return mesh.areas / 12.0 * sq


def _h1_sq_per_element(mesh, vals: np.ndarray,
                       aloc: Optional[np.ndarray] = None) -> np.ndarray:
    grads = fem.element_gradients(mesh)
    g = np.einsum("tl,tld->td", vals, grads)
    if aloc is None:
        return mesh.areas * (g ** 2).sum(axis=1)
    return mesh.areas * np.einsum("td,tde,te->t", g, aloc, g)


def field_l2_norm(mesh, field: Union[fem.FeFunction, fem.ElementwiseField]) -> float:
    vals = field.values[mesh.triangles] if isinstance(field, fem.FeFunction) else field.values
    return float(np.sqrt(_l2_sq_per_element(mesh, vals).sum()))


def weighted_h1_seminorm(mesh, field, aloc: Optional[np.ndarray] = None,
                         triangles: Optional[np.ndarray] = None) -> float:
    """Gradient seminorm, optionally coefficient-weighted and restricted."""
    vals = field.values[mesh.triangles] if isinstance(field, fem.FeFunction) else field.values
    per = _h1_sq_per_element(mesh, vals, aloc)
    if triangles is not None:
        per = per[triangles]
    return float(np.sqrt(per.sum()))


def error_norms(reference: fem.FeFunction, approx: MsfemSolution,
                hier: RefinementHierarchy) -> ErrorReport:
    """All table norms of one multiscale solution against the reference."""
    mesh = reference.mesh
    if mesh.n != hier.fine.n:
        raise ValueError("reference does not live on the hierarchy's fine mesh")
    diff = _difference_elementwise(reference, approx.corrected)
    l2_sq = _l2_sq_per_element(mesh, diff).sum()
    h1_per_fine = _h1_sq_per_element(mesh, diff)
    per_coarse = h1_per_fine[hier.children].sum(axis=1)
    h1_sq = h1_per_fine.sum()

    prolong = fem.prolongation_matrix(hier)
    coarse_diff = reference.values - prolong @ approx.u_coarse.values
    coarse_vals = coarse_diff[mesh.triangles]
    coarse_l2 = np.sqrt(_l2_sq_per_element(mesh, coarse_vals).sum())

    return ErrorReport(
        l2_error=float(np.sqrt(l2_sq)),
        broken_h1_error=float(np.sqrt(h1_sq)),
        h1_full_error=float(np.sqrt(l2_sq + h1_sq)),
        coarse_l2_error=float(coarse_l2),
        per_element=per_coarse,
    )


def coarse_edge_jump(hier: RefinementHierarchy, field: fem.ElementwiseField) -> float:
    """L2 norm of the field's jumps across coarse element edges.

    Fine edges whose two neighbors have different coarse parents lie on a
    coarse edge; the jump of an elementwise-linear field there is linear
    along the edge and is integrated exactly.
    """
    fine = hier.fine
    adj = fine.edge_triangles
    both = adj[:, 1] >= 0
    t0, t1 = adj[both, 0], adj[both, 1]
    on_coarse = hier.parents[t0] != hier.parents[t1]
    if not on_coarse.any():
        return 0.0
    edges = fine.edges[both][on_coarse]
    t0, t1 = t0[on_coarse], t1[on_coarse]

    def values_at(tri_idx, verts):
        tri_nodes = fine.triangles[tri_idx]
        out = np.empty(len(tri_idx))
        for local in range(3):
            hit = tri_nodes[:, local] == verts
            out[hit] = field.values[tri_idx[hit], local]
        return out

    total = 0.0
    j0 = values_at(t0, edges[:, 0]) - values_at(t1, edges[:, 0])
    j1 = values_at(t0, edges[:, 1]) - values_at(t1, edges[:, 1])
    lengths = np.linalg.norm(
        fine.vertices[edges[:, 0]] - fine.vertices[edges[:, 1]], axis=1
    )
    total = (lengths / 3.0 * (j0 ** 2 + j0 * j1 + j1 ** 2)).sum()
    return float(np.sqrt(total))


def decay_profile(hier: RefinementHierarchy, aloc: np.ndarray, corrector: np.ndarray,
                  element: int, direction: int, k_max: int,
                  zero_floor: float = 1e-12) -> DecayProfile:
    """Energy of a corrector outside growing coarse neighborhoods of its element.

    Requires the corrector solved on the maximal patch.  The rate is a
    least-squares fit of ``log E_k`` against ``k`` over ``k >= 1``,
    skipping saturated entries below ``zero_floor``.
    """
    fine = hier.fine
    vals = corrector[fine.triangles]
    per = _h1_sq_per_element(fine, vals, aloc)
    energies = np.empty(k_max + 1)
    for k in range(k_max + 1):
        inside = np.zeros(fine.num_triangles, dtype=bool)
        inside[hier.children[coarse_element_patch(hier, element, k)].ravel()] = True
        energies[k] = np.sqrt(per[~inside].sum())

    if energies.max() <= zero_floor:
        return DecayProfile(element, direction, energies, float("nan"), 0.0, True)

    ks = np.arange(1, k_max + 1)
    usable = energies[1:] > zero_floor
    if usable.sum() < 2:
        return DecayProfile(element, direction, energies, float("nan"), 0.0, False)
    x, y = ks[usable], np.log(energies[1:][usable])
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((slope * x + intercept - y) ** 2)))
    return DecayProfile(element, direction, energies, float(-slope), resid, False)


def fit_rate(h_values, errors) -> float:
    """Least-squares slope of log(error) against log(h)."""
    h = np.asarray(h_values, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size < 3:
        raise ValueError(f"need at least 3 points for a rate fit, got {h.size}")
    if (e <= 0).any() or (h <= 0).any():
        raise ValueError("rate fits require positive mesh sizes and errors")
    slope, _ = np.polyfit(np.log(h), np.log(e), 1)
    return float(slope)
