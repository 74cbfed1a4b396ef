"""Oversampling patches as unions of fine elements.

Patches grow from a coarse element either in coarse-mesh layers (one
vertex-contact ring of coarse elements per layer) or in fine-mesh layers
(one vertex-contact ring of fine elements per layer), the latter
reproducing fractional layer counts.  Layer thickness is the Euclidean
distance from the owner element to the patch boundary, ignoring stretches
of the domain boundary where a clipped patch cannot grow anyway.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .mesh import RefinementHierarchy, coarse_element_patch


@dataclass(frozen=True, eq=False)
class Patch:
    """Union of fine elements around one coarse element.

    Attributes:
        owner: index of the coarse element the patch belongs to.
        triangles: sorted fine-element indices forming the patch.
        interior_dofs: fine vertices with every incident fine element in
            the patch and not on the domain boundary; these carry the
            degrees of freedom of patch-supported functions.
        thickness: distance from the owner element to the patch boundary.
        layers_fine / layers_coarse: the growth descriptor (one is set
            unless the patch is maximal).
        is_maximal: patch covers the whole domain.
    """

    owner: int
    triangles: np.ndarray
    interior_dofs: np.ndarray
    thickness: float
    layers_fine: Optional[int] = None
    layers_coarse: Optional[int] = None
    is_maximal: bool = False

    @property
    def descriptor(self) -> str:
        if self.is_maximal:
            return "max"
        if self.layers_coarse is not None:
            return f"k={self.layers_coarse}"
        return f"L={self.layers_fine}"


def _interior_dofs(hier: RefinementHierarchy, tris: np.ndarray) -> np.ndarray:
    fine = hier.fine
    counts = np.bincount(fine.triangles[tris].ravel(), minlength=fine.num_vertices)
    inside = (counts > 0) & (counts == fine.vertex_triangle_counts)
    inside &= ~fine.boundary_vertices
    return np.flatnonzero(inside)


def _segment_distance(p1, p2, q1, q2) -> float:
    """Euclidean distance between two 2d segments (0 if they intersect)."""
    d1 = p2 - p1
    d2 = q2 - q1

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if (o1 * o2 < 0) and (o3 * o4 < 0):
        return 0.0

    def point_seg(p, a, b, d):
        denom = d @ d
        t = 0.0 if denom == 0.0 else np.clip((p - a) @ d / denom, 0.0, 1.0)
        return float(np.linalg.norm(p - (a + t * d)))

    return min(
        point_seg(q1, p1, p2, d1),
        point_seg(q2, p1, p2, d1),
        point_seg(p1, q1, q2, d2),
        point_seg(p2, q1, q2, d2),
    )


def _point_in_triangle(pts: np.ndarray, tri: np.ndarray) -> np.ndarray:
    a, b, c = tri
    v0, v1 = b - a, c - a
    d = pts - a
    den = v0[0] * v1[1] - v0[1] * v1[0]
    s = (d[:, 0] * v1[1] - d[:, 1] * v1[0]) / den
    t = (v0[0] * d[:, 1] - v0[1] * d[:, 0]) / den
    eps = 1e-12
    return (s >= -eps) & (t >= -eps) & (s + t <= 1 + eps)


def _boundary_segments(hier: RefinementHierarchy, tris: np.ndarray) -> np.ndarray:
    """Patch boundary edges that are not part of the domain boundary."""
    fine = hier.fine
    mask = np.zeros(fine.num_triangles, dtype=bool)
    mask[tris] = True
    adj = fine.edge_triangles
    in0 = mask[adj[:, 0]]
    in1 = np.where(adj[:, 1] >= 0, mask[adj[:, 1].clip(min=0)], False)
    on_boundary_of_patch = in0 != in1
    # Edges with a single neighbor lie on the domain boundary; a patch edge
    # there is excluded from the relative boundary.
    has_two = adj[:, 1] >= 0
    keep = on_boundary_of_patch & has_two
    return fine.edges[keep]


def _patch_thickness(hier: RefinementHierarchy, owner: int, tris: np.ndarray) -> float:
    coarse_tri = hier.coarse.vertices[hier.coarse.triangles[owner]]
    segs = _boundary_segments(hier, tris)
    if len(segs) == 0:
        # Patch boundary is entirely the domain boundary: the patch is the
        # whole domain, so measure against that.
        corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        seg_pts = np.stack([corners, np.roll(corners, -1, axis=0)], axis=1)
    else:
        seg_pts = hier.fine.vertices[segs]
    if _point_in_triangle(seg_pts.reshape(-1, 2), coarse_tri).any():
        return 0.0
    tri_edges = [(coarse_tri[i], coarse_tri[(i + 1) % 3]) for i in range(3)]
    best = np.inf
    for q1, q2 in seg_pts:
        for p1, p2 in tri_edges:
            best = min(best, _segment_distance(p1, p2, q1, q2))
            if best == 0.0:
                return 0.0
    return best


def _finish(hier, owner, mask, **descriptor) -> Patch:
    tris = np.flatnonzero(mask)
    return Patch(
        owner=owner,
        triangles=tris,
        interior_dofs=_interior_dofs(hier, tris),
        thickness=_patch_thickness(hier, owner, tris),
        **descriptor,
    )


def patch_from_coarse_layers(hier: RefinementHierarchy, T: int, k: int) -> Patch:
    """Children of the k-layer coarse neighborhood of ``T``."""
    coarse_tris = coarse_element_patch(hier, T, k)
    mask = np.zeros(hier.fine.num_triangles, dtype=bool)
    mask[hier.children[coarse_tris].ravel()] = True
    return _finish(hier, T, mask, layers_coarse=k,
                   is_maximal=bool(mask.all()))


def patch_from_fine_layers(hier: RefinementHierarchy, T: int, L: int) -> Patch:
    """Children of ``T`` grown ``L`` times by fine-element vertex contact."""
    if L < 0:
        raise ValueError(f"layer count must be nonnegative, got {L}")
    if not 0 <= T < hier.coarse.num_triangles:
        raise ValueError(f"unknown coarse element index {T}")
    mask = np.zeros(hier.fine.num_triangles, dtype=bool)
    mask[hier.children[T]] = True
    mask = hier.fine.grow_by_vertex_adjacency(mask, L)
    return _finish(hier, T, mask, layers_fine=L, is_maximal=bool(mask.all()))


def maximal_patch(hier: RefinementHierarchy, T: int) -> Patch:
    """The whole domain as the patch of ``T``."""
    if not 0 <= T < hier.coarse.num_triangles:
        raise ValueError(f"unknown coarse element index {T}")
    mask = np.ones(hier.fine.num_triangles, dtype=bool)
    return _finish(hier, T, mask, is_maximal=True)


def build_patches(
    hier: RefinementHierarchy,
    layers_fine: Optional[int] = None,
    layers_coarse: Optional[int] = None,
    maximal: bool = False,
) -> list[Patch]:
    """One patch per coarse element, all grown by the same rule."""
    chosen = sum(x is not None for x in (layers_fine, layers_coarse)) + bool(maximal)
    if chosen != 1:
        raise ValueError("specify exactly one of layers_fine, layers_coarse, maximal")
    out = []
    for T in range(hier.coarse.num_triangles):
        if maximal:
            out.append(maximal_patch(hier, T))
        elif layers_coarse is not None:
            out.append(patch_from_coarse_layers(hier, T, layers_coarse))
        else:
            out.append(patch_from_fine_layers(hier, T, layers_fine))
    return out


def min_thickness(patches: Sequence[Patch]) -> float:
    """Smallest owner-to-boundary distance over a family of patches."""
    if not patches:
        raise ValueError("no patches given")
    return min(p.thickness for p in patches)


def satisfies_log_oversampling(patches: Sequence[Patch], coarse_h: float,
                               c: float = 1.0) -> bool:
    """Whether ``min thickness >= c * H * log2(1/H)`` holds for the family."""
    target = c * coarse_h * np.log2(1.0 / coarse_h)
    return min_thickness(patches) >= target
