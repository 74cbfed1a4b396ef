import numpy as np
import pytest

from msfem import fem, mesh, patches
from msfem.interpolation import QuasiInterpolator

# degree-2 exact quadrature on the reference triangle (edge midpoints)
QP = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
QW = np.array([1.0, 1.0, 1.0]) / 3.0


def quadrature_integral(m, integrand):
    """Oracle: independent fixed-rule quadrature over every triangle."""
    total = 0.0
    for t in range(m.num_triangles):
        p0, p1, p2 = m.vertices[m.triangles[t]]
        pts = p0 + np.outer(QP[:, 0], p1 - p0) + np.outer(QP[:, 1], p2 - p0)
        total += m.areas[t] * (QW * integrand(pts)).sum()
    return total


def hat_function(m, vertex):
    values = np.zeros(m.num_vertices)
    values[vertex] = 1.0
    return fem.FeFunction(m, values)


def random_h10(m, rng):
    vals = np.where(m.boundary_vertices, 0.0, rng.standard_normal(m.num_vertices))
    return fem.FeFunction(m, vals)


@pytest.fixture(scope="module")
def hier():
    return mesh.refine_uniform(mesh.build_uniform_mesh(4), 2)


@pytest.fixture(scope="module")
def interp(hier):
    return QuasiInterpolator(hier)


def test_zero_maps_to_zero(hier, interp):
    zero = fem.FeFunction(hier.fine, np.zeros(hier.fine.num_vertices))
    assert np.all(interp.interpolate(zero).values == 0.0)


def test_kernel_projection_interpolates_to_zero(hier, interp):
    rng = np.random.default_rng(0)
    v = random_h10(hier.fine, rng)
    w = interp.project_to_kernel(v)
    assert np.abs(interp.interpolate(w).values).max() < 1e-12


def test_kernel_projection_idempotent(hier, interp):
    rng = np.random.default_rng(1)
    w = interp.project_to_kernel(random_h10(hier.fine, rng))
    again = interp.project_to_kernel(w)
    assert np.abs(again.values - w.values).max() < 1e-12


def test_prolonged_coarse_function_has_zero_kernel_part(hier, interp):
    rng = np.random.default_rng(2)
    coarse_vals = np.where(hier.coarse.boundary_vertices, 0.0,
                           rng.standard_normal(hier.coarse.num_vertices))
    v = fem.FeFunction(hier.fine, interp.prolongation @ coarse_vals)
    w = interp.project_to_kernel(v)
    assert np.abs(w.values).max() < 1e-12


def test_splitting_is_exact(hier, interp):
    rng = np.random.default_rng(3)
    v = random_h10(hier.fine, rng)
    w = interp.project_to_kernel(v)
    coarse_part = interp.coarse_component(v)
    recombined = interp.prolongation @ coarse_part.values + w.values
    assert np.abs(recombined - v.values).max() < 1e-12


def test_kernel_is_l2_orthogonal_to_coarse_hats(hier, interp):
    rng = np.random.default_rng(4)
    w = interp.project_to_kernel(random_h10(hier.fine, rng))
    mass = fem.assemble_mass(hier.fine)
    for z in interp.interior_nodes:
        phi = interp.prolongation @ hat_function(hier.coarse, z).values
        assert abs(phi @ (mass @ w.values)) < 1e-12


def test_averaged_value_of_fine_hat_against_quadrature_oracle():
    # coarse 2 x 2, fine 4 x 4; the fine hat at the single interior coarse
    # node: closed form 3/16 and an independent quadrature both agree
    hier = mesh.refine_uniform(mesh.build_uniform_mesh(2), 1)
    interp = QuasiInterpolator(hier)
    z = int(interp.interior_nodes[0])
    z_fine = int(hier.fine_vertex_of_coarse[z])

    fine_hat = hat_function(hier.fine, z_fine)
    coarse_hat = fem.FeFunction(
        hier.fine, interp.prolongation @ hat_function(hier.coarse, z).values
    )
    numer = quadrature_integral(
        hier.fine, lambda pts: fine_hat.evaluate(pts) * coarse_hat.evaluate(pts)
    )
    denom = quadrature_integral(hier.fine, coarse_hat.evaluate)
    oracle = numer / denom

    got = interp.interpolate(fine_hat).values[z]
    assert got == pytest.approx(oracle, rel=1e-13)
    assert got == pytest.approx(3.0 / 16.0, rel=1e-13)


def test_weights_supported_on_node_patches(hier, interp):
    # the weight row of node z may touch only fine vertices inside the
    # support of the coarse hat at z (its incident coarse elements)
    coarse = hier.coarse
    for row_idx, z in enumerate(interp.interior_nodes):
        fan = np.flatnonzero((coarse.triangles == z).any(axis=1))
        allowed = np.unique(hier.fine.triangles[hier.children[fan].ravel()])
        touched = interp.weights[row_idx].indices
        assert np.isin(touched, allowed).all()


def test_mesh_mismatch_rejected(hier, interp):
    other = mesh.build_uniform_mesh(5)
    with pytest.raises(ValueError, match="fine mesh"):
        interp.interpolate(fem.FeFunction(other, np.zeros(other.num_vertices)))


class TestConstraints:
    def test_full_domain_patch_activates_all_interior_nodes(self, hier, interp):
        patch = patches.maximal_patch(hier, 0)
        block = interp.build_constraints(patch)
        assert np.array_equal(block.active_nodes, interp.interior_nodes)
        # kernel of the rows is exactly the interpolation kernel
        rng = np.random.default_rng(5)
        w = interp.project_to_kernel(random_h10(hier.fine, rng))
        assert np.abs(block.rows @ w.values[patch.interior_dofs]).max() < 1e-12

    def test_overlap_scope_on_patch_inside_one_element(self, hier, interp):
        # a patch strictly inside one coarse element activates, under the
        # overlap reading, the nodes whose supports reach that element
        T = 10  # all three corners away from the boundary
        own = hier.children[T]
        inner = own[:2]  # two fine triangles well inside T
        patch = patches.Patch(
            owner=T, triangles=np.sort(inner),
            interior_dofs=np.array([], dtype=np.int64), thickness=0.0,
        )
        block = interp.build_constraints(patch, scope="overlap")
        coarse = hier.coarse
        expected = coarse.triangles[T]
        expected = np.unique(expected[~coarse.boundary_vertices[expected]])
        assert np.array_equal(np.sort(block.active_nodes), np.sort(expected))
        # brute force: nodes whose support has positive-measure overlap
        brute = []
        for z in interp.interior_nodes:
            fan = np.flatnonzero((coarse.triangles == z).any(axis=1))
            sup = set(hier.children[fan].ravel())
            if sup & set(inner):
                brute.append(z)
        assert np.array_equal(np.sort(block.active_nodes), np.sort(brute))

    def test_inside_scope_on_small_patch_has_no_constraints(self, hier, interp):
        patch = patches.patch_from_coarse_layers(hier, 10, 0)
        block = interp.build_constraints(patch)
        assert block.active_nodes.size == 0
        assert block.rows.shape == (0, patch.interior_dofs.size)

    def test_inside_scope_activates_covered_nodes(self, hier, interp):
        patch = patches.patch_from_coarse_layers(hier, 10, 1)
        block = interp.build_constraints(patch)
        # the element's own corners sit strictly inside its one-ring
        corners = hier.coarse.triangles[10]
        corners = corners[~hier.coarse.boundary_vertices[corners]]
        assert np.isin(corners, block.active_nodes).all()

    def test_satisfying_rows_means_zero_interpolation(self, hier, interp):
        patch = patches.patch_from_coarse_layers(hier, 10, 1)
        block = interp.build_constraints(patch)
        rng = np.random.default_rng(6)
        local = rng.standard_normal(patch.interior_dofs.size)
        # project local vector onto ker(rows) densely
        c = block.rows.toarray()
        local -= c.T @ np.linalg.lstsq(c @ c.T, c @ local, rcond=None)[0]
        extended = np.zeros(hier.fine.num_vertices)
        extended[patch.interior_dofs] = local
        coarse_vals = interp.interpolate(fem.FeFunction(hier.fine, extended))
        assert np.abs(coarse_vals.values[block.active_nodes]).max() < 1e-12

    def test_empty_patch_rejected(self, hier, interp):
        patch = patches.Patch(
            owner=0, triangles=np.array([], dtype=np.int64),
            interior_dofs=np.array([], dtype=np.int64), thickness=0.0,
        )
        with pytest.raises(ValueError, match="empty patch"):
            interp.build_constraints(patch)

    def test_unknown_scope_rejected(self, hier, interp):
        patch = patches.patch_from_coarse_layers(hier, 3, 1)
        with pytest.raises(ValueError, match="scope"):
            interp.build_constraints(patch, scope="everything")


def test_stability_constant_does_not_grow_under_refinement():
    # per coarse element K, the worst ratio |v - I_H v|_K / (H_K |grad v|_wK)
    # over all fine functions is a small generalized eigenproblem on the
    # one-ring of K; the maximum over K must not grow under refinement
    import scipy.linalg
    import scipy.sparse as sparse

    def observed_constant(coarse_n, levels):
        hier = mesh.refine_uniform(mesh.build_uniform_mesh(coarse_n), levels)
        interp = QuasiInterpolator(hier)
        fine = hier.fine
        diam = np.sqrt(2.0) / coarse_n

        full_w = sparse.csr_matrix(
            (fine.num_vertices, fine.num_vertices))  # placeholder shape
        scatter = sparse.csr_matrix(
            (np.ones(len(interp.interior_nodes)),
             (interp.interior_nodes, np.arange(len(interp.interior_nodes)))),
            shape=(hier.coarse.num_vertices, len(interp.interior_nodes)),
        )
        averaging = (interp.prolongation @ scatter @ interp.weights).tocsr()

        eye2 = np.broadcast_to(np.eye(2), (fine.num_triangles, 2, 2))
        stiff1 = fem.assemble_stiffness(fine, eye2)
        worst = 0.0
        for t in range(hier.coarse.num_triangles):
            ring = mesh.coarse_element_patch(hier, t, 1)
            ring_tris = hier.children[ring].ravel()
            own_tris = hier.children[t]
            dofs = np.unique(fine.triangles[ring_tris])
            dofs = dofs[~fine.boundary_vertices[dofs]]

            mask = np.zeros(fine.num_triangles, dtype=bool)
            mask[own_tris] = True
            sub = mesh.Triangulation(
                n=fine.n, vertices=fine.vertices,
                triangles=fine.triangles[mask],
                boundary_vertices=fine.boundary_vertices,
                mesh_size=fine.mesh_size,
            )
            mass_k = fem.assemble_mass(sub)
            diff = sparse.identity(fine.num_vertices, format="csr") - averaging
            num_op = (diff.T @ mass_k @ diff)[np.ix_(dofs, dofs)].toarray()

            mask_ring = np.zeros(fine.num_triangles, dtype=bool)
            mask_ring[ring_tris] = True
            sub_ring = mesh.Triangulation(
                n=fine.n, vertices=fine.vertices,
                triangles=fine.triangles[mask_ring],
                boundary_vertices=fine.boundary_vertices,
                mesh_size=fine.mesh_size,
            )
            eye_ring = np.broadcast_to(
                np.eye(2), (sub_ring.num_triangles, 2, 2))
            den_op = diam ** 2 * fem.assemble_stiffness(sub_ring, eye_ring)[
                np.ix_(dofs, dofs)].toarray()
            # deflate the near-kernel (constants) with a tiny shift
            shift = 1e-12 * np.abs(den_op).max()
            eigs = scipy.linalg.eigh(
                num_op, den_op + shift * np.eye(len(dofs)), eigvals_only=True
            )
            worst = max(worst, np.sqrt(max(eigs.max(), 0.0)))
        return worst

    c_coarse = observed_constant(4, 2)
    c_fine = observed_constant(8, 2)
    assert c_fine <= 1.05 * c_coarse, (c_coarse, c_fine)
