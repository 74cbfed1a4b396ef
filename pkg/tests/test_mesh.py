import io

import numpy as np
import pytest

from msfem import mesh


def brute_force_vertex_patch(m, seed, k):
    """Oracle: repeated python-set adjacency walk."""
    current = {seed}
    for _ in range(k):
        verts = set()
        for t in current:
            verts.update(m.triangles[t])
        current = {
            t for t in range(m.num_triangles)
            if verts & set(m.triangles[t])
        }
    return sorted(current)


def test_smallest_mesh():
    m = mesh.build_uniform_mesh(1)
    assert m.num_triangles == 2
    assert m.num_vertices == 4


def test_counts_n2():
    m = mesh.build_uniform_mesh(2)
    assert m.num_triangles == 8
    assert m.num_vertices == 9


def test_counts_table_grid():
    m = mesh.build_uniform_mesh(64)
    assert m.num_triangles == 2 * 64 ** 2 == 8192
    assert m.num_vertices == 65 ** 2 == 4225
    assert m.mesh_size == pytest.approx(np.sqrt(2) / 64)


def test_zero_subdivisions_rejected():
    with pytest.raises(ValueError):
        mesh.build_uniform_mesh(0)


@pytest.mark.parametrize("n", [1, 2, 5, 8])
def test_areas_positive_and_cover_unit_square(n):
    m = mesh.build_uniform_mesh(n)
    assert (m.areas > 0).all()
    assert abs(m.areas.sum() - 1.0) < 1e-12


def test_boundary_flags_match_coordinates():
    m = mesh.build_uniform_mesh(5)
    on_boundary = (
        (m.vertices[:, 0] == 0) | (m.vertices[:, 0] == 1)
        | (m.vertices[:, 1] == 0) | (m.vertices[:, 1] == 1)
    )
    assert np.array_equal(m.boundary_vertices, on_boundary)


def test_conformity_edges_shared_by_at_most_two():
    m = mesh.build_uniform_mesh(3)
    owners = m.edge_triangles
    assert ((owners >= 0).sum(axis=1) >= 1).all()
    # interior edge count for the criss-cross pattern: every edge belongs
    # to one or two triangles and the total combinatorics close up
    n_edges = len(m.edges)
    assert 3 * m.num_triangles == 2 * (owners[:, 1] >= 0).sum() + (
        (owners[:, 1] < 0).sum()
    )
    assert n_edges == len(np.unique(m.edges, axis=0))


def test_refine_identity():
    coarse = mesh.build_uniform_mesh(3)
    hier = mesh.refine_uniform(coarse, 0)
    assert hier.fine.num_triangles == coarse.num_triangles
    assert np.array_equal(hier.children.ravel(), np.arange(coarse.num_triangles))
    assert np.array_equal(hier.parents, np.arange(coarse.num_triangles))


def test_refine_child_counts():
    hier = mesh.refine_uniform(mesh.build_uniform_mesh(4), 2)
    assert hier.children.shape == (32, 16)


def test_refine_table_setup():
    hier = mesh.refine_uniform(mesh.build_uniform_mesh(8), 3)
    assert hier.fine.n == 64
    assert hier.fine.num_triangles == 8192


def test_negative_levels_rejected():
    with pytest.raises(ValueError):
        mesh.refine_uniform(mesh.build_uniform_mesh(2), -1)


def test_children_partition_parents():
    hier = mesh.refine_uniform(mesh.build_uniform_mesh(3), 2)
    child_area = hier.fine.areas[hier.children].sum(axis=1)
    assert np.abs(child_area - hier.coarse.areas).max() < 1e-12
    # children geometrically inside the parent: centroids must land there
    def cross2(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    for T in [0, 5, 11]:
        pts = hier.fine.vertices[hier.fine.triangles[hier.children[T]]].mean(axis=1)
        tri = hier.coarse.vertices[hier.coarse.triangles[T]]
        a, b, c = tri
        den = cross2(b - a, c - a)
        s = cross2(pts - a, c - a) / den
        t = cross2(b - a, pts - a) / den
        assert (s > -1e-12).all() and (t > -1e-12).all() and (s + t < 1 + 1e-12).all()


def test_fine_vertices_contain_coarse_vertices():
    hier = mesh.refine_uniform(mesh.build_uniform_mesh(3), 1)
    fine_pos = hier.fine.vertices[hier.fine_vertex_of_coarse]
    assert np.abs(fine_pos - hier.coarse.vertices).max() == 0.0


class TestCoarseElementPatch:
    def setup_method(self):
        self.hier = mesh.refine_uniform(mesh.build_uniform_mesh(6), 1)

    def test_layer_zero(self):
        assert list(mesh.coarse_element_patch(self.hier, 17, 0)) == [17]

    def test_interior_one_ring_is_thirteen(self):
        # owner with all vertices away from the boundary
        m = self.hier.coarse
        interior_tris = np.flatnonzero(
            ~m.boundary_vertices[m.triangles].any(axis=1)
        )
        T = int(interior_tris[0])
        got = mesh.coarse_element_patch(self.hier, T, 1)
        assert len(got) == 13
        assert list(got) == brute_force_vertex_patch(m, T, 1)

    def test_matches_brute_force(self):
        for T in [0, 9, 30]:
            for k in [1, 2, 3]:
                got = list(mesh.coarse_element_patch(self.hier, T, k))
                assert got == brute_force_vertex_patch(self.hier.coarse, T, k)

    def test_saturation(self):
        got = mesh.coarse_element_patch(self.hier, 5, 2 * 6)
        assert len(got) == self.hier.coarse.num_triangles

    def test_monotone_in_k(self):
        for k in range(4):
            small = set(mesh.coarse_element_patch(self.hier, 23, k))
            large = set(mesh.coarse_element_patch(self.hier, 23, k + 1))
            assert small <= large

    def test_unknown_element_rejected(self):
        with pytest.raises(ValueError):
            mesh.coarse_element_patch(self.hier, 10_000, 1)


def test_write_mesh_format():
    m = mesh.build_uniform_mesh(1)
    buf = io.StringIO()
    mesh.write_mesh(m, buf)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0] == "vertices 4 triangles 2"
    assert len(lines) == 1 + 4 + 2
    x, y, flag = lines[1].split()
    assert (float(x), float(y), int(flag)) == (0.0, 0.0, 1)
    assert lines[5].split() == ["0", "1", "3"]
    assert lines[6].split() == ["0", "3", "2"]
