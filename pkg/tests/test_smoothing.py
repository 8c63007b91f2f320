"""Face/node smoothing domains and smoothed field quantities."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smoothfem.mesh import TetMesh, tet_shape_gradients
from smoothfem.scenarios import generate_cube_mesh
from smoothfem.smoothing import (
    AntipodalFiberError,
    FiberFrame,
    InvertedDomainError,
    build_face_domains,
    build_node_domains,
    element_deformation_gradients,
    orthonormalize_frames,
    smooth_deformation_gradient,
    smooth_electric_field,
    smooth_fiber_frame,
    smooth_nodal_average,
    write_domain_table,
)

BUILDERS = [build_face_domains, build_node_domains]


def _oracle_weights(mesh, d):
    vols = np.array([mesh.volumes[e] / 4 for e in d.adjacent_elems])
    return vols / vols.sum()


def _perturbed_cube(n=3, seed=0):
    # jiggle interior nodes to get an irregular but valid mesh
    mesh = generate_cube_mesh(1.0, n, "tet")
    rng = np.random.default_rng(seed)
    X = mesh.nodes.copy()
    inner = np.all((X > 1e-9) & (X < 1 - 1e-9), axis=1)
    X[inner] += 0.08 * rng.uniform(-1, 1, (inner.sum(), 3))
    return TetMesh(X, mesh.tets)


class TestDomains:
    def test_single_tet(self, unit_tet):
        for build in BUILDERS:
            doms = build(unit_tet)
            assert len(doms) == 4
            for d in doms:
                assert d.volume == pytest.approx(unit_tet.volumes[0] / 4, rel=1e-15)

    def test_two_tets_face(self, two_tets):
        V = two_tets.volumes[0]
        doms = build_face_domains(two_tets)
        assert len(doms) == 7
        inner = [d for d in doms if d.n_adjacent == 2]
        assert len(inner) == 1 and inner[0].volume == pytest.approx(V / 2)
        assert sorted(d.volume for d in doms if d.n_adjacent == 1) == pytest.approx([V / 4] * 6)

    def test_two_tets_node(self, two_tets):
        V = two_tets.volumes[0]
        doms = build_node_domains(two_tets)
        assert [d.volume for d in doms] == pytest.approx([V / 2] * 3 + [V / 4] * 2)

    @pytest.mark.parametrize("build", BUILDERS)
    def test_cube_partition(self, build):
        mesh = generate_cube_mesh(10.0, 5, "tet")
        doms = build(mesh)
        total = sum(mesh.volumes[e] / 4 for d in doms for e in d.adjacent_elems)
        assert abs(sum(d.volume for d in doms) - 1000.0) <= 1e-12 * 1000
        assert abs(total - 1000.0) <= 1e-12 * 1000
        uses = np.zeros(mesh.n_elems, int)
        for d in doms:
            uses[list(d.adjacent_elems)] += 1
        assert np.all(uses == 4)

    def test_counts(self):
        mesh = generate_cube_mesh(1.0, 3, "tet")
        faces = build_face_domains(mesh)
        nodes = build_node_domains(mesh)
        assert len(nodes) == mesh.n_nodes
        assert all(d.n_adjacent in (1, 2) for d in faces)
        assert all(d.n_adjacent >= 1 for d in nodes)

    @pytest.mark.parametrize("build", BUILDERS)
    def test_gradient_partition_of_unity(self, build):
        for d in build(_perturbed_cube()):
            assert np.abs(d.smoothed_gradients.sum(axis=0)).max() <= 1e-13

    @pytest.mark.parametrize("build", BUILDERS)
    def test_gradients_equal_weighted_element_mean(self, build):
        mesh = _perturbed_cube()
        grads = tet_shape_gradients(mesh.nodes, mesh.tets)
        for d in build(mesh):
            w = _oracle_weights(mesh, d)
            ref = np.zeros((mesh.n_nodes, 3))
            for wi, e in zip(w, d.adjacent_elems):
                for a in range(4):
                    ref[mesh.tets[e, a]] += wi * grads[e, a]
            np.testing.assert_allclose(d.smoothed_gradients, ref[d.support_nodes], atol=1e-12)

    def test_debug_table(self, tmp_path, two_tets):
        write_domain_table(build_face_domains(two_tets), tmp_path / "sd.csv")
        lines = (tmp_path / "sd.csv").read_text().splitlines()
        assert lines[0].startswith("kind,key,volume")
        assert len(lines) == 1 + 6 * 4 + 5  # boundary faces see one tet, the interior face five nodes


class TestDeformationGradient:
    def test_zero(self, two_tets):
        for d in build_face_domains(two_tets):
            np.testing.assert_array_equal(smooth_deformation_gradient(d, np.zeros((5, 3))), np.eye(3))

    @pytest.mark.parametrize("build", BUILDERS)
    def test_patch_affine(self, build):
        mesh = _perturbed_cube()
        A = np.array([[0.1, 0.05, -0.02], [0.0, -0.1, 0.03], [0.07, 0.0, 0.2]])
        u = mesh.nodes @ A.T + np.array([1.0, -2.0, 0.5])
        for d in build(mesh):
            np.testing.assert_allclose(smooth_deformation_gradient(d, u), np.eye(3) + A, atol=1e-13)

    @pytest.mark.parametrize("build", BUILDERS)
    def test_weighted_element_mean(self, build, rng):
        mesh = _perturbed_cube()
        u = 0.05 * rng.standard_normal((mesh.n_nodes, 3))
        Fe = element_deformation_gradients(mesh, u)
        for d in build(mesh):
            ref = np.einsum("e,eij->ij", _oracle_weights(mesh, d), Fe[list(d.adjacent_elems)])
            np.testing.assert_allclose(smooth_deformation_gradient(d, u), ref, atol=1e-13)

    def test_inverted(self, unit_tet):
        u = np.zeros((4, 3))
        u[3, 2] = -2.0  # push the apex through the base
        with pytest.raises(InvertedDomainError):
            smooth_deformation_gradient(build_face_domains(unit_tet)[0], u)


class TestElectricField:
    def test_constant(self, two_tets):
        F = np.broadcast_to(np.eye(3), (2, 3, 3))
        for d in build_face_domains(two_tets):
            np.testing.assert_allclose(smooth_electric_field(d, np.full(5, 3.0), F), 0.0, atol=1e-14)

    @pytest.mark.parametrize("build", BUILDERS)
    def test_linear_undeformed(self, build):
        mesh = _perturbed_cube()
        c = 7.0
        F = np.broadcast_to(np.eye(3), (mesh.n_elems, 3, 3))
        for d in build(mesh):
            np.testing.assert_allclose(smooth_electric_field(d, c * mesh.nodes[:, 0], F), [-c, 0, 0], atol=1e-12)

    def test_deformed_element_oracle(self, two_tets, rng):
        u = 0.1 * rng.standard_normal((5, 3))
        phi = rng.standard_normal(5)
        Fe = element_deformation_gradients(two_tets, u)
        grads = tet_shape_gradients(two_tets.nodes, two_tets.tets)
        Ee = []
        for e in range(2):
            gphi = sum(phi[two_tets.tets[e, a]] * grads[e, a] for a in range(4))
            Ee.append(-np.linalg.solve(Fe[e].T, gphi))
        for d in build_face_domains(two_tets) + build_node_domains(two_tets):
            w = _oracle_weights(two_tets, d)
            ref = sum(wi * Ee[e] for wi, e in zip(w, d.adjacent_elems))
            np.testing.assert_allclose(smooth_electric_field(d, phi, Fe), ref, atol=1e-13)

    def test_singular(self, unit_tet):
        d = build_face_domains(unit_tet)[0]
        with pytest.raises(np.linalg.LinAlgError):
            smooth_electric_field(d, np.zeros(4), np.zeros((1, 3, 3)))


class TestNodalAverage:
    def test_constant(self, two_tets):
        for d in build_node_domains(two_tets):
            assert smooth_nodal_average(d, np.full(5, 2.5)) == pytest.approx(2.5)

    def test_single_tet(self, unit_tet):
        for d in build_face_domains(unit_tet) + build_node_domains(unit_tet):
            assert smooth_nodal_average(d, np.array([0, 0, 0, 4.0])) == pytest.approx(1.0)

    def test_oracle(self, two_tets, rng):
        vals = rng.standard_normal(5)
        for d in build_face_domains(two_tets) + build_node_domains(two_tets):
            w = _oracle_weights(two_tets, d)
            ref = sum(wi * vals[two_tets.tets[e]].mean() for wi, e in zip(w, d.adjacent_elems))
            assert smooth_nodal_average(d, vals) == pytest.approx(ref, abs=1e-14)

    def test_vector_field(self, two_tets, rng):
        u = rng.standard_normal((5, 3))
        d = build_node_domains(two_tets)[0]
        out = smooth_nodal_average(d, u)
        assert out.shape == (3,)
        np.testing.assert_allclose(out, [smooth_nodal_average(d, u[:, i]) for i in range(3)])


def _rot_about(axis, th):
    a = np.asarray(axis, float)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * K @ K


class TestFiberFrame:
    def test_identical(self, two_tets):
        fr = np.array([[0.6, 0.8, 0], [0, 0, 1], [0.8, -0.6, 0]])
        d = build_face_domains(two_tets)[0]
        out = smooth_fiber_frame(d, np.stack([fr, fr]))
        np.testing.assert_allclose(out.as_matrix(), fr, atol=1e-15)

    @given(st.floats(0.01, 1.5))
    def test_bisects_rotation(self, th):
        s = np.array([0, 0, 1.0])
        f = np.array([1.0, 0, 0])
        frames = []
        for sgn in (1, -1):
            R = _rot_about(s, sgn * th)
            frames.append([R @ f, s, np.cross(R @ f, s)])
        d = build_face_domains(TetMesh(np.vstack([np.eye(4, 3, k=-1), [[0, 0, -1]]]), [[0, 1, 2, 3], [0, 2, 1, 4]]))
        inner = next(x for x in d if x.n_adjacent == 2)
        out = smooth_fiber_frame(inner, np.array(frames))
        np.testing.assert_allclose(out.f0, f, atol=1e-12)
        np.testing.assert_allclose(out.s0, s, atol=1e-12)

    def test_antipodal(self, two_tets):
        a = np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1]])
        b = np.array([[-1.0, 0, 0], [0, 1, 0], [0, 0, -1]])
        inner = next(x for x in build_face_domains(two_tets) if x.n_adjacent == 2)
        with pytest.raises(AntipodalFiberError):
            smooth_fiber_frame(inner, np.stack([a, b]))

    @given(arrays(np.float64, (3, 3), elements=st.floats(-1, 1)))
    def test_orthonormal(self, m):
        try:
            out = orthonormalize_frames(m[None])[0]
        except AntipodalFiberError:
            return
        np.testing.assert_allclose(out @ out.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(out) == pytest.approx(1.0, abs=1e-12)

    def test_matrix_round_trip(self):
        fr = FiberFrame(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([0, 0, 1.0]))
        assert np.array_equal(FiberFrame.from_matrix(fr.as_matrix()).as_matrix(), fr.as_matrix())


@given(arrays(np.float64, (3, 3), elements=st.floats(-0.3, 0.3)), st.integers(0, 1))
def test_patch_property(A, which):
    mesh = generate_cube_mesh(1.0, 2, "tet")
    u = mesh.nodes @ A.T
    if np.linalg.det(np.eye(3) + A) <= 0.05:
        return
    for d in BUILDERS[which](mesh):
        np.testing.assert_allclose(smooth_deformation_gradient(d, u), np.eye(3) + A, atol=1e-12)
