"""Residuals, tangents and global assembly for every discretisation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothfem import assembly as asm
from smoothfem import constitutive as cm
from smoothfem.mesh import extract_faces
from smoothfem.scenarios import fiber_frames, generate_cube_mesh
from smoothfem.smoothing import build_face_domains, build_node_domains, smooth_deformation_gradient

DIE = cm.DielectricParams()
MYO = cm.MyocardiumParams()
TET_METHODS = ("tet", "fs", "ns", "fsns")


def frames_fn(pts):
    return fiber_frames(pts, 1.0)


def disc_for(method, material, n=2, hex_volumetric="full"):
    mesh = generate_cube_mesh(1.0, n, "hex" if method == "hex" else "tet")
    fn = frames_fn if isinstance(material, cm.MyocardiumParams) else None
    return asm.build_discretization(method, mesh, material, fn, hex_volumetric)


def random_state(disc, rng, du=0.05, dphi=20.0):
    myo = isinstance(disc.material, cm.MyocardiumParams)
    st_ = disc.initial_state(-80.0 if myo else 0.0)
    st_.u = du * rng.standard_normal(st_.u.shape)
    st_.phi = st_.phi + dphi * rng.standard_normal(st_.phi.shape)
    if myo:
        st_.phi_n = st_.phi + 2.0 * rng.standard_normal(st_.phi.shape)
        st_.T = {k: rng.uniform(0, 0.5, v.shape) for k, v in st_.T.items()}
        st_.r = rng.uniform(0, 0.3, st_.r.shape)
    return st_


def fd_tangent(disc, st_, dt=1.0, h=1e-7):
    x0 = st_.x
    K = np.zeros((len(x0), len(x0)))
    for j in range(len(x0)):
        hj = h * max(1.0, abs(x0[j]))
        for sgn in (1, -1):
            s = st_.copy()
            x = x0.copy()
            x[j] += sgn * hj
            s.set_x(x)
            K[:, j] -= sgn * asm.assemble(disc, s, dt).R / (2 * hj)
    return K


def affine_state(disc, A, c=None):
    st_ = disc.initial_state()
    X = generate_cube_mesh(1.0, 2, "hex" if disc.config.method == "hex" else "tet").nodes
    st_.u = X @ A.T
    if c is not None:
        st_.phi = (X + st_.u) @ c
    return st_


class TestConfig:
    def test_unknown_method(self):
        with pytest.raises(ValueError):
            asm.MethodConfig("xfem", "dielectric")

    def test_mesh_mismatch(self):
        tet = generate_cube_mesh(1.0, 2, "tet")
        hexm = generate_cube_mesh(1.0, 2, "hex")
        with pytest.raises(asm.MethodMeshMismatch):
            asm.build_discretization("hex", tet, DIE)
        for m in TET_METHODS:
            with pytest.raises(asm.MethodMeshMismatch):
                asm.build_discretization(m, hexm, DIE)

    def test_myocardium_needs_frames(self):
        with pytest.raises(ValueError):
            asm.build_discretization("tet", generate_cube_mesh(1.0, 2, "tet"), MYO)

    def test_bad_hex_volumetric(self):
        with pytest.raises(ValueError):
            disc_for("hex", DIE, hex_volumetric="reduced")

    def test_domain_counts(self):
        mesh = generate_cube_mesh(1.0, 3, "tet")
        ns = asm.build_discretization("ns", mesh, DIE)
        fs = asm.build_discretization("fs", mesh, DIE)
        assert ns.families[0].size == mesh.n_nodes
        assert fs.families[0].size == len(extract_faces(mesh))

    def test_fsns_families(self):
        d = disc_for("fsns", DIE, 3)
        face, node = d.families
        assert face.parts == ("act", "iso") and face.electric
        assert node.parts == ("vol",) and not node.electric

    def test_myocardium_reaction_on_elements(self):
        for m in TET_METHODS:
            d = disc_for(m, MYO)
            assert d.reaction.conn.shape == (6, 4)


class TestResidual:
    @pytest.mark.parametrize("method", asm.METHODS)
    @pytest.mark.parametrize("material", [DIE, MYO], ids=["die", "myo"])
    def test_rest_state_zero(self, method, material):
        d = disc_for(method, material)
        st_ = d.initial_state(-80.0 if material is MYO else 0.0)
        np.testing.assert_allclose(asm.assemble(d, st_, 1.0).R, 0.0, atol=1e-12)

    def test_uniform_pressure_single_tet(self, unit_tet):
        a = 0.01
        d = asm.build_discretization("tet", unit_tet, DIE)
        st_ = d.initial_state()
        st_.u = a * unit_tet.nodes
        R = asm.assemble(d, st_, 1.0).R.reshape(-1, 4)
        J = (1 + a) ** 3
        p = DIE.kappa * (J - 1)
        g = asm.tet_shape_gradients(unit_tet.nodes, unit_tet.tets)[0] / (1 + a)
        np.testing.assert_allclose(R[:, :3], -p * g * J / 6.0, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(R[:, :3].sum(axis=0), 0.0, atol=1e-12)

    def test_constant_displacement_field_single_tet(self, unit_tet):
        d = asm.build_discretization("tet", unit_tet, DIE)
        st_ = d.initial_state()
        st_.phi = np.array([0.0, -3.0, 1.0, 2.0])
        R = asm.assemble(d, st_, 1.0).R.reshape(-1, 4)
        assert abs(R[:, 3].sum()) < 1e-12
        assert np.abs(R[:, 3]).max() > 0

    @pytest.mark.parametrize("method", ["fs", "ns"])
    def test_domain_loop_oracle(self, method, rng):
        mesh = generate_cube_mesh(1.0, 3, "tet")
        d = asm.build_discretization(method, mesh, DIE)
        st_ = random_state(d, rng)
        R = asm.assemble(d, st_, 1.0).R.reshape(-1, 4)
        doms = build_face_domains(mesh) if method == "fs" else build_node_domains(mesh)
        ref = np.zeros_like(R)
        for dom in doms:
            F = smooth_deformation_gradient(dom, st_.u)
            Finv = np.linalg.inv(F)
            g = dom.smoothed_gradients @ Finv
            E = -(st_.phi[dom.support_nodes] @ g)
            sig = cm.dielectric_stress(cm.kinematics(F, E), DIE)
            v = np.linalg.det(F) * dom.volume
            ref[dom.support_nodes, :3] -= v * g @ sig
            ref[dom.support_nodes, 3] += v * g @ (DIE.eps * E)
        np.testing.assert_allclose(R, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())

    @pytest.mark.parametrize("material", [DIE, MYO], ids=["die", "myo"])
    def test_homogeneous_state_methods_agree(self, material):
        # under an affine field every method integrates the same constant stress
        A = np.array([[0.02, 0.01, 0.0], [0.0, -0.01, 0.015], [0.005, 0.0, 0.01]])
        c = np.array([3.0, -1.0, 2.0])
        Rs = {}
        const = np.array([[0.6, 0.8, 0.0], [0.0, 0.0, 1.0], [0.8, -0.6, 0.0]])

        def uniform_frames(pts):
            return np.broadcast_to(const, (len(pts), 3, 3))

        for m in TET_METHODS:
            mesh = generate_cube_mesh(1.0, 2, "tet")
            fn = uniform_frames if material is MYO else None
            d = asm.build_discretization(m, mesh, material, fn)
            st_ = affine_state(d, A, c if material is DIE else None)
            if material is MYO:
                st_.phi = np.full(d.n_nodes, -80.0)
                st_.phi_n = st_.phi.copy()
            Rs[m] = asm.assemble(d, st_, 1.0).R
        scale = np.abs(Rs["tet"]).max()
        for m in ("fs", "ns", "fsns"):
            np.testing.assert_allclose(Rs[m], Rs["tet"], atol=1e-12 * scale)

    def test_fsns_parts_add_up(self, rng):
        d = disc_for("fsns", DIE, 3)
        A = 0.03 * rng.standard_normal((3, 3))
        st_ = d.initial_state()
        st_.u = generate_cube_mesh(1.0, 3, "tet").nodes @ A.T
        face, node = d.families
        Rf, _, rf = asm.family_contributions(face, DIE, st_, 1.0)
        Rn, _, rn = asm.family_contributions(node, DIE, st_, 1.0)
        full = cm.dielectric_stress(cm.kinematics(np.eye(3) + A, np.zeros(3)), DIE)
        np.testing.assert_allclose(rf.sigma[0] + rn.sigma[0], full, atol=1e-10 * np.abs(full).max())

    @settings(max_examples=15, deadline=None)
    @given(st.sampled_from(asm.METHODS), st.integers(0, 2**31 - 1))
    def test_self_equilibration(self, method, seed):
        rng = np.random.default_rng(seed)
        d = disc_for(method, DIE)
        st_ = random_state(d, rng)
        for fam in d.families:
            R, _, _ = asm.family_contributions(fam, DIE, st_, 1.0)
            scale = max(np.abs(R[..., :3]).max(), 1e-30)
            np.testing.assert_allclose(R[..., :3].sum(axis=1), 0.0, atol=1e-11 * scale)

    def test_potential_shift_invariance_dielectric(self, rng):
        for m in asm.METHODS:
            d = disc_for(m, DIE)
            st_ = random_state(d, rng)
            R0 = asm.assemble(d, st_, 1.0).R
            st_.phi = st_.phi + 37.0
            R1 = asm.assemble(d, st_, 1.0).R
            np.testing.assert_allclose(R1, R0, atol=1e-12 * np.abs(R0).max())


class TestReaction:
    def test_mass_row_sums(self, unit_tet):
        d = asm.build_discretization("tet", unit_tet, MYO, frames_fn)
        st_ = d.initial_state(20.0)  # normalised potential 1: the cubic source vanishes
        c, dt = 3.0, 0.5
        st_.phi_n = st_.phi - c
        R = asm.assemble(d, st_, dt).R.reshape(-1, 4)
        np.testing.assert_allclose(R[:, 3], c * (1 / 6) / (4 * dt), rtol=1e-12)

    def test_consistent_mass_entries(self, unit_tet):
        rf = asm.tet_reaction(unit_tet)
        V = 1 / 6
        np.testing.assert_allclose(np.diag(rf.mass[0]), V / 10, rtol=1e-14)
        np.testing.assert_allclose(rf.mass[0][0, 1:], V / 20, rtol=1e-14)

    def test_source_quarter_volume(self, unit_tet):
        d = asm.build_discretization("tet", unit_tet, MYO, frames_fn)
        st_ = d.initial_state(-30.0)
        I, _, _ = cm.ap_source(np.array([-30.0]), np.array([0.0]), 1.0, MYO.ap)
        R = asm.assemble(d, st_, 1.0).R.reshape(-1, 4)
        np.testing.assert_allclose(R[:, 3], -I[0] / 24.0, rtol=1e-12)

    def test_rest_is_equilibrium(self):
        for m in asm.METHODS:
            d = disc_for(m, MYO)
            st_ = d.initial_state(-80.0)
            # the isochoric projection of a * I leaves roundoff only
            np.testing.assert_allclose(asm.assemble(d, st_, 1.0).R, 0.0, atol=1e-13)

    def test_nonpositive_dt(self, unit_tet):
        d = asm.build_discretization("tet", unit_tet, MYO, frames_fn)
        with pytest.raises(ValueError):
            asm.assemble(d, d.initial_state(-80.0), 0.0)

    def test_history_update(self, unit_tet):
        d = asm.build_discretization("tet", unit_tet, MYO, frames_fn)
        st_ = d.initial_state(20.0)
        asm.update_history(d, st_, 1.0)
        T, _ = cm.active_tension_step(0.0, 20.0, 1.0, MYO.active)
        np.testing.assert_allclose(st_.T["tet"], T)
        _, r, _ = cm.ap_source(np.array([20.0]), np.array([0.0]), 1.0, MYO.ap)
        np.testing.assert_allclose(st_.r[:, 0], r)


class TestTangent:
    @pytest.mark.parametrize("method", asm.METHODS)
    @pytest.mark.parametrize("material", [DIE, MYO], ids=["die", "myo"])
    def test_fd_global(self, method, material, rng):
        d = disc_for(method, material)
        for _ in range(2):
            st_ = random_state(d, rng)
            K = asm.assemble(d, st_, 1.0).K.toarray()
            Kfd = fd_tangent(d, st_)
            assert np.linalg.norm(Kfd - K) / np.linalg.norm(K) < 1e-4

    @pytest.mark.parametrize("material", [DIE, MYO], ids=["die", "myo"])
    def test_fd_selective_hex(self, material, rng):
        d = disc_for("hex", material, hex_volumetric="selective")
        st_ = random_state(d, rng)
        K = asm.assemble(d, st_, 1.0).K.toarray()
        assert np.linalg.norm(fd_tangent(d, st_) - K) / np.linalg.norm(K) < 1e-4

    def test_laplacian_at_rest(self):
        mesh = generate_cube_mesh(1.0, 2, "tet")
        d = asm.build_discretization("tet", mesh, DIE)
        K = asm.assemble(d, d.initial_state(), 1.0).K.toarray()
        g = asm.tet_shape_gradients(mesh.nodes, mesh.tets)
        L = np.zeros((mesh.n_nodes, mesh.n_nodes))
        for e, conn in enumerate(mesh.tets):
            L[np.ix_(conn, conn)] += mesh.volumes[e] * g[e] @ g[e].T
        np.testing.assert_allclose(K[3::4, 3::4], DIE.eps * L, atol=1e-14)
        np.testing.assert_allclose(L.sum(axis=1), 0.0, atol=1e-14)

    def test_myocardium_rest_has_no_geometric_term(self):
        d = disc_for("tet", MYO)
        resp = asm.evaluate_family(d.families[0], MYO, np.zeros((8, 3)), np.full(8, -80.0), np.zeros(6), 1.0)
        np.testing.assert_allclose(resp.sigma, 0.0, atol=1e-13)

    def test_determinism(self, rng):
        for m in asm.METHODS:
            d = disc_for(m, MYO)
            st_ = random_state(d, rng)
            a, b = asm.assemble(d, st_, 1.0), asm.assemble(d, st_, 1.0)
            assert a.R.tobytes() == b.R.tobytes()
            assert a.K.data.tobytes() == b.K.data.tobytes()


class TestDirichlet:
    def test_identity_rows(self, rng):
        d = disc_for("fsns", DIE)
        st_ = random_state(d, rng)
        mask = np.zeros(d.n_dofs, dtype=bool)
        mask[[0, 5, 11, 31]] = True
        sys_ = asm.assemble(d, st_, 1.0, mask)
        K = sys_.K.toarray()
        for i in np.flatnonzero(mask):
            expect = np.zeros(d.n_dofs)
            expect[i] = 1.0
            np.testing.assert_array_equal(K[i], expect)
            np.testing.assert_array_equal(K[:, i], expect)
        np.testing.assert_array_equal(sys_.R[mask], 0.0)
        free = ~mask
        full = asm.assemble(d, st_, 1.0)
        np.testing.assert_array_equal(sys_.R[free], full.R[free])


class TestHexElement:
    def test_zero_state(self):
        d = disc_for("hex", DIE)
        lc = asm.hex_element(d, 0, d.initial_state(), 1.0)
        np.testing.assert_array_equal(lc.R[:, :3], 0.0)
        assert lc.K.shape == (8, 4, 8, 4)

    def test_affine_patch(self, rng):
        A = 0.05 * rng.standard_normal((3, 3))
        mesh = generate_cube_mesh(1.0, 3, "hex")
        d = asm.build_discretization("hex", mesh, DIE)
        fam = d.families[0]
        u = mesh.nodes @ A.T
        F = np.eye(3) + np.einsum("nai,naj->nij", u[fam.conn], fam.grads)
        np.testing.assert_allclose(F, np.broadcast_to(np.eye(3) + A, F.shape), atol=1e-13)
        resp = asm.evaluate_family(fam, DIE, u, np.zeros(mesh.n_nodes))
        np.testing.assert_allclose(resp.vol / fam.weights, np.linalg.det(np.eye(3) + A), rtol=1e-13)

    @pytest.mark.parametrize("hv", ["full", "selective"])
    @pytest.mark.parametrize("material", [DIE, MYO], ids=["die", "myo"])
    def test_matches_global_on_single_element(self, hv, material, rng):
        d = disc_for("hex", material, hex_volumetric=hv)
        st_ = random_state(d, rng)
        lc = asm.hex_element(d, 0, st_, 1.0)
        g = asm.assemble(d, st_, 1.0)
        perm = (4 * lc.nodes[:, None] + np.arange(4)).ravel()
        np.testing.assert_allclose(lc.R.ravel(), g.R[perm], rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(lc.K.reshape(32, 32), g.K.toarray()[np.ix_(perm, perm)], rtol=1e-12, atol=1e-12)

    def test_requires_hex(self):
        d = disc_for("tet", DIE)
        with pytest.raises(asm.MethodMeshMismatch):
            asm.hex_element(d, 0, d.initial_state(), 1.0)

    def test_inverted_gauss_point(self):
        d = disc_for("hex", DIE)
        st_ = d.initial_state()
        st_.u[:, 0] = -2.0 * generate_cube_mesh(1.0, 2, "hex").nodes[:, 0]
        with pytest.raises(asm.InvertedDomainError):
            asm.assemble(d, st_, 1.0)


def test_local_contribution_matches_family(rng):
    d = disc_for("fs", DIE)
    st_ = random_state(d, rng)
    R, K, _ = asm.family_contributions(d.families[0], DIE, st_, 1.0)
    lc = asm.local_contribution(d, "face", 3, st_, 1.0)
    np.testing.assert_array_equal(lc.R, R[3])
    np.testing.assert_array_equal(lc.K, K[3])
    assert lc.K_uu.shape[1] == 3 and lc.K_phiphi.shape == lc.K.shape[:1] + lc.K.shape[2:3]

