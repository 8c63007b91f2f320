"""Residual and tangent assembly for TET, FS, NS, FSNS and HEX discretisations.

Every integration site (tet element, face or node smoothing domain, hex Gauss
point) is one row of an :class:`IntegrationFamily`: a list of support nodes
with constant material gradients, a reference volume and nodal averaging
weights. Each family evaluates the stress parts it owns, so the selective
FSNS scheme is two families sharing the same dof vector.

Nodal dofs are interleaved as (u_x, u_y, u_z, phi), i.e. dof = 4 * node + c.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import constitutive as cm
from .mesh import HexMesh, TetMesh, hex_gauss_data, hex_shape_functions, tet_shape_gradients
from .smoothing import (
    InvertedDomainError,
    SmoothingDomain,
    build_face_domains,
    build_node_domains,
    smooth_fiber_frames,
)

METHODS = ("tet", "fs", "ns", "fsns", "hex")
DOFS_PER_NODE = 4
ALL_PARTS = ("act", "vol", "iso")


class MethodMeshMismatch(ValueError):
    pass


@dataclass(frozen=True)
class MethodConfig:
    method: str
    material: str  # "dielectric" | "myocardium"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.material not in ("dielectric", "myocardium"):
            raise ValueError(f"unknown material {self.material!r}")

    def check_mesh(self, mesh) -> None:
        if self.method == "hex" and not isinstance(mesh, HexMesh):
            raise MethodMeshMismatch("HEX method requires a hexahedral mesh")
        if self.method != "hex" and not isinstance(mesh, TetMesh):
            raise MethodMeshMismatch(f"{self.method.upper()} method requires a tetrahedral mesh")


def material_kind(material) -> str:
    if isinstance(material, cm.DielectricParams):
        return "dielectric"
    if isinstance(material, cm.MyocardiumParams):
        return "myocardium"
    raise TypeError(f"unsupported material {type(material).__name__}")


@dataclass(frozen=True, eq=False)
class IntegrationFamily:
    name: str
    conn: np.ndarray  # (n, s) support nodes, padded entries carry zero gradient/weight
    grads: np.ndarray  # (n, s, 3) material gradients dN/dX
    weights: np.ndarray  # (n,) reference volume
    avg: np.ndarray  # (n, s) nodal averaging weights
    parts: tuple[str, ...]
    electric: bool
    frames: np.ndarray | None = None  # (n, 3, 3) rows f0, s0, n0
    owner: np.ndarray | None = None  # element id per row (hex Gauss points)

    @property
    def size(self) -> int:
        return len(self.weights)


@dataclass(frozen=True, eq=False)
class ReactionFamily:
    """Transient and source terms of the excitation equation, always element based."""

    conn: np.ndarray  # (n, s)
    mass: np.ndarray  # (n, s, s) consistent mass over the reference volume
    src_N: np.ndarray  # (n, q, s) shape functions at source points
    src_w: np.ndarray  # (n, q) source point weights


@dataclass(eq=False)
class SystemState:
    time: float
    u: np.ndarray  # (N, 3)
    phi: np.ndarray  # (N,)
    phi_n: np.ndarray  # (N,)
    T: dict[str, np.ndarray] = field(default_factory=dict)  # active tension per family row
    r: np.ndarray | None = None  # recovery variable per source point

    def copy(self) -> "SystemState":
        return SystemState(
            self.time,
            self.u.copy(),
            self.phi.copy(),
            self.phi_n.copy(),
            {k: v.copy() for k, v in self.T.items()},
            None if self.r is None else self.r.copy(),
        )

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.u, self.phi[:, None]], axis=1).ravel()

    def set_x(self, x: np.ndarray) -> None:
        x = x.reshape(-1, DOFS_PER_NODE)
        self.u = x[:, :3].copy()
        self.phi = x[:, 3].copy()


@dataclass(frozen=True, eq=False)
class Discretization:
    config: MethodConfig
    material: object
    n_nodes: int
    families: tuple[IntegrationFamily, ...]
    reaction: ReactionFamily | None
    domains: dict[str, list[SmoothingDomain]]
    _pattern: dict = field(default_factory=dict, repr=False)

    @property
    def n_dofs(self) -> int:
        return DOFS_PER_NODE * self.n_nodes

    def initial_state(self, phi0: float = 0.0) -> SystemState:
        n = self.n_nodes
        phi = np.full(n, float(phi0))
        T = {f.name: np.zeros(f.size) for f in self.families if "act" in f.parts}
        r = None
        if self.reaction is not None:
            r = np.zeros(self.reaction.src_w.shape)
        return SystemState(0.0, np.zeros((n, 3)), phi, phi.copy(), T, r)


@dataclass(frozen=True, eq=False)
class LocalContribution:
    nodes: np.ndarray  # (s,)
    R: np.ndarray  # (s, 4): R_u (3) and R_phi per node
    K: np.ndarray  # (s, 4, s, 4)

    @property
    def K_uu(self):
        return self.K[:, :3, :, :3]

    @property
    def K_uphi(self):
        return self.K[:, :3, :, 3]

    @property
    def K_phiu(self):
        return self.K[:, 3, :, :3]

    @property
    def K_phiphi(self):
        return self.K[:, 3, :, 3]


@dataclass(frozen=True, eq=False)
class GlobalSystem:
    K: sp.csr_matrix
    R: np.ndarray
    constrained: np.ndarray


# ---------------------------------------------------------------------------
# building families
# ---------------------------------------------------------------------------


def _pack_domains(name, domains, parts, electric, frames=None) -> IntegrationFamily:
    s = max(len(d.support_nodes) for d in domains)
    n = len(domains)
    conn = np.zeros((n, s), dtype=np.int64)
    grads = np.zeros((n, s, 3))
    avg = np.zeros((n, s))
    for i, d in enumerate(domains):
        k = len(d.support_nodes)
        conn[i, :k] = d.support_nodes
        conn[i, k:] = d.support_nodes[0]
        grads[i, :k] = d.smoothed_gradients
        avg[i, :k] = d.average_weights
    w = np.array([d.volume for d in domains])
    return IntegrationFamily(name, conn, grads, w, avg, tuple(parts), electric, frames)


def tet_family(mesh: TetMesh, parts=ALL_PARTS, electric=True, frames=None) -> IntegrationFamily:
    grads = tet_shape_gradients(mesh.nodes, mesh.tets)
    avg = np.full(mesh.tets.shape, 0.25)
    return IntegrationFamily("tet", mesh.tets.copy(), grads, mesh.volumes.copy(), avg, tuple(parts), electric, frames)


def hex_gauss_points(mesh: HexMesh) -> np.ndarray:
    _, _, N = hex_gauss_data(mesh.nodes, mesh.hexes)
    return np.einsum("qa,mai->mqi", N, mesh.nodes[mesh.hexes]).reshape(-1, 3)


def hex_family(mesh: HexMesh, parts=ALL_PARTS, electric=True, frames=None) -> IntegrationFamily:
    grads, detj, N = hex_gauss_data(mesh.nodes, mesh.hexes)
    m = mesh.n_elems
    conn = np.repeat(mesh.hexes, 8, axis=0)
    avg = np.tile(N, (m, 1))
    owner = np.repeat(np.arange(m), 8)
    return IntegrationFamily(
        "hex", conn, grads.reshape(-1, 8, 3), detj.ravel(), avg, tuple(parts), electric, frames, owner
    )


def hex_centroid_family(mesh: HexMesh, parts=("vol",)) -> IntegrationFamily:
    """One point per hexahedron at its centre, weighted by the element volume."""
    _, dN = hex_shape_functions(np.zeros((1, 3)))
    jac = np.einsum("mai,aj->mij", mesh.nodes[mesh.hexes], dN[0])
    grads = np.einsum("aj,mji->mai", dN[0], np.linalg.inv(jac))
    avg = np.full(mesh.hexes.shape, 0.125)
    return IntegrationFamily(
        "hex_centre", mesh.hexes.copy(), grads, mesh.volumes.copy(), avg, tuple(parts), False
    )


def tet_reaction(mesh: TetMesh) -> ReactionFamily:
    V = mesh.volumes
    base = (np.ones((4, 4)) + np.eye(4)) / 20.0  # exact linear-tet mass: V/10 diagonal, V/20 off
    mass = V[:, None, None] * base
    src_N = np.full((mesh.n_elems, 1, 4), 0.25)
    return ReactionFamily(mesh.tets.copy(), mass, src_N, V[:, None].copy())


def hex_reaction(mesh: HexMesh) -> ReactionFamily:
    _, detj, N = hex_gauss_data(mesh.nodes, mesh.hexes)
    mass = np.einsum("mq,qa,qb->mab", detj, N, N)
    src_N = np.broadcast_to(N, (mesh.n_elems, 8, 8)).copy()
    return ReactionFamily(mesh.hexes.copy(), mass, src_N, detj.copy())


def build_discretization(
    method: str, mesh, material, frame_fn=None, hex_volumetric: str = "full"
) -> Discretization:
    """Integration families for ``method`` following the method/term dispatch.

    ``frame_fn`` maps points (n, 3) to fiber frames (n, 3, 3); it is required for
    the myocardium and evaluated at tet centroids or hex Gauss points.
    """
    kind = material_kind(material)
    cfg = MethodConfig(method, kind)
    cfg.check_mesh(mesh)
    myo = kind == "myocardium"
    if myo and frame_fn is None:
        raise ValueError("myocardium requires a fiber frame function")

    domains: dict[str, list[SmoothingDomain]] = {}
    elem_frames = None
    if myo and method != "hex":
        elem_frames = np.asarray(frame_fn(mesh.nodes[mesh.tets].mean(axis=1)))

    if method == "hex":
        frames = np.asarray(frame_fn(hex_gauss_points(mesh))) if myo else None
        if hex_volumetric == "full":
            families = (hex_family(mesh, frames=frames),)
        elif hex_volumetric == "selective":
            families = (hex_family(mesh, ("act", "iso"), frames=frames), hex_centroid_family(mesh))
        else:
            raise ValueError(f"hex_volumetric must be 'full' or 'selective', got {hex_volumetric!r}")
    elif method == "tet":
        families = (tet_family(mesh, frames=elem_frames),)
    else:
        if method in ("fs", "fsns"):
            domains["face"] = build_face_domains(mesh)
        if method in ("ns", "fsns"):
            domains["node"] = build_node_domains(mesh)

        def frames_for(key):
            return smooth_fiber_frames(domains[key], elem_frames) if myo else None

        if method == "fs":
            families = (_pack_domains("face", domains["face"], ALL_PARTS, True, frames_for("face")),)
        elif method == "ns":
            families = (_pack_domains("node", domains["node"], ALL_PARTS, True, frames_for("node")),)
        else:
            families = (
                _pack_domains("face", domains["face"], ("act", "iso"), True, frames_for("face")),
                _pack_domains("node", domains["node"], ("vol",), False, None),
            )

    reaction = None
    if myo:
        reaction = hex_reaction(mesh) if method == "hex" else tet_reaction(mesh)
    return Discretization(cfg, material, mesh.n_nodes, families, reaction, domains)


# ---------------------------------------------------------------------------
# local evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PointResponse:
    """Constitutive response at every row of a family."""

    vol: np.ndarray  # current volume J * W
    g: np.ndarray  # (n, s, 3) spatial gradients
    sigma: np.ndarray
    c: np.ndarray
    c_uE: np.ndarray | None  # (n, 3, 3, 3): -dsigma/dE  (dielectric)
    c_uphi: np.ndarray | None  # (n, 3, 3): dsigma/dphi_k (myocardium)
    v: np.ndarray | None  # D or q
    c_phiu: np.ndarray | None
    c_phiphi: np.ndarray | None
    T: np.ndarray | None
    dT: np.ndarray | None


def evaluate_family(fam: IntegrationFamily, material, u, phi, T_n=None, dt=None) -> PointResponse:
    U = u[fam.conn]
    F = np.eye(3) + np.einsum("nai,naj->nij", U, fam.grads)
    J = np.linalg.det(F)
    if np.any(J <= 0.0):
        bad = int(np.argmax(J <= 0.0))
        raise InvertedDomainError(f"non-positive Jacobian in {fam.name} row {bad}")
    Finv = np.linalg.inv(F)
    g = np.einsum("nji,naj->nai", Finv, fam.grads)
    E = -np.einsum("na,nai->ni", phi[fam.conn], g)
    kin = cm.kinematics(F, E)
    vol = J * fam.weights
    n = fam.size
    T = dT = None
    if isinstance(material, cm.DielectricParams):
        sigma = cm.dielectric_stress(kin, material, fam.parts)
        tang = cm.dielectric_tangents(kin, material, fam.parts)
        c = tang["C_uu"]
        c_uE = tang["C_uphi"] if "act" in fam.parts else None
        c_uphi = None
        if fam.electric:
            v = cm.electric_displacement(E, material.eps)
            c_phiu = -material.eps * np.einsum("nk,il->nikl", E, cm.I3)
            c_phiphi = -material.eps * np.broadcast_to(cm.I3, (n, 3, 3))
        else:
            v = c_phiu = c_phiphi = None
    else:
        ho = material.passive
        sigma = cm.ho_passive_stress(kin, fam.frames, ho, fam.parts)
        c = cm.ho_tangent(kin, fam.frames, ho, fam.parts)
        c_uE = None
        c_uphi = None
        if "act" in fam.parts:
            phik = np.einsum("na,na->n", phi[fam.conn], fam.avg)
            T, dT = cm.active_tension_step(T_n, phik, dt, material.active)
            f0 = fam.frames[:, 0, :]
            sigma = sigma + cm.myo_active_stress(kin, T, f0)
            c_uphi = cm.myo_active_stress(kin, dT, f0)
        if fam.electric:
            v = cm.flux(E, material.d)
            tang = cm.myo_coupling_tangents(kin, fam.frames[:, 0, :], np.zeros(n), material.d)
            c_phiu, c_phiphi = tang["C_phiu"], tang["C_phiphi"]
        else:
            v = c_phiu = c_phiphi = None
    return PointResponse(vol, g, sigma, c, c_uE, c_uphi, v, c_phiu, c_phiphi, T, dT)


def residual_mech(resp: PointResponse) -> np.ndarray:
    """R^a_u = -(grad N^a . sigma) v, shape (n, s, 3)."""
    return -resp.vol[:, None, None] * np.einsum("nij,naj->nai", resp.sigma, resp.g)


def residual_elec(resp: PointResponse) -> np.ndarray:
    """Flux / displacement part of R^a_phi = (grad N^a . D) v, shape (n, s)."""
    return resp.vol[:, None] * np.einsum("ni,nai->na", resp.v, resp.g)


def tangent_blocks(fam: IntegrationFamily, resp: PointResponse) -> np.ndarray:
    """Local tangents K = -dR/dx, shape (n, s, 4, s, 4)."""
    n, s = fam.conn.shape
    g, vol = resp.g, resp.vol
    K = np.zeros((n, s, 4, s, 4))
    cg = np.einsum("nijkl,nbl->nijkb", resp.c, g)
    kuu = np.einsum("naj,nijkb->naibk", g, cg)
    geo = np.einsum("naj,njl,nbl->nab", g, resp.sigma, g)
    kuu += geo[:, :, None, :, None] * np.eye(3)[None, None, :, None, :]
    K[:, :, :3, :, :3] = vol[:, None, None, None, None] * kuu
    if resp.c_uE is not None:
        K[:, :, :3, :, 3] = vol[:, None, None, None] * np.einsum("naj,nijm,nbm->naib", g, resp.c_uE, g)
    if resp.c_uphi is not None:
        K[:, :, :3, :, 3] = vol[:, None, None, None] * np.einsum("naj,nij,nb->naib", g, resp.c_uphi, fam.avg)
    if resp.v is not None:
        v = resp.v
        e = (
            np.einsum("ni,kl->nikl", v, cm.I3)
            - np.einsum("ik,nl->nikl", cm.I3, v)
            + resp.c_phiu
        )
        K[:, :, 3, :, :3] = -vol[:, None, None, None] * np.einsum("nai,nikl,nbl->nabk", g, e, g)
        K[:, :, 3, :, 3] = -vol[:, None, None] * np.einsum("nai,nij,nbj->nab", g, resp.c_phiphi, g)
    return K


def family_contributions(fam, material, state: SystemState, dt):
    """Local residuals (n, s, 4) and tangents (n, s, 4, s, 4) of one family."""
    T_n = state.T.get(fam.name)
    resp = evaluate_family(fam, material, state.u, state.phi, T_n, dt)
    R = np.zeros(fam.conn.shape + (4,))
    R[..., :3] = residual_mech(resp)
    if resp.v is not None:
        R[..., 3] = residual_elec(resp)
    return R, tangent_blocks(fam, resp), resp


def residual_elec_myo_reaction(rf: ReactionFamily, material, phi, phi_n, r, dt):
    """Transient and source parts of R_phi and their K_phiphi, on elements."""
    if dt <= 0:
        raise ValueError("time increment must be positive")
    ph = phi[rf.conn]
    dphi = (ph - phi_n[rf.conn]) / dt
    phi_q = np.einsum("nqa,na->nq", rf.src_N, ph)
    I, _, dI = cm.ap_source(phi_q, r, dt, material.ap)
    R = np.einsum("nab,nb->na", rf.mass, dphi) - np.einsum("nq,nqa,nq->na", rf.src_w, rf.src_N, I)
    K = -rf.mass / dt + np.einsum("nq,nqa,nq,nqb->nab", rf.src_w, rf.src_N, dI, rf.src_N)
    return R, K


def local_contribution(disc: Discretization, family: str, index: int, state: SystemState, dt) -> LocalContribution:
    """Local residual/tangent of one element or smoothing domain (debugging aid)."""
    fam = next(f for f in disc.families if f.name == family)
    sub = _subset(fam, [index])
    st = state.copy()
    if fam.name in st.T:
        st.T[fam.name] = st.T[fam.name][[index]]
    R, K, _ = family_contributions(sub, disc.material, st, dt)
    return LocalContribution(sub.conn[0], R[0], K[0])


def hex_element(disc: Discretization, elem: int, state: SystemState, dt) -> LocalContribution:
    """Residual and tangent of one hexahedron (2x2x2 Gauss points, plus the centre point if selective)."""
    if disc.config.method != "hex":
        raise MethodMeshMismatch("hex_element needs a HEX discretisation")
    R = K = None
    for fam in disc.families:
        rows = np.arange(8 * elem, 8 * elem + 8) if fam.name == "hex" else np.array([elem])
        sub = _subset(fam, rows)
        st = state.copy()
        if fam.name in st.T:
            st.T[fam.name] = st.T[fam.name][rows]
        Rf, Kf, _ = family_contributions(sub, disc.material, st, dt)
        # every hex row lists the element nodes in the same order
        R = Rf.sum(axis=0) if R is None else R + Rf.sum(axis=0)
        K = Kf.sum(axis=0) if K is None else K + Kf.sum(axis=0)
    if disc.reaction is not None:
        rf = disc.reaction
        sub_rf = ReactionFamily(rf.conn[[elem]], rf.mass[[elem]], rf.src_N[[elem]], rf.src_w[[elem]])
        Rr, Kr = residual_elec_myo_reaction(sub_rf, disc.material, state.phi, state.phi_n, state.r[[elem]], dt)
        R[:, 3] += Rr[0]
        K[:, 3, :, 3] += Kr[0]
    return LocalContribution(disc.families[0].conn[8 * elem], R, K)


def _subset(fam: IntegrationFamily, rows) -> IntegrationFamily:
    rows = np.asarray(rows)
    return IntegrationFamily(
        fam.name,
        fam.conn[rows],
        fam.grads[rows],
        fam.weights[rows],
        fam.avg[rows],
        fam.parts,
        fam.electric,
        None if fam.frames is None else fam.frames[rows],
        None if fam.owner is None else fam.owner[rows],
    )


# ---------------------------------------------------------------------------
# global assembly
# ---------------------------------------------------------------------------


def _local_dofs(conn):
    return (DOFS_PER_NODE * conn[..., None] + np.arange(DOFS_PER_NODE)).reshape(conn.shape[0], -1)


def _pattern(disc: Discretization):
    """CSR structure and scatter maps, computed once per discretisation."""
    if "csr" in disc._pattern:
        return disc._pattern["csr"]
    rows, cols = [], []
    blocks = [f.conn for f in disc.families]
    if disc.reaction is not None:
        blocks.append(disc.reaction.conn)
    for i, conn in enumerate(blocks):
        d = _local_dofs(conn)
        if disc.reaction is not None and i == len(blocks) - 1:
            d = DOFS_PER_NODE * conn + 3
        m = d.shape[1]
        rows.append(np.repeat(d, m, axis=1).ravel())
        cols.append(np.tile(d, (1, m)).ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    n = disc.n_dofs
    key = rows * n + cols
    uniq, scatter = np.unique(key, return_inverse=True)
    indptr = np.searchsorted(uniq // n, np.arange(n + 1))
    indices = uniq % n
    disc._pattern["csr"] = (indptr, indices, scatter.ravel(), len(uniq))
    return disc._pattern["csr"]


def assemble(disc: Discretization, state: SystemState, dt: float, constrained=None) -> GlobalSystem:
    """Global tangent K = -dR/dx and residual R.

    Contributions are summed family by family in row order, so repeated calls
    on the same state give bit-identical results. Constrained dofs become
    identity rows/columns with zero residual.
    """
    n = disc.n_dofs
    indptr, indices, scatter, nnz = _pattern(disc)
    R = np.zeros(n)
    kvals = []
    for fam in disc.families:
        Rl, Kl, _ = family_contributions(fam, disc.material, state, dt)
        R += np.bincount(_local_dofs(fam.conn).ravel(), weights=Rl.ravel(), minlength=n)
        kvals.append(Kl.reshape(fam.size, -1).ravel())
    if disc.reaction is not None:
        rf = disc.reaction
        Rr, Kr = residual_elec_myo_reaction(rf, disc.material, state.phi, state.phi_n, state.r, dt)
        R += np.bincount((DOFS_PER_NODE * rf.conn + 3).ravel(), weights=Rr.ravel(), minlength=n)
        kvals.append(Kr.ravel())
    data = np.bincount(scatter, weights=np.concatenate(kvals), minlength=nnz)
    K = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    if constrained is None:
        constrained = np.zeros(n, dtype=bool)
    else:
        constrained = np.asarray(constrained, dtype=bool)
        K, R = apply_dirichlet(K, R, constrained)
    return GlobalSystem(K, R, constrained)


def apply_dirichlet(K: sp.csr_matrix, R: np.ndarray, constrained: np.ndarray):
    free = (~constrained).astype(float)
    D = sp.diags(free)
    K = (D @ K @ D + sp.diags(constrained.astype(float))).tocsr()
    R = np.where(constrained, 0.0, R)
    return K, R


def update_history(disc: Discretization, state: SystemState, dt: float) -> None:
    """Advance T (backward Euler at the converged potential) and r (explicit Euler)."""
    mat = disc.material
    if not isinstance(mat, cm.MyocardiumParams):
        return
    for fam in disc.families:
        if "act" in fam.parts:
            phik = np.einsum("na,na->n", state.phi[fam.conn], fam.avg)
            state.T[fam.name], _ = cm.active_tension_step(state.T[fam.name], phik, dt, mat.active)
    rf = disc.reaction
    phi_q = np.einsum("nqa,na->nq", rf.src_N, state.phi[rf.conn])
    _, state.r, _ = cm.ap_source(phi_q, state.r, dt, mat.ap)
