"""Face- and node-based smoothing domains on linear tetrahedral meshes.

Each linear tet contributes one quarter of its volume to each of its four
faces and to each of its four nodes, so a smoothing domain is fully described
by its adjacent elements and their quarter volumes. Smoothed quantities are
volume-weighted means of the element-wise ones.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .mesh import FaceKey, TetMesh, face_table, node_incidence, tet_shape_gradients


class InvertedDomainError(ArithmeticError):
    """Smoothed deformation gradient with non-positive determinant."""


class AntipodalFiberError(ValueError):
    pass


@dataclass(frozen=True)
class FiberFrame:
    f0: np.ndarray
    s0: np.ndarray
    n0: np.ndarray

    def as_matrix(self) -> np.ndarray:
        """Rows f0, s0, n0."""
        return np.array([self.f0, self.s0, self.n0])

    @classmethod
    def from_matrix(cls, m) -> "FiberFrame":
        m = np.asarray(m, dtype=float)
        return cls(m[0].copy(), m[1].copy(), m[2].copy())


@dataclass(frozen=True, eq=False)
class SmoothingDomain:
    kind: str  # "face" or "node"
    key: FaceKey | int
    adjacent_elems: tuple[int, ...]
    volume: float
    support_nodes: np.ndarray
    smoothed_gradients: np.ndarray  # (n_support, 3), dN/dX averaged over the domain
    average_weights: np.ndarray  # (n_support,), weights of the smoothed nodal average
    # element data kept for the element-wise (per adjacent tet) evaluations
    elem_nodes: np.ndarray  # (n_adj, 4)
    elem_gradients: np.ndarray  # (n_adj, 4, 3)
    elem_fractions: np.ndarray  # (n_adj,), V^e / (4 V^k)

    @property
    def n_adjacent(self) -> int:
        return len(self.adjacent_elems)


def _make_domain(kind, key, elems, mesh, grads) -> SmoothingDomain:
    elems = np.asarray(elems, dtype=np.int64)
    quarter = mesh.volumes[elems] / 4.0
    vk = quarter.sum()
    frac = quarter / vk
    enodes = mesh.tets[elems]
    support, local = np.unique(enodes, return_inverse=True)
    local = local.reshape(enodes.shape)
    g = np.zeros((len(support), 3))
    w = np.zeros(len(support))
    for i in range(len(elems)):
        g[local[i]] += frac[i] * grads[elems[i]]
        w[local[i]] += frac[i] * 0.25
    return SmoothingDomain(
        kind=kind,
        key=key,
        adjacent_elems=tuple(int(e) for e in elems),
        volume=float(vk),
        support_nodes=support,
        smoothed_gradients=g,
        average_weights=w,
        elem_nodes=enodes,
        elem_gradients=grads[elems],
        elem_fractions=frac,
    )


def build_face_domains(mesh: TetMesh) -> list[SmoothingDomain]:
    """One domain per mesh face, ordered by canonical face key."""
    keys, adj = face_table(mesh)
    grads = tet_shape_gradients(mesh.nodes, mesh.tets)
    return [
        _make_domain("face", tuple(int(v) for v in k), a[a >= 0], mesh, grads)
        for k, a in zip(keys, adj)
    ]


def build_node_domains(mesh: TetMesh) -> list[SmoothingDomain]:
    """One domain per mesh node, ordered by node id."""
    grads = tet_shape_gradients(mesh.nodes, mesh.tets)
    inc = node_incidence(mesh)
    if any(len(e) == 0 for e in inc):
        orphan = next(i for i, e in enumerate(inc) if len(e) == 0)
        raise ValueError(f"node {orphan} belongs to no element")
    return [_make_domain("node", i, e, mesh, grads) for i, e in enumerate(inc)]


# ---------------------------------------------------------------------------
# element-wise quantities
# ---------------------------------------------------------------------------


def element_deformation_gradients(mesh: TetMesh, u: np.ndarray) -> np.ndarray:
    grads = tet_shape_gradients(mesh.nodes, mesh.tets)
    return np.eye(3) + np.einsum("mai,maj->mij", np.asarray(u)[mesh.tets], grads)


def element_electric_fields(mesh: TetMesh, phi: np.ndarray, F: np.ndarray) -> np.ndarray:
    grads = tet_shape_gradients(mesh.nodes, mesh.tets)
    gphi = np.einsum("ma,maj->mj", np.asarray(phi)[mesh.tets], grads)
    return -np.einsum("mji,mj->mi", np.linalg.inv(F), gphi)


# ---------------------------------------------------------------------------
# smoothed quantities on one domain
# ---------------------------------------------------------------------------


def smooth_deformation_gradient(domain: SmoothingDomain, u: np.ndarray) -> np.ndarray:
    ua = np.asarray(u, dtype=float)[domain.support_nodes]
    F = np.eye(3) + ua.T @ domain.smoothed_gradients
    if np.linalg.det(F) <= 0.0:
        raise InvertedDomainError(f"inverted {domain.kind} domain {domain.key}")
    return F


def smooth_electric_field(
    domain: SmoothingDomain, phi: np.ndarray, elem_F: np.ndarray
) -> np.ndarray:
    """Volume-weighted mean of the element spatial fields -F^-T grad_X(phi).

    ``elem_F`` is indexed by global element id.
    """
    F = np.asarray(elem_F)[list(domain.adjacent_elems)]
    det = np.linalg.det(F)
    if np.any(np.abs(det) < 1e-14):
        raise np.linalg.LinAlgError("singular element deformation gradient")
    gphi = np.einsum("ea,eaj->ej", np.asarray(phi, dtype=float)[domain.elem_nodes], domain.elem_gradients)
    Ee = -np.einsum("eji,ej->ei", np.linalg.inv(F), gphi)
    return domain.elem_fractions @ Ee


def smooth_nodal_average(domain: SmoothingDomain, values: np.ndarray):
    vals = np.asarray(values, dtype=float)[domain.support_nodes]
    return np.tensordot(domain.average_weights, vals, axes=(0, 0))


def smooth_fiber_frame(domain: SmoothingDomain, elem_frames: np.ndarray) -> FiberFrame:
    """Arithmetic mean of adjacent element frames, re-orthonormalised.

    ``elem_frames`` has shape (n_elems, 3, 3) with rows f0, s0, n0.
    """
    m = np.asarray(elem_frames, dtype=float)[list(domain.adjacent_elems)].mean(axis=0)
    return FiberFrame.from_matrix(orthonormalize_frames(m[None])[0])


def orthonormalize_frames(frames: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Gram-Schmidt on rows (f, s) of each frame; n = f x s."""
    frames = np.asarray(frames, dtype=float)
    f = frames[:, 0]
    nf = np.linalg.norm(f, axis=1)
    if np.any(nf < tol):
        raise AntipodalFiberError("averaged fiber direction vanishes (antipodal fibers)")
    f = f / nf[:, None]
    s = frames[:, 1] - np.sum(frames[:, 1] * f, axis=1)[:, None] * f
    ns = np.linalg.norm(s, axis=1)
    if np.any(ns < tol):
        raise AntipodalFiberError("averaged sheet direction vanishes")
    s = s / ns[:, None]
    # second pass removes the residual f-component left by cancellation
    s = s - np.sum(s * f, axis=1)[:, None] * f
    s = s / np.linalg.norm(s, axis=1)[:, None]
    return np.stack([f, s, np.cross(f, s)], axis=1)


def smooth_fiber_frames(domains: list[SmoothingDomain], elem_frames: np.ndarray) -> np.ndarray:
    """Batched :func:`smooth_fiber_frame`, shape (n_domains, 3, 3)."""
    means = np.array([elem_frames[list(d.adjacent_elems)].mean(axis=0) for d in domains])
    return orthonormalize_frames(means)


def write_domain_table(domains: list[SmoothingDomain], path) -> None:
    """Debug CSV: one row per (domain, support node)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "key", "volume", "adjacent_elems", "node", "dNdX", "dNdY", "dNdZ"])
        for d in domains:
            key = "-".join(map(str, d.key)) if isinstance(d.key, tuple) else str(d.key)
            adj = " ".join(map(str, d.adjacent_elems))
            for a, g in zip(d.support_nodes, d.smoothed_gradients):
                w.writerow([d.kind, key, repr(d.volume), adj, int(a), *map(repr, g.tolist())])
