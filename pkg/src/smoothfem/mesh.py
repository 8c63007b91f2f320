"""Tetrahedral and hexahedral meshes: parsing, validation and topology queries.

Mesh text format (ASCII, 1-based ids, ``#`` starts a comment)::

    *NODES 4
    1 0.0 0.0 0.0
    ...
    *TETS 1            (or *HEXES m, 8 nodes per line)
    1 1 2 3 4
    *NSET top 2
    3 4

Node-set member ids may be spread over any number of lines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEGENERACY_TOL = 1e-12

# 2x2x2 Gauss rule on [-1, 1]^3
_G = 1.0 / np.sqrt(3.0)
HEX_GAUSS_POINTS = np.array(
    [[i, j, k] for k in (-_G, _G) for j in (-_G, _G) for i in (-_G, _G)]
)
HEX_GAUSS_WEIGHTS = np.ones(8)
# Standard trilinear node ordering: bottom face counter-clockwise, then top face.
HEX_NODE_SIGNS = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)


class MeshError(ValueError):
    """Invalid mesh content. ``line`` is the 1-based offending line, if known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class DegenerateElementError(MeshError):
    pass


class NonManifoldError(MeshError):
    pass


FaceKey = tuple[int, int, int]


def face_key(a: int, b: int, c: int) -> FaceKey:
    return tuple(sorted((int(a), int(b), int(c))))  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# geometry primitives
# ---------------------------------------------------------------------------


def signed_tet_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = nodes[tets]
    d = p[:, 1:, :] - p[:, :1, :]
    return np.linalg.det(np.swapaxes(d, 1, 2)) / 6.0


def _edge_scale(p: np.ndarray) -> np.ndarray:
    # largest bounding-box extent per element, used as the local length scale
    return np.max(p.max(axis=1) - p.min(axis=1), axis=1)


def tet_volume(p0, p1, p2, p3) -> float:
    """Unsigned volume of a tetrahedron; raises on coplanar points."""
    p = np.array([p0, p1, p2, p3], dtype=float)
    if not np.all(np.isfinite(p)):
        raise MeshError("non-finite coordinates")
    vol = abs(np.linalg.det((p[1:] - p[0]).T)) / 6.0
    h = _edge_scale(p[None])[0]
    if vol <= DEGENERACY_TOL * h**3:
        raise DegenerateElementError("degenerate (coplanar) tetrahedron")
    return float(vol)


def tet_shape_gradients(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Constant material gradients dN^a/dX of linear tets, shape (m, 4, 3)."""
    p = nodes[tets]
    d = np.swapaxes(p[:, 1:, :] - p[:, :1, :], 1, 2)  # columns are edge vectors
    inv = np.linalg.inv(d)  # rows: gradients of N1, N2, N3
    grads = np.empty((len(tets), 4, 3))
    grads[:, 1:, :] = inv
    grads[:, 0, :] = -inv.sum(axis=1)
    return grads


def hex_shape_functions(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear shape functions and natural derivatives at points ``xi`` (q, 3).

    Returns N (q, 8) and dN/dxi (q, 8, 3).
    """
    xi = np.atleast_2d(xi)
    s = HEX_NODE_SIGNS
    f = 1.0 + xi[:, None, :] * s[None, :, :]  # (q, 8, 3)
    N = 0.125 * f.prod(axis=2)
    dN = np.empty(f.shape)
    dN[..., 0] = 0.125 * s[:, 0] * f[..., 1] * f[..., 2]
    dN[..., 1] = 0.125 * s[:, 1] * f[..., 0] * f[..., 2]
    dN[..., 2] = 0.125 * s[:, 2] * f[..., 0] * f[..., 1]
    return N, dN


def hex_gauss_data(nodes: np.ndarray, hexes: np.ndarray):
    """Material gradients, Jacobian determinants and N values at the 2x2x2 points.

    Returns (grads (m, 8gp, 8, 3), detj (m, 8gp), N (8gp, 8)).
    """
    N, dN = hex_shape_functions(HEX_GAUSS_POINTS)
    x = nodes[hexes]  # (m, 8, 3)
    jac = np.einsum("mai,qaj->mqij", x, dN)  # dX_i/dxi_j
    detj = np.linalg.det(jac)
    inv = np.linalg.inv(jac)
    grads = np.einsum("qaj,mqji->mqai", dN, inv)
    return grads, detj, N


# ---------------------------------------------------------------------------
# mesh containers
# ---------------------------------------------------------------------------


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TetMesh:
    nodes: np.ndarray
    tets: np.ndarray
    node_sets: dict[str, np.ndarray] = field(default_factory=dict)
    volumes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        nodes = _frozen(self.nodes, float).reshape(-1, 3)
        tets = np.array(self.tets, dtype=np.int64).reshape(-1, 4)
        _check_connectivity(tets, len(nodes))
        if not np.all(np.isfinite(nodes)):
            raise MeshError("non-finite node coordinates")
        vol = signed_tet_volumes(nodes, tets)
        h = _edge_scale(nodes[tets])
        bad = np.flatnonzero(np.abs(vol) <= DEGENERACY_TOL * h**3)
        if bad.size:
            raise DegenerateElementError(f"degenerate tetrahedron {bad[0]}")
        neg = vol < 0
        # orientation repair keeps the volume, only swaps the last two nodes
        tets[neg] = tets[neg][:, [0, 1, 3, 2]]
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "tets", _frozen(tets, np.int64))
        object.__setattr__(self, "volumes", _frozen(np.abs(vol), float))
        object.__setattr__(self, "node_sets", _check_sets(self.node_sets, len(nodes)))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elems(self) -> int:
        return len(self.tets)

    def node_set(self, name: str) -> np.ndarray:
        try:
            return self.node_sets[name]
        except KeyError:
            raise KeyError(f"unknown node set {name!r}") from None


@dataclass(frozen=True)
class HexMesh:
    nodes: np.ndarray
    hexes: np.ndarray
    node_sets: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        nodes = _frozen(self.nodes, float).reshape(-1, 3)
        hexes = np.array(self.hexes, dtype=np.int64).reshape(-1, 8)
        _check_connectivity(hexes, len(nodes))
        _, detj, _ = hex_gauss_data(nodes, hexes)
        bad = np.flatnonzero(np.any(detj <= 0.0, axis=1))
        if bad.size:
            raise MeshError(f"non-positive Jacobian in hexahedron {bad[0]}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "hexes", _frozen(hexes, np.int64))
        object.__setattr__(self, "node_sets", _check_sets(self.node_sets, len(nodes)))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elems(self) -> int:
        return len(self.hexes)

    @property
    def volumes(self) -> np.ndarray:
        _, detj, _ = hex_gauss_data(self.nodes, self.hexes)
        return (detj * HEX_GAUSS_WEIGHTS).sum(axis=1)

    def node_set(self, name: str) -> np.ndarray:
        try:
            return self.node_sets[name]
        except KeyError:
            raise KeyError(f"unknown node set {name!r}") from None


def _check_connectivity(conn: np.ndarray, n_nodes: int) -> None:
    if conn.size and (conn.min() < 0 or conn.max() >= n_nodes):
        raise MeshError("out-of-range connectivity")
    srt = np.sort(conn, axis=1)
    if np.any(srt[:, 1:] == srt[:, :-1]):
        raise MeshError("element with repeated node index")


def _check_sets(sets: dict, n_nodes: int) -> dict[str, np.ndarray]:
    out = {}
    for name, idx in sets.items():
        idx = np.unique(np.asarray(idx, dtype=np.int64))
        if idx.size and (idx.min() < 0 or idx.max() >= n_nodes):
            raise MeshError(f"node set {name!r} references missing nodes")
        out[name] = _frozen(idx, np.int64)
    return out


# ---------------------------------------------------------------------------
# topology
# ---------------------------------------------------------------------------

_TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


def face_table(mesh: TetMesh) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`extract_faces`.

    Returns (keys (nf, 3) sorted rows in lexicographic order, adjacency (nf, 2)
    with -1 marking the missing neighbour of a boundary face).
    """
    tri = np.sort(mesh.tets[:, _TET_FACES].reshape(-1, 3), axis=1)
    owner = np.repeat(np.arange(mesh.n_elems), 4)
    keys, inverse, counts = np.unique(tri, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        k = keys[np.argmax(counts > 2)]
        raise NonManifoldError(f"face {tuple(k.tolist())} shared by more than two elements")
    order = np.argsort(inverse, kind="stable")
    adj = np.full((len(keys), 2), -1, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    adj[:, 0] = owner[order[starts]]
    two = counts == 2
    adj[two, 1] = owner[order[starts[two] + 1]]
    return keys, adj


def extract_faces(mesh: TetMesh) -> list[tuple[FaceKey, tuple[int, ...]]]:
    keys, adj = face_table(mesh)
    return [
        (tuple(int(v) for v in k), tuple(int(e) for e in a if e >= 0))
        for k, a in zip(keys, adj)
    ]


def node_incidence(mesh: TetMesh) -> list[np.ndarray]:
    """Element ids adjacent to each node, ascending."""
    flat = mesh.tets.ravel()
    elem = np.repeat(np.arange(mesh.n_elems), 4)
    order = np.lexsort((elem, flat))
    counts = np.bincount(flat, minlength=mesh.n_nodes)
    return np.split(elem[order], np.cumsum(counts)[:-1])


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------


def parse_mesh(text: str) -> TetMesh | HexMesh:
    nodes: dict[int, tuple[float, float, float]] = {}
    elems: dict[int, list[int]] = {}
    kind = None
    sets: dict[str, list[int]] = {}
    section = None
    expected = 0
    seen = 0
    set_name = None
    header_line = 0

    def close(lineno):
        if section is not None and seen != expected:
            raise MeshError(
                f"section *{section} declares {expected} entries, found {seen}", header_line
            )

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("*"):
            close(lineno)
            parts = line[1:].split()
            head = parts[0].upper() if parts else ""
            try:
                if head == "NSET":
                    set_name = parts[1]
                    expected = int(parts[2])
                    if set_name in sets:
                        raise MeshError(f"duplicate node set {set_name!r}", lineno)
                    sets[set_name] = []
                elif head in ("NODES", "TETS", "HEXES"):
                    expected = int(parts[1])
                else:
                    raise MeshError(f"unknown section {line!r}", lineno)
            except (IndexError, ValueError) as exc:
                if isinstance(exc, MeshError):
                    raise
                raise MeshError(f"malformed section header {line!r}", lineno) from None
            if head in ("TETS", "HEXES"):
                if kind is not None:
                    raise MeshError("more than one element section", lineno)
                kind = head
            section, seen, header_line = head, 0, lineno
            continue

        fields = line.replace(",", " ").split()
        if section is None:
            raise MeshError("data line outside any section", lineno)
        try:
            if section == "NODES":
                if len(fields) != 4:
                    raise ValueError
                nid = int(fields[0])
                xyz = tuple(float(v) for v in fields[1:])
                if nid in nodes:
                    raise MeshError(f"duplicate node index {nid}", lineno)
                nodes[nid] = xyz
                seen += 1
            elif section in ("TETS", "HEXES"):
                nn = 4 if section == "TETS" else 8
                if len(fields) != nn + 1:
                    raise ValueError
                eid = int(fields[0])
                if eid in elems:
                    raise MeshError(f"duplicate element index {eid}", lineno)
                conn = [int(v) for v in fields[1:]]
                for c in conn:
                    if c not in nodes:
                        raise MeshError("out-of-range connectivity", lineno)
                if len(set(conn)) != nn:
                    raise MeshError("element with repeated node index", lineno)
                elems[eid] = conn
                seen += 1
            else:
                ids = [int(v) for v in fields]
                for i in ids:
                    if i not in nodes:
                        raise MeshError(f"node set {set_name!r} references missing node {i}", lineno)
                sets[set_name].extend(ids)
                seen += len(ids)
        except ValueError as exc:
            if isinstance(exc, MeshError):
                raise
            raise MeshError(f"malformed line {raw.strip()!r}", lineno) from None
    close(None)
    if kind is None:
        raise MeshError("no element section")

    ids = sorted(nodes)
    index = {nid: i for i, nid in enumerate(ids)}
    xyz = np.array([nodes[i] for i in ids], dtype=float)
    conn = np.array([[index[n] for n in elems[e]] for e in sorted(elems)], dtype=np.int64)
    node_sets = {k: [index[i] for i in v] for k, v in sets.items()}
    if kind == "TETS":
        vol = signed_tet_volumes(xyz, conn) if len(conn) else np.zeros(0)
        h = _edge_scale(xyz[conn]) if len(conn) else np.zeros(0)
        bad = np.flatnonzero(np.abs(vol) <= DEGENERACY_TOL * h**3)
        if bad.size:
            eid = sorted(elems)[bad[0]]
            raise DegenerateElementError(
                f"non-positive element volume in element {eid}", _element_line(text, eid)
            )
        return TetMesh(xyz, conn, node_sets)
    return HexMesh(xyz, conn, node_sets)


def _element_line(text: str, eid: int) -> int | None:
    in_elems = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line.startswith("*"):
            in_elems = line[1:].split()[0].upper() in ("TETS", "HEXES")
            continue
        if in_elems and line and int(line.split()[0]) == eid:
            return lineno
    return None


def format_mesh(mesh: TetMesh | HexMesh) -> str:
    out = [f"*NODES {mesh.n_nodes}"]
    out += [f"{i + 1} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(mesh.nodes.tolist())]
    if isinstance(mesh, TetMesh):
        conn, head = mesh.tets, "TETS"
    else:
        conn, head = mesh.hexes, "HEXES"
    out.append(f"*{head} {len(conn)}")
    out += [f"{e + 1} " + " ".join(str(n + 1) for n in row) for e, row in enumerate(conn.tolist())]
    for name, idx in mesh.node_sets.items():
        out.append(f"*NSET {name} {len(idx)}")
        ids = [str(i + 1) for i in idx.tolist()]
        out += [" ".join(ids[i : i + 16]) for i in range(0, len(ids), 16)]
    return "\n".join(out) + "\n"


def read_mesh(path) -> TetMesh | HexMesh:
    with open(path) as fh:
        return parse_mesh(fh.read())


def write_mesh(mesh: TetMesh | HexMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_mesh(mesh))
