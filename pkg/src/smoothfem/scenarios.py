"""Benchmark problems on a structured cube: meshes, fibers, protocols, metrics and I/O.

Config files are INI-style (read with :mod:`configparser`)::

    [scenario]
    kind = dea                # dea | myo
    method = fsns             # tet | fs | ns | fsns | hex
    output_set = excite       # node set whose mean |u| is the output curve
    output_interval = 5       # ms
    output_origin = 0         # ms, subtracted from the curve times

    [mesh]
    length = 10               # mm
    nodes_per_edge = 6

    [material]
    mu = 2000                 # dielectric keys, or passive.* / active.* / ap.* / d

    [newton]
    dt = 1

    [sets.excite]
    box = 2.5 7.5 2.5 7.5 0 0 # x0 x1 y0 y1 z0 z1, inclusive

    [steps.1]
    duration = 50
    phi.excite = 0 100        # <dof>.<set> = start [end], linear over the step
    u.fix = 0                 # u expands to ux, uy, uz

Face sets ``left right bottom top front back`` (x=0, x=l, y=0, y=l, z=0, z=l)
and ``all`` always exist.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import constitutive as cm
from .assembly import METHODS, Discretization, SystemState, build_discretization
from .mesh import HexMesh, TetMesh
from .smoothing import FiberFrame
from .solver import BoundaryCondition, NewtonSettings, Step

log = logging.getLogger(__name__)

FACE_SETS = ("left", "right", "bottom", "top", "front", "back")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# mesh and fibers
# ---------------------------------------------------------------------------


def _grid(l: float, n: int):
    c = np.linspace(0.0, l, n)
    # node index = i + n * (j + n * k), i along x
    Z, Y, X = np.meshgrid(c, c, c, indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)


def generate_cube_mesh(l: float, n: int, kind: str = "tet") -> TetMesh | HexMesh:
    """Structured cube [0, l]^3 with n nodes per edge.

    Tet cells use the six-tet split along the main diagonal, which keeps
    neighbouring cells face-conforming.
    """
    if n < 2:
        raise ValueError("need at least two nodes per edge")
    if kind not in ("tet", "hex"):
        raise ValueError(f"unknown element kind {kind!r}")
    nodes = _grid(l, n)

    def idx(i, j, k):
        return i + n * (j + n * k)

    cells = np.array(list(itertools.product(range(n - 1), repeat=3)))[:, ::-1]  # (i, j, k)
    if kind == "hex":
        corners = HEX_CORNERS
    else:
        corners = np.array(
            [[[0, 0, 0], *np.cumsum(np.eye(3, dtype=int)[list(p)], axis=0)] for p in itertools.permutations(range(3))]
        ).reshape(-1, 3)
    ijk = cells[:, None, :] + corners[None, :, :]
    conn = idx(ijk[..., 0], ijk[..., 1], ijk[..., 2])
    tol = 1e-9 * l
    sets = {
        "left": np.flatnonzero(nodes[:, 0] < tol),
        "right": np.flatnonzero(nodes[:, 0] > l - tol),
        "bottom": np.flatnonzero(nodes[:, 1] < tol),
        "top": np.flatnonzero(nodes[:, 1] > l - tol),
        "front": np.flatnonzero(nodes[:, 2] < tol),
        "back": np.flatnonzero(nodes[:, 2] > l - tol),
    }
    if kind == "hex":
        return HexMesh(nodes, conn.reshape(-1, 8), sets)
    return TetMesh(nodes, conn.reshape(-1, 4), sets)


HEX_CORNERS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]
)


def fiber_angle(z, l: float):
    """Transmural fiber angle in radians: +60 deg at z = 0 down to -60 deg at z = l."""
    return np.deg2rad(60.0 - 120.0 * np.asarray(z, dtype=float) / l)


def fiber_frames(points, l: float, axis: str = "x", sign: float = 1.0) -> np.ndarray:
    """Frames (n, 3, 3) with rows f0, s0 = e_z, n0 = f0 x s0.

    The angle is measured in the x-y plane from ``axis``; ``sign`` flips the
    sense of rotation.
    """
    th = fiber_angle(np.atleast_2d(points)[:, 2], l)
    c, s = np.cos(th), sign * np.sin(th)
    zero = np.zeros_like(th)
    if axis == "y":
        f = np.stack([s, c, zero], axis=1)
    elif axis == "x":
        f = np.stack([c, s, zero], axis=1)
    else:
        raise ValueError(f"fiber axis must be 'x' or 'y', got {axis!r}")
    sh = np.broadcast_to([0.0, 0.0, 1.0], f.shape)
    return np.stack([f, sh, np.cross(f, sh)], axis=1)


def fiber_rule(position, l: float, axis: str = "x", sign: float = 1.0) -> FiberFrame:
    return FiberFrame.from_matrix(fiber_frames(np.asarray(position, dtype=float)[None], l, axis, sign)[0])


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SetSpec:
    """Node selection: a coordinate box, a single point, or explicit 1-based ids."""

    box: tuple[float, ...] | None = None
    point: tuple[float, ...] | None = None
    nodes: tuple[int, ...] | None = None

    def resolve(self, mesh, name: str) -> np.ndarray:
        X = mesh.nodes
        tol = 1e-9 * max(1.0, float(np.ptp(X)))
        if self.box is not None:
            lo, hi = np.array(self.box[0::2]), np.array(self.box[1::2])
            sel = np.flatnonzero(np.all((X >= lo - tol) & (X <= hi + tol), axis=1))
        elif self.point is not None:
            sel = np.flatnonzero(np.linalg.norm(X - np.array(self.point), axis=1) <= tol)
        else:
            sel = np.asarray(self.nodes, dtype=np.int64) - 1
            if sel.size and (sel.min() < 0 or sel.max() >= len(X)):
                raise ConfigError(f"node set {name!r} references missing nodes")
        if sel.size == 0:
            raise ConfigError(f"node set {name!r} selects no nodes")
        return sel


@dataclass(frozen=True)
class BCSpec:
    set_name: str
    dof: str
    start: float
    end: float


@dataclass(frozen=True)
class StepSpec:
    name: str
    duration: float
    bcs: tuple[BCSpec, ...]


@dataclass
class ScenarioConfig:
    kind: str  # dea | myo
    method: str = "fsns"
    length: float = 10.0
    nodes_per_edge: int = 6
    material: object = None
    newton: NewtonSettings = NewtonSettings()
    sets: dict[str, SetSpec] = field(default_factory=dict)
    steps: list[StepSpec] = field(default_factory=list)
    output_set: str = ""
    output_interval: float = 5.0
    output_origin: float = 0.0
    phi0: float = 0.0
    fiber_axis: str = "x"
    fiber_sign: float = 1.0
    hex_volumetric: str = "full"  # full | selective (volumetric stress at the hex centre)
    mesh_file: str | None = None

    def __post_init__(self):
        if self.kind not in ("dea", "myo"):
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.length <= 0 or self.nodes_per_edge < 2:
            raise ConfigError("mesh needs length > 0 and at least 2 nodes per edge")
        if self.output_interval <= 0:
            raise ConfigError("output_interval must be positive")
        for s in self.steps:
            if s.duration <= 0:
                raise ConfigError(f"step {s.name!r} needs a positive duration")
        if self.material is None:
            self.material = cm.DielectricParams() if self.kind == "dea" else cm.MyocardiumParams()


def default_dea(method: str = "fsns", **kw) -> ScenarioConfig:
    """Actuator cube: potential ramp on a centred front patch, back face grounded."""
    l = kw.pop("length", 10.0)
    sets = {
        "excite": SetSpec(box=(l / 4, 3 * l / 4, l / 4, 3 * l / 4, 0.0, 0.0)),
        "fix_xyz": SetSpec(point=(0.0, 0.0, l)),
        "fix_yz": SetSpec(point=(l, 0.0, l)),
        "fix_z": SetSpec(point=(0.0, l, l)),
    }
    fixed = (
        BCSpec("fix_xyz", "ux", 0, 0),
        BCSpec("fix_xyz", "uy", 0, 0),
        BCSpec("fix_xyz", "uz", 0, 0),
        BCSpec("fix_yz", "uy", 0, 0),
        BCSpec("fix_yz", "uz", 0, 0),
        BCSpec("fix_z", "uz", 0, 0),
        BCSpec("back", "phi", 0, 0),
    )
    steps = [
        StepSpec("load", 50.0, fixed + (BCSpec("excite", "phi", 0.0, 100.0),)),
        StepSpec("unload", 50.0, fixed + (BCSpec("excite", "phi", 100.0, 0.0),)),
    ]
    # 9 nodes per edge puts grid lines on the patch edges at l/4 and 3l/4
    kw.setdefault("nodes_per_edge", 9)
    return ScenarioConfig("dea", method, l, sets=sets, steps=steps, output_set="excite", **kw)


def default_myo(method: str = "fsns", **kw) -> ScenarioConfig:
    """Myocardial cube: rest, corner stimulus, free propagation; top face clamped."""
    l = kw.pop("length", 10.0)
    sets = {"activation": SetSpec(box=(0.0, l / 4, 0.0, l / 4, 0.0, l / 4))}
    clamp = tuple(BCSpec("top", d, 0, 0) for d in ("ux", "uy", "uz"))
    steps = [
        StepSpec("rest", 1.0, clamp + (BCSpec("all", "phi", -80.0, -80.0),)),
        StepSpec("stimulus", 1.0, clamp + (BCSpec("activation", "phi", -60.0, -60.0),)),
        StepSpec("contraction", 180.0, clamp),
    ]
    kw.setdefault("output_origin", 2.0)
    kw.setdefault("phi0", -80.0)
    return ScenarioConfig("myo", method, l, sets=sets, steps=steps, output_set="bottom", **kw)


def _floats(text: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split())
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {text!r}") from None


def _set_params(obj, items: dict, prefix: str = ""):
    names = {f.name for f in dataclasses.fields(obj)}
    kw = {}
    for k, v in items.items():
        if k not in names:
            raise ConfigError(f"unknown material key {prefix + k!r}")
        try:
            kw[k] = float(v)
        except ValueError:
            raise ConfigError(f"material key {prefix + k!r}: not a number") from None
    try:
        return dataclasses.replace(obj, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _parse_material(kind: str, sec) -> object:
    items = dict(sec) if sec is not None else {}
    if kind == "dea":
        return _set_params(cm.DielectricParams(), items)
    groups: dict[str, dict] = {"passive": {}, "active": {}, "ap": {}, "": {}}
    for k, v in items.items():
        head, _, tail = k.partition(".")
        if tail and head in groups:
            groups[head][tail] = v
        elif not tail:
            groups[""][k] = v
        else:
            raise ConfigError(f"unknown material key {k!r}")
    mat = cm.MyocardiumParams(
        passive=_set_params(cm.HOParams(), groups["passive"], "passive."),
        active=_set_params(cm.ActiveParams(), groups["active"], "active."),
        ap=_set_params(cm.APParams(), groups["ap"], "ap."),
    )
    return _set_params(mat, groups[""]) if groups[""] else mat


def parse_config(text: str, method: str | None = None) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from INI text; ``method`` overrides the file."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (k_T, a_f, ...)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if not cp.has_section("scenario"):
        raise ConfigError("missing [scenario] section")
    sc = cp["scenario"]
    kind = sc.get("kind", "").strip()
    if kind not in ("dea", "myo"):
        raise ConfigError(f"unknown scenario kind {kind!r}")
    base = default_dea() if kind == "dea" else default_myo()
    try:
        kw = dict(
            method=method or sc.get("method", base.method),
            output_set=sc.get("output_set", base.output_set),
            output_interval=sc.getfloat("output_interval", base.output_interval),
            output_origin=sc.getfloat("output_origin", base.output_origin),
            phi0=sc.getfloat("phi0", base.phi0),
            fiber_axis=sc.get("fiber_axis", base.fiber_axis),
            fiber_sign=sc.getfloat("fiber_sign", base.fiber_sign),
            hex_volumetric=sc.get("hex_volumetric", base.hex_volumetric),
        )
        mesh = cp["mesh"] if cp.has_section("mesh") else {}
        kw["length"] = float(mesh.get("length", base.length))
        kw["nodes_per_edge"] = int(mesh.get("nodes_per_edge", base.nodes_per_edge))
        kw["mesh_file"] = mesh.get("file") or None
        nw = cp["newton"] if cp.has_section("newton") else {}
        kw["newton"] = NewtonSettings(
            abs_tol=float(nw.get("abs_tol", 1e-9)),
            rel_tol=float(nw.get("rel_tol", 1e-8)),
            max_iter=int(nw.get("max_iter", 25)),
            dt=float(nw.get("dt", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if kw["fiber_axis"] not in ("x", "y"):
        raise ConfigError("fiber_axis must be x or y")
    kw["material"] = _parse_material(kind, cp["material"] if cp.has_section("material") else None)

    # sets and steps: defaults scaled to the configured length, then file overrides
    base = (default_dea if kind == "dea" else default_myo)(length=kw["length"])
    sets = dict(base.sets)
    for name in cp.sections():
        if not name.startswith("sets."):
            continue
        s = cp[name]
        label = name[5:]
        if "box" in s:
            box = _floats(s["box"], f"{name}.box")
            if len(box) != 6:
                raise ConfigError(f"{name}.box needs 6 numbers")
            sets[label] = SetSpec(box=box)
        elif "point" in s:
            pt = _floats(s["point"], f"{name}.point")
            if len(pt) != 3:
                raise ConfigError(f"{name}.point needs 3 numbers")
            sets[label] = SetSpec(point=pt)
        elif "nodes" in s:
            sets[label] = SetSpec(nodes=tuple(int(v) for v in _floats(s["nodes"], name)))
        else:
            raise ConfigError(f"[{name}] needs box, point or nodes")

    step_secs = sorted(
        (s for s in cp.sections() if s.startswith("steps.")),
        key=lambda s: int(s[6:]) if s[6:].isdigit() else -1,
    )
    steps = list(base.steps)
    if step_secs:
        steps = []
        for name in step_secs:
            if not name[6:].isdigit():
                raise ConfigError(f"step section {name!r} must be numbered")
            s = cp[name]
            if "duration" not in s:
                raise ConfigError(f"[{name}] needs a duration")
            bcs = []
            for key, val in s.items():
                if key in ("duration", "name"):
                    continue
                dof, _, set_name = key.partition(".")
                if not set_name or dof not in ("u", "ux", "uy", "uz", "phi"):
                    raise ConfigError(f"[{name}] unknown key {key!r}")
                v = _floats(val, f"{name}.{key}")
                if len(v) not in (1, 2):
                    raise ConfigError(f"[{name}] {key} needs one or two values")
                start, end = v[0], v[-1]
                for d in ("ux", "uy", "uz") if dof == "u" else (dof,):
                    bcs.append(BCSpec(set_name, d, start, end))
            steps.append(StepSpec(s.get("name", name[6:]), float(s["duration"]), tuple(bcs)))
    kw["sets"] = sets
    kw["steps"] = steps
    return ScenarioConfig(kind, **kw)


def read_config(path, method: str | None = None) -> ScenarioConfig:
    return parse_config(Path(path).read_text(), method)


# ---------------------------------------------------------------------------
# runnable problem
# ---------------------------------------------------------------------------


@dataclass
class Problem:
    config: ScenarioConfig
    mesh: TetMesh | HexMesh
    disc: Discretization
    node_sets: dict[str, np.ndarray]
    steps: list[Step]
    initial: SystemState

    def outputs(self) -> dict:
        nodes = self.node_sets[self.config.output_set]
        return {"avg_disp_mm": lambda s: avg_surface_displacement(s.u, nodes)}


def _build_mesh(cfg: ScenarioConfig):
    kind = "hex" if cfg.method == "hex" else "tet"
    if cfg.mesh_file:
        from .mesh import read_mesh

        return read_mesh(cfg.mesh_file)
    return generate_cube_mesh(cfg.length, cfg.nodes_per_edge, kind)


def build_problem(cfg: ScenarioConfig, mesh=None) -> Problem:
    mesh = mesh if mesh is not None else _build_mesh(cfg)
    names = dict(mesh.node_sets)
    names["all"] = np.arange(mesh.n_nodes)
    for k, spec in cfg.sets.items():
        names[k] = spec.resolve(mesh, k)
    if cfg.output_set not in names:
        raise ConfigError(f"unresolved node set {cfg.output_set!r}")

    steps = []
    t0 = 0.0
    for sp_ in cfg.steps:
        bcs = []
        for b in sp_.bcs:
            if b.set_name not in names:
                raise ConfigError(f"step {sp_.name!r}: unresolved node set {b.set_name!r}")
            bcs.append(BoundaryCondition(names[b.set_name], b.dof, (t0, t0 + sp_.duration), (b.start, b.end)))
        steps.append(Step(sp_.name, sp_.duration, tuple(bcs)))
        t0 += sp_.duration

    frame_fn = None
    if cfg.kind == "myo":
        def frame_fn(points):
            return fiber_frames(points, cfg.length, cfg.fiber_axis, cfg.fiber_sign)

    disc = build_discretization(cfg.method, mesh, cfg.material, frame_fn, cfg.hex_volumetric)
    return Problem(cfg, mesh, disc, names, steps, disc.initial_state(cfg.phi0))


def scenario_dea(cfg: ScenarioConfig | None = None, method: str = "fsns") -> Problem:
    cfg = cfg or default_dea(method)
    if cfg.kind != "dea":
        raise ConfigError("not a dielectric scenario")
    return build_problem(cfg)


def scenario_myo(cfg: ScenarioConfig | None = None, method: str = "fsns") -> Problem:
    cfg = cfg or default_myo(method)
    if cfg.kind != "myo":
        raise ConfigError("not a myocardium scenario")
    return build_problem(cfg)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def avg_surface_displacement(u: np.ndarray, nodes) -> float:
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("empty node set")
    return float(np.linalg.norm(np.asarray(u)[nodes], axis=1).mean())


@dataclass(frozen=True)
class OutputCurve:
    times: np.ndarray  # ms
    values: np.ndarray  # mm

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("times and values must be 1-D of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        if np.any(v < 0):
            raise ValueError("displacement magnitudes must be non-negative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)


def relative_errors(curve: OutputCurve, ref: OutputCurve, floor: float = 1e-12):
    """Pointwise |1 - u/u_ref| on samples with u_ref >= floor, and the skipped count."""
    if curve.times.shape != ref.times.shape or not np.allclose(curve.times, ref.times, rtol=0, atol=1e-9):
        raise ValueError("curves are sampled on different time grids")
    keep = ref.values >= floor
    return np.abs(1.0 - curve.values[keep] / ref.values[keep]), int((~keep).sum())


def mean_relative_error(curve: OutputCurve, ref: OutputCurve, floor: float = 1e-12) -> float:
    err, skipped = relative_errors(curve, ref, floor)
    if skipped:
        log.info("mean_relative_error: excluded %d sample(s) with reference below %g mm", skipped, floor)
    if err.size == 0:
        raise ValueError("no comparable samples")
    return float(err.mean())


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def write_curve_csv(curve: OutputCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_ms", "avg_disp_mm"])
        for t, v in zip(curve.times.tolist(), curve.values.tolist()):
            w.writerow([repr(t), repr(v)])


def read_curve_csv(path) -> OutputCurve:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["time_ms", "avg_disp_mm"]:
        raise ValueError(f"{path}: expected header time_ms,avg_disp_mm")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=float).reshape(-1, 2)
    except ValueError:
        raise ValueError(f"{path}: malformed row") from None
    return OutputCurve(data[:, 0], data[:, 1])


def write_vtk(state: SystemState, mesh: TetMesh | HexMesh, path, title: str = "smoothfem") -> None:
    """Legacy ASCII unstructured grid with point fields ``displacement`` and ``potential``."""
    if isinstance(mesh, TetMesh):
        conn, ctype = mesh.tets, 10
    else:
        conn, ctype = mesh.hexes, 12
    if state.u.shape != (mesh.n_nodes, 3) or state.phi.shape != (mesh.n_nodes,):
        raise ValueError("state does not match the mesh")
    k = conn.shape[1]
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} double",
    ]
    out += [" ".join(repr(v) for v in p) for p in mesh.nodes.tolist()]
    out.append(f"CELLS {len(conn)} {len(conn) * (k + 1)}")
    out += [f"{k} " + " ".join(map(str, c)) for c in conn.tolist()]
    out.append(f"CELL_TYPES {len(conn)}")
    out += [str(ctype)] * len(conn)
    out.append(f"POINT_DATA {mesh.n_nodes}")
    out.append("VECTORS displacement double")
    out += [" ".join(repr(v) for v in p) for p in state.u.tolist()]
    out.append("SCALARS potential double 1")
    out.append("LOOKUP_TABLE default")
    out += [repr(v) for v in state.phi.tolist()]
    Path(path).write_text("\n".join(out) + "\n")


def read_vtk_point_data(path) -> dict[str, np.ndarray]:
    """Minimal reader for files written by :func:`write_vtk` (round-trip checks)."""
    lines = Path(path).read_text().splitlines()
    i = next(j for j, s in enumerate(lines) if s.startswith("POINT_DATA"))
    n = int(lines[i].split()[1])
    out = {}
    j = i + 1
    while j < len(lines):
        head = lines[j].split()
        if head[0] == "VECTORS":
            out[head[1]] = np.array([[float(v) for v in s.split()] for s in lines[j + 1 : j + 1 + n]])
            j += 1 + n
        elif head[0] == "SCALARS":
            out[head[1]] = np.array([float(s) for s in lines[j + 2 : j + 2 + n]])
            j += 2 + n
        else:
            j += 1
    return out
