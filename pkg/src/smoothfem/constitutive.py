"""Constitutive laws for the dielectric elastomer and the active myocardium.

All functions broadcast over leading axes: ``F`` may be (3, 3) or (..., 3, 3).

Tangent conventions
-------------------
``C_uu`` is the spatial elasticity tensor c with minor symmetries, defined
through the first Piola-Kirchhoff stress P = J sigma F^-T by

    (dP . F^T) / J = c : L + L . sigma      for dF = L . F,

with the material electric field E0 = F^T E (dielectric) or the potential
(myocardium) held fixed. With this convention the element stiffness is
K^ab = [g^a . c . g^b + (g^a . sigma . g^b) I] v, g^a = F^-T dN^a/dX.

``C_phiu`` is (dD/dF) F in the same sense: dD_i = C_phiu[i, k, l] L[k, l].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

I3 = np.eye(3)
IxI = np.einsum("ij,kl->ijkl", I3, I3)
ISYM = 0.5 * (np.einsum("ik,jl->ijkl", I3, I3) + np.einsum("il,jk->ijkl", I3, I3))
PROJ = ISYM - IxI / 3.0

# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DielectricParams:
    mu: float = 2000.0  # kPa
    lam: float = 666.67  # kPa
    eps: float = 1.0  # F/mm^2
    kappa: float | None = None  # kPa; defaults to lam + 2 mu / 3

    def __post_init__(self):
        if self.kappa is None:
            object.__setattr__(self, "kappa", self.lam + 2.0 * self.mu / 3.0)
        if self.mu <= 0 or self.kappa <= 0 or self.eps <= 0:
            raise ValueError("dielectric parameters require mu, kappa, eps > 0")


@dataclass(frozen=True)
class HOParams:
    kappa: float = 1000.0
    a: float = 1.665
    b: float = 1.237
    a_f: float = 7.822
    b_f: float = 0.008
    a_s: float = 0.0
    b_s: float = 0.0
    a_fs: float = 1.342
    b_fs: float = 9.178

    def __post_init__(self):
        if self.kappa <= 0 or self.a <= 0 or self.b <= 0:
            raise ValueError("Holzapfel-Ogden parameters require kappa, a, b > 0")
        for name in ("a_f", "b_f", "a_s", "b_s", "a_fs", "b_fs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class ActiveParams:
    k_T: float = 0.005  # kPa/mV
    a0: float = 1.0  # 1/ms
    a_inf: float = 0.1  # 1/ms
    xi: float = 0.1  # 1/mV
    phi_r: float = -80.0  # mV
    phi_bar: float = -80.0  # mV

    def __post_init__(self):
        if not self.a0 > self.a_inf:
            raise ValueError("switch function requires a0 > a_inf")


@dataclass(frozen=True)
class APParams:
    alpha: float = 0.01
    b: float = 0.15
    c: float = 8.0
    gamma: float = 0.002
    mu1: float = 0.2
    mu2: float = 0.3
    phi_scale: float = 100.0  # mV
    phi_offset: float = -80.0  # mV
    t_scale: float = 12.9  # ms

    def __post_init__(self):
        if self.phi_scale <= 0 or self.t_scale <= 0:
            raise ValueError("phi_scale and t_scale must be positive")


@dataclass(frozen=True)
class MyocardiumParams:
    passive: HOParams = HOParams()
    active: ActiveParams = ActiveParams()
    ap: APParams = APParams()
    d: float = 0.01  # mm^2/ms


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------


class KinematicsError(ArithmeticError):
    pass


@dataclass(frozen=True)
class KinematicState:
    F: np.ndarray
    J: np.ndarray
    bbar: np.ndarray
    E: np.ndarray | None = None

    @property
    def E0(self):
        """Material electric field F^T E."""
        return None if self.E is None else np.einsum("...ji,...j->...i", self.F, self.E)


def kinematics(F, E=None) -> KinematicState:
    F = np.asarray(F, dtype=float)
    J = np.linalg.det(F)
    if np.any(J <= 0):
        raise KinematicsError("non-positive Jacobian")
    b = F @ np.swapaxes(F, -1, -2)
    bbar = np.asarray(J, dtype=float)[..., None, None] ** (-2.0 / 3.0) * b
    return KinematicState(F, J, bbar, None if E is None else np.asarray(E, dtype=float))


def _dev(a):
    return a - np.trace(a, axis1=-2, axis2=-1)[..., None, None] * I3 / 3.0


def _outer(a, b):
    return np.einsum("...ij,...kl->...ijkl", a, b)


def _sym_kl(c):
    return 0.5 * (c + np.swapaxes(c, -1, -2))


def _expand(J):
    return np.asarray(J, dtype=float)[..., None, None]


# ---------------------------------------------------------------------------
# shared volumetric part
# ---------------------------------------------------------------------------


def volumetric_stress(J, kappa):
    return kappa * (_expand(J) - 1.0) * I3


def volumetric_tangent(J, kappa):
    J4 = np.asarray(J, dtype=float)[..., None, None, None, None]
    return kappa * (2.0 * J4 - 1.0) * IxI - 2.0 * kappa * (J4 - 1.0) * ISYM


# ---------------------------------------------------------------------------
# dielectric elastomer
# ---------------------------------------------------------------------------


def electric_displacement(E, eps):
    return eps * np.asarray(E, dtype=float)


def maxwell_stress(E, eps):
    E = np.asarray(E, dtype=float)
    return eps * (np.einsum("...i,...j->...ij", E, E) - 0.5 * np.sum(E * E, axis=-1)[..., None, None] * I3)


def maxwell_tangent(E, eps):
    E = np.asarray(E, dtype=float)
    s = maxwell_stress(E, eps)
    EE = np.einsum("...i,...j->...ij", E, E)
    c = (
        np.einsum("...ij,kl->...ijkl", s, I3)
        - np.einsum("ik,...lj->...ijkl", I3, s)
        - np.einsum("jk,...il->...ijkl", I3, s)
        + eps
        * (
            np.einsum("...kl,ij->...ijkl", EE, I3)
            - np.einsum("il,...kj->...ijkl", I3, EE)
            - np.einsum("jl,...ik->...ijkl", I3, EE)
        )
    )
    return _sym_kl(c)


def neo_hooke_iso_stress(kin: KinematicState, mu):
    return (mu / _expand(kin.J)) * _dev(kin.bbar)


def neo_hooke_iso_tangent(kin: KinematicState, mu):
    tr = np.trace(kin.bbar, axis1=-2, axis2=-1)[..., None, None, None, None]
    db = _dev(kin.bbar)
    J4 = np.asarray(kin.J)[..., None, None, None, None]
    return (2.0 * mu / (3.0 * J4)) * (
        tr * PROJ - np.einsum("...ij,kl->...ijkl", db, I3) - np.einsum("ij,...kl->...ijkl", I3, db)
    )


def dielectric_stress(kin: KinematicState, p: DielectricParams, parts=("act", "vol", "iso")):
    sig = np.zeros(np.shape(kin.F))
    if "act" in parts:
        sig = sig + maxwell_stress(kin.E, p.eps)
    if "vol" in parts:
        sig = sig + volumetric_stress(kin.J, p.kappa)
    if "iso" in parts:
        sig = sig + neo_hooke_iso_stress(kin, p.mu)
    return sig


def dielectric_tangents(kin: KinematicState, p: DielectricParams, parts=("act", "vol", "iso")):
    """Returns dict with C_uu, C_uphi (-dsigma/dE), C_phiu ((dD/dF)F), C_phiphi (-dD/dE).

    The coupling entries describe the "act" part and are zero when it is excluded.
    """
    lead = np.shape(kin.J)
    c = np.zeros(lead + (3, 3, 3, 3))
    if "act" in parts:
        c = c + maxwell_tangent(kin.E, p.eps)
    if "vol" in parts:
        c = c + volumetric_tangent(kin.J, p.kappa)
    if "iso" in parts:
        c = c + neo_hooke_iso_tangent(kin, p.mu)
    E = kin.E if kin.E is not None else np.zeros(lead + (3,))
    if "act" in parts:
        dsig_dE = p.eps * (
            np.einsum("im,...j->...ijm", I3, E)
            + np.einsum("...i,jm->...ijm", E, I3)
            - np.einsum("...m,ij->...ijm", E, I3)
        )
        c_phiu = -p.eps * np.einsum("...k,il->...ikl", E, I3)
        c_phiphi = -p.eps * np.broadcast_to(I3, lead + (3, 3)).copy()
    else:
        dsig_dE = np.zeros(lead + (3, 3, 3))
        c_phiu = np.zeros(lead + (3, 3, 3))
        c_phiphi = np.zeros(lead + (3, 3))
    return {"C_uu": c, "C_uphi": -dsig_dE, "C_phiu": c_phiu, "C_phiphi": c_phiphi}


# ---------------------------------------------------------------------------
# Holzapfel-Ogden passive myocardium
# ---------------------------------------------------------------------------


def _exp_term(a, b, x):
    """a/(2b) [exp(b x^2) - 1] and its first two derivatives w.r.t. the invariant.

    For b = 0 the energy reduces to a x^2 / 2; a = 0 gives exactly zero.
    """
    e = np.exp(b * x * x)
    if b == 0.0:
        psi = 0.5 * a * x * x
    else:
        psi = a / (2.0 * b) * (e - 1.0)
    d1 = a * x * e
    d2 = a * e * (1.0 + 2.0 * b * x * x)
    return psi, d1, d2


@dataclass(frozen=True)
class _HOInvariants:
    fbar: np.ndarray
    sbar: np.ndarray
    I_iso: np.ndarray
    I_f: np.ndarray
    I_s: np.ndarray
    I_fs: np.ndarray


def _ho_invariants(kin: KinematicState, frame) -> _HOInvariants:
    frame = np.asarray(frame, dtype=float)
    Fbar = _expand(kin.J) ** (-1.0 / 3.0) * kin.F
    fbar = np.einsum("...ij,...j->...i", Fbar, frame[..., 0, :])
    sbar = np.einsum("...ij,...j->...i", Fbar, frame[..., 1, :])
    return _HOInvariants(
        fbar,
        sbar,
        np.trace(kin.bbar, axis1=-2, axis2=-1),
        np.sum(fbar * fbar, axis=-1),
        np.sum(sbar * sbar, axis=-1),
        np.sum(fbar * sbar, axis=-1),
    )


def _ho_derivs(inv: _HOInvariants, p: HOParams):
    e = np.exp(p.b * (inv.I_iso - 3.0))
    psi_iso = p.a / (2.0 * p.b) * e
    d_iso = 0.5 * p.a * e
    dd_iso = 0.5 * p.a * p.b * e
    psi_f, d_f, dd_f = _exp_term(p.a_f, p.b_f, inv.I_f - 1.0)
    psi_s, d_s, dd_s = _exp_term(p.a_s, p.b_s, inv.I_s - 1.0)
    psi_fs, d_fs, dd_fs = _exp_term(p.a_fs, p.b_fs, inv.I_fs)
    return (psi_iso, psi_f, psi_s, psi_fs), (d_iso, d_f, d_s, d_fs), (dd_iso, dd_f, dd_s, dd_fs)


def ho_energy(kin: KinematicState, frame, p: HOParams):
    """Isochoric Holzapfel-Ogden energy (no volumetric contribution)."""
    psi, _, _ = _ho_derivs(_ho_invariants(kin, frame), p)
    return sum(psi)


def _ho_tau_bar(kin, inv, d):
    d_iso, d_f, d_s, d_fs = (np.asarray(x)[..., None, None] for x in d)
    ff = np.einsum("...i,...j->...ij", inv.fbar, inv.fbar)
    ss = np.einsum("...i,...j->...ij", inv.sbar, inv.sbar)
    fs = np.einsum("...i,...j->...ij", inv.fbar, inv.sbar)
    return 2.0 * d_iso * kin.bbar + 2.0 * d_f * ff + 2.0 * d_s * ss + d_fs * (fs + np.swapaxes(fs, -1, -2))


def ho_modified_stress(kin: KinematicState, frame, p: HOParams):
    """Fictitious Cauchy stress sigma_bar (before the deviatoric projection)."""
    inv = _ho_invariants(kin, frame)
    _, d, _ = _ho_derivs(inv, p)
    return _ho_tau_bar(kin, inv, d) / _expand(kin.J)


def ho_passive_stress(kin: KinematicState, frame, p: HOParams, parts=("vol", "iso")):
    sig = np.zeros(np.shape(kin.F))
    if "vol" in parts:
        sig = sig + volumetric_stress(kin.J, p.kappa)
    if "iso" in parts:
        sig = sig + _dev(ho_modified_stress(kin, frame, p))
    return sig


def ho_tangent(kin: KinematicState, frame, p: HOParams, parts=("vol", "iso")):
    lead = np.shape(kin.J)
    c = np.zeros(lead + (3, 3, 3, 3))
    if "vol" in parts:
        c = c + volumetric_tangent(kin.J, p.kappa)
    if "iso" in parts:
        inv = _ho_invariants(kin, frame)
        _, d, dd = _ho_derivs(inv, p)
        tau_bar = _ho_tau_bar(kin, inv, d)
        tau_iso = _dev(tau_bar)
        dd_iso, dd_f, dd_s, dd_fs = (np.asarray(x)[..., None, None, None, None] for x in dd)
        ff = np.einsum("...i,...j->...ij", inv.fbar, inv.fbar)
        ss = np.einsum("...i,...j->...ij", inv.sbar, inv.sbar)
        fs = np.einsum("...i,...j->...ij", inv.fbar, inv.sbar)
        fs = fs + np.swapaxes(fs, -1, -2)
        c_bar = (
            4.0 * dd_iso * _outer(kin.bbar, kin.bbar)
            + 4.0 * dd_f * _outer(ff, ff)
            + 4.0 * dd_s * _outer(ss, ss)
            + dd_fs * _outer(fs, fs)
        )
        tr = np.trace(tau_bar, axis1=-2, axis2=-1)[..., None, None, None, None]
        c_iso = (
            np.einsum("ijmn,...mnpq,pqkl->...ijkl", PROJ, c_bar, PROJ, optimize=True)
            + (2.0 / 3.0) * tr * PROJ
            - (2.0 / 3.0)
            * (np.einsum("...ij,kl->...ijkl", tau_iso, I3) + np.einsum("ij,...kl->...ijkl", I3, tau_iso))
        )
        c = c + c_iso / np.asarray(kin.J)[..., None, None, None, None]
    return c


# ---------------------------------------------------------------------------
# active tension, excitation and flux
# ---------------------------------------------------------------------------


def _switch(phi, p: ActiveParams):
    x = np.minimum(-p.xi * (np.asarray(phi, dtype=float) - p.phi_bar), 700.0)
    inner = np.exp(x)
    outer = np.exp(-inner)
    a = p.a0 + (p.a_inf - p.a0) * outer
    da = (p.a_inf - p.a0) * outer * inner * p.xi
    return a, da


def switch_function(phi, p: ActiveParams):
    return _switch(phi, p)[0]


def active_tension_step(T_n, phi, dt, p: ActiveParams):
    """Backward Euler update of dT/dt = a(phi) [k_T (phi - phi_r) - T].

    Returns (T, dT/dphi).
    """
    if dt <= 0:
        raise ValueError("time increment must be positive")
    a, da = _switch(phi, p)
    drive = p.k_T * (np.asarray(phi, dtype=float) - p.phi_r)
    denom = 1.0 + dt * a
    T = (T_n + dt * a * drive) / denom
    dT = (dt * a * p.k_T + dt * da * (drive - T)) / denom
    return T, dT


def myo_active_stress(kin: KinematicState, T, f0):
    f = np.einsum("...ij,...j->...i", kin.F, np.asarray(f0, dtype=float))
    return (np.asarray(T, dtype=float) / np.asarray(kin.J))[..., None, None] * np.einsum(
        "...i,...j->...ij", f, f
    )


def flux(E, d):
    return -d * np.asarray(E, dtype=float)


def ap_source(phi, r, dt, p: APParams):
    """Two-variable excitation model, returns (I_phi [mV/ms], r_next, dI_phi/dphi).

    r is advanced by one explicit Euler step in normalised time; the derivative
    is taken at frozen r.
    """
    if dt <= 0:
        raise ValueError("time increment must be positive")
    u = (np.asarray(phi, dtype=float) - p.phi_offset) / p.phi_scale
    r = np.asarray(r, dtype=float)
    i_hat = p.c * u * (u - p.alpha) * (1.0 - u) - r * u
    di_hat = p.c * ((u - p.alpha) * (1.0 - u) + u * (1.0 - u) - u * (u - p.alpha)) - r
    rate = p.gamma + p.mu1 * r / (p.mu2 + u)
    r_next = r + (dt / p.t_scale) * rate * (-r - p.c * u * (u - p.b - 1.0))
    return i_hat * p.phi_scale / p.t_scale, r_next, di_hat / p.t_scale


def myo_coupling_tangents(kin: KinematicState, f0, dT_dphi, d):
    """C_uphi = dsigma/dphi, C_phiu = (dq/dF)F, C_phiphi = -dq/dE."""
    lead = np.shape(kin.J)
    E = kin.E if kin.E is not None else np.zeros(lead + (3,))
    c_uphi = myo_active_stress(kin, dT_dphi, f0)
    c_phiu = d * np.einsum("...k,il->...ikl", E, I3)
    c_phiphi = d * np.broadcast_to(I3, lead + (3, 3)).copy()
    return {"C_uphi": c_uphi, "C_phiu": c_phiu, "C_phiphi": c_phiphi}
