"""Cavity fields rebuilt from the planar wavefunction, and the energy audits.

For an in-plane amplitude ``A(x, y)`` (``A = e Psi`` for a scalar field with a
fixed polarisation ``e``, ``A = (psi_x, psi_y)`` for a spinor) the cavity
field is

    E = A sin(K z),                       K = sqrt(eps') (m + V - i Gamma/2),
    B = [K cos(K z) (-A_y, A_x, 0) + z_hat (sin(K z) curl A
         + sqrt(eps') z cos(K z) (d_x V A_y - d_y V A_x))] / (i m),

up to the common carrier phase ``exp(-i m t)``.  The potential-gradient part
of ``B_z`` is optional and off by default.  From these the ensemble Poynting
vector ``S = 2 Re[E* x B]``, energy density ``u = gE |E|^2 + gB |B|^2`` and Ohmic
loss ``W = 2 m eps'' |E|^2`` follow.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .core import (ComplexScalarField, Grid2D, SpinorField, derivative, gradient,
                   DEFAULT_GUARD)
from .errors import ParaxialWarning, ValidationError
from .kinematics import (DENSITY_FLOOR, continuity_residual, density_mask,
                         pauli_velocity, scalar_velocity)


@dataclass(frozen=True)
class ZGrid:
    """Uniform samples ``z_k = k D0/(nz-1)`` on ``[0, D0]`` with trapezoid weights."""

    nz: int
    D0: float

    def __post_init__(self):
        if self.nz < 2 or not self.D0 > 0:
            raise ValidationError("ZGrid needs nz >= 2 and D0 > 0")

    @classmethod
    def for_medium(cls, medium, per_order=32):
        return cls(int(per_order * medium.q), medium.D0)

    @property
    def h(self):
        return self.D0 / (self.nz - 1)

    @property
    def z(self):
        return np.linspace(0.0, self.D0, self.nz)

    @property
    def weights(self):
        w = np.full(self.nz, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def check(self, medium):
        if self.nz < 16 * medium.q:
            raise ValidationError(f"nz={self.nz} < 16*q={16 * medium.q}: "
                                  "longitudinal oscillation unresolved")
        if abs(self.D0 - medium.D0) > 1e-12 * medium.D0:
            raise ValidationError("ZGrid spans a different mirror spacing than the medium")


# -- in-plane amplitudes ------------------------------------------------------------

class InPlane(NamedTuple):
    Ax: np.ndarray
    Ay: np.ndarray
    curl: np.ndarray
    gradV: np.ndarray | None
    tag: str


def _in_plane(field_, grid, V, e_hat, method, include_gradV):
    if isinstance(field_, SpinorField):
        cart = field_.to_cartesian()
        Ax, Ay = cart.first, cart.second
        tag = "spinor"
    else:
        vals = field_.values if isinstance(field_, ComplexScalarField) else np.asarray(field_)
        ex, ey = e_hat
        norm = np.sqrt(abs(ex) ** 2 + abs(ey) ** 2)
        Ax, Ay = vals * (ex / norm), vals * (ey / norm)
        tag = "scalar-e"
    curl = derivative(Ay, grid, "x", method) - derivative(Ax, grid, "y", method)
    gv = None
    Vmap = np.broadcast_to(np.asarray(V, dtype=float), grid.shape)
    if include_gradV:
        Vx, Vy = gradient(np.array(Vmap), grid, method)
        gv = Vx * Ay - Vy * Ax
    return InPlane(Ax, Ay, curl, gv, tag)


def mode_wavenumber(V, medium):
    """Complex longitudinal wavenumber ``sqrt(eps') (m + V - i Gamma/2)``."""
    return np.sqrt(medium.eps_real) * (medium.m + np.asarray(V, dtype=float)
                                       - 0.5j * medium.Gamma)


def _leak_guard(medium):
    gd = medium.Gamma * medium.D0
    if gd > DEFAULT_GUARD:
        warnings.warn(ParaxialWarning("Gamma*D0", gd, DEFAULT_GUARD), stacklevel=3)


@dataclass(frozen=True)
class Fields3D:
    """Complex E and B with shape ``(3, nz, ny, nx)``."""

    grid: Grid2D
    zgrid: ZGrid
    E: np.ndarray
    B: np.ndarray
    tag: str
    gradV_Bz: float = 0.0


def _fields_at(ip: InPlane, K, z, medium, include_gradV):
    """E and B for sample heights ``z`` (broadcast on a leading axis)."""
    zz = np.asarray(z, dtype=float).reshape((-1,) + (1,) * K.ndim)
    s = np.sin(K * zz)
    c = np.cos(K * zz)
    m = medium.m
    E = np.stack([ip.Ax * s, ip.Ay * s, np.zeros_like(s)])
    Bz = s * ip.curl
    if include_gradV and ip.gradV is not None:
        Bz = Bz + np.sqrt(medium.eps_real) * zz * c * ip.gradV
    B = np.stack([-K * c * ip.Ay, K * c * ip.Ax, Bz]) / (1j * m)
    return E, B


def reconstruct_fields(field_, V, medium, zgrid: ZGrid, t=0.0, e_hat=(0.0, 1.0),
                       method=None, include_gradV=False):
    """Three-dimensional cavity fields from a planar scalar or spinor field.

    Parameters
    ----------
    field_ : ComplexScalarField or SpinorField
    V : float or array
        Effective potential on the grid.
    medium : CavityMedium
    zgrid : ZGrid
    t : float
        Time used for the carrier phase ``exp(-i m t)``.
    e_hat : pair
        In-plane polarisation for scalar input.
    include_gradV : bool
        Add the potential-gradient term to ``B_z``.  Its peak magnitude is
        always reported in ``gradV_Bz``.
    """
    grid = field_.grid
    _leak_guard(medium)
    ip = _in_plane(field_, grid, V, e_hat, method, True)
    K = np.broadcast_to(mode_wavenumber(V, medium), grid.shape)
    E, B = _fields_at(ip, K, zgrid.z, medium, include_gradV)
    diag = float(np.max(np.abs(np.sqrt(medium.eps_real) * zgrid.D0 * ip.gradV))) / medium.m
    phase = np.exp(-1j * medium.m * t)
    return Fields3D(grid, zgrid, E * phase, B * phase, ip.tag, diag)


@dataclass(frozen=True)
class EnergyFields3D:
    grid: Grid2D
    zgrid: ZGrid
    S: np.ndarray
    u: np.ndarray
    W: np.ndarray


def poynting_energy(fields: Fields3D, medium):
    """Ensemble Poynting vector, energy density and Ohmic dissipation."""
    E, B = fields.E, fields.B
    S = 2.0 * np.real(np.conj(E)[[1, 2, 0]] * B[[2, 0, 1]]
                      - np.conj(E)[[2, 0, 1]] * B[[1, 2, 0]])
    e2 = np.sum(np.abs(E) ** 2, axis=0)
    u = medium.gE * e2 + medium.gB * np.sum(np.abs(B) ** 2, axis=0)
    W = 2.0 * medium.m * medium.eps_imag * e2
    return EnergyFields3D(fields.grid, fields.zgrid, S, u, W)


# -- z-averages -------------------------------------------------------------------------

@dataclass(frozen=True)
class ZAverage:
    """``<v> = int S dz / int u dz`` with the integrated fields themselves."""

    grid: Grid2D
    vx: np.ndarray
    vy: np.ndarray
    vz: np.ndarray
    mask: np.ndarray
    S_int: np.ndarray
    u_int: np.ndarray
    W_int: np.ndarray


def _ratio(S_int, u_int, grid, floor):
    mask = density_mask(u_int, floor)
    safe = np.where(mask, u_int, 1.0)
    v = np.where(mask, S_int / safe, 0.0)
    return v, mask


def z_average_velocity(energy: EnergyFields3D, floor=DENSITY_FLOOR):
    """Trapezoid z-integrals of S, u, W and their componentwise ratio."""
    w = energy.zgrid.weights.reshape(-1, 1, 1)
    S_int = np.sum(energy.S * w[None], axis=1)
    u_int = np.sum(energy.u * w, axis=0)
    W_int = np.sum(energy.W * w, axis=0)
    v, mask = _ratio(S_int, u_int, energy.grid, floor)
    return ZAverage(energy.grid, v[0], v[1], v[2], mask, S_int, u_int, W_int)


def z_moments(K, zgrid: ZGrid, backend=None):
    """``(|s|^2, |c|^2, s* c, z s* c, z^2 |c|^2)`` integrated over the z-grid.

    Distinct values of ``K`` are integrated once and scattered back.
    """
    impl = kernels if backend is None else kernels.get_backend(backend)
    K = np.asarray(K, dtype=complex)
    uniq, inv = np.unique(K.ravel(), return_inverse=True)
    mom = impl.z_moments(uniq, 0.0, zgrid.h, zgrid.weights)
    return mom[:, inv.ravel()].reshape((5,) + K.shape)


def z_averaged_flow(field_, V, medium, zgrid: ZGrid, e_hat=(0.0, 1.0), method=None,
                    include_gradV=False, floor=DENSITY_FLOOR, backend=None):
    """Same result as ``z_average_velocity(poynting_energy(reconstruct_fields(...)))``
    without materialising the 3D arrays.

    The z-dependence factorises into five moments of ``sin(K z)`` and
    ``cos(K z)`` per distinct ``K``, accumulated by the compiled kernel.
    """
    grid = field_.grid
    _leak_guard(medium)
    ip = _in_plane(field_, grid, V, e_hat, method, include_gradV)
    K = np.broadcast_to(mode_wavenumber(V, medium), grid.shape)
    Iss, Icc, Isc, Izsc, Izzcc = z_moments(K, zgrid, backend)
    Iss, Icc, Izzcc = Iss.real, Icc.real, Izzcc.real
    m = medium.m
    b = 0.0 if ip.gradV is None else np.sqrt(medium.eps_real) * ip.gradV
    a2 = np.abs(ip.Ax) ** 2 + np.abs(ip.Ay) ** 2
    sB = (ip.curl * Iss + b * Izsc) / (1j * m)
    Sx = 2.0 * np.real(np.conj(ip.Ay) * sB)
    Sy = -2.0 * np.real(np.conj(ip.Ax) * sB)
    Sz = 2.0 * np.real(a2 * K * Isc / (1j * m))
    B2 = (np.abs(K) ** 2 * a2 * Icc + np.abs(ip.curl) ** 2 * Iss
          + 2.0 * np.real(np.conj(ip.curl) * b * Izsc) + np.abs(b) ** 2 * Izzcc) / m**2
    u = medium.gE * a2 * Iss + medium.gB * B2
    W = 2.0 * m * medium.eps_imag * a2 * Iss
    S = np.stack([Sx, Sy, Sz])
    v, mask = _ratio(S, u, grid, floor)
    return ZAverage(grid, v[0], v[1], v[2], mask, S, u, W)


def local_flow(field_, V, medium, z, e_hat=(0.0, 1.0), method=None, include_gradV=False):
    """Energy velocity ``S/u`` at the heights ``z``; arrays of shape ``(3, nz, ny, nx)``
    for the velocity and ``(nz, ny, nx)`` for ``u``."""
    grid = field_.grid
    ip = _in_plane(field_, grid, V, e_hat, method, include_gradV)
    K = np.broadcast_to(mode_wavenumber(V, medium), grid.shape)
    E, B = _fields_at(ip, K, np.atleast_1d(z), medium, include_gradV)
    en = poynting_energy(Fields3D(grid, None, E, B, ip.tag), medium)
    safe = np.where(en.u > 0, en.u, 1.0)
    return np.where(en.u > 0, en.S / safe, 0.0), en.u


# -- Berry split -----------------------------------------------------------------------------

class BerryParts(NamedTuple):
    orbital: np.ndarray
    spin: np.ndarray
    total: np.ndarray
    divergence_term: np.ndarray

    def residual(self):
        """Relative L2 mismatch of ``orbital + spin - divergence_term`` against ``total``."""
        diff = self.orbital + self.spin - self.divergence_term - self.total
        scale = np.sqrt(np.sum(self.total**2))
        return float(np.sqrt(np.sum(diff**2)) / scale) if scale > 0 else float(
            np.sqrt(np.sum(diff**2)))


def _grad3(f, grid, method, fz):
    fx, fy = gradient(f, grid, method)
    return np.stack([fx, fy, fz])


def berry_decompose(E, grid, medium, method="spectral", dEdz=None):
    """Orbital / spin split of the ensemble Poynting vector of one E slice.

    Parameters
    ----------
    E : complex array (3, ny, nx)
    grid : Grid2D
    medium : CavityMedium
        Only ``m`` (the carrier frequency) is used.
    dEdz : complex array (3, ny, nx), optional
        z-derivative of the slice; zero when omitted.

    Returns
    -------
    BerryParts
        ``orbital = (2/m) Im[E_j* grad E_j]``, ``spin = (1/m) curl Im[E* x E]``,
        ``total = (2/m) Im[E* x curl E]`` and the term
        ``(2/m) Im[E* div E]`` that closes the identity for fields that are
        not divergence free.
    """
    E = np.asarray(E, dtype=complex)
    m = medium.m
    dz = np.zeros_like(E) if dEdz is None else np.asarray(dEdz, dtype=complex)
    G = np.stack([_grad3(E[j], grid, method, dz[j]) for j in range(3)])  # G[j, i] = d_i E_j
    orb = (2.0 / m) * np.imag(np.einsum("jyx,jiyx->iyx", np.conj(E), G))
    Ec = np.conj(E)
    cross = np.imag(np.stack([Ec[1] * E[2] - Ec[2] * E[1],
                              Ec[2] * E[0] - Ec[0] * E[2],
                              Ec[0] * E[1] - Ec[1] * E[0]]))
    dcx = _grad3(cross[0], grid, method, np.zeros(grid.shape))
    dcy = _grad3(cross[1], grid, method, np.zeros(grid.shape))
    dcz = _grad3(cross[2], grid, method, np.zeros(grid.shape))
    spin = (1.0 / m) * np.stack([dcz[1] - dcy[2], dcx[2] - dcz[0], dcy[0] - dcx[1]])
    curlE = np.stack([G[2, 1] - G[1, 2], G[0, 2] - G[2, 0], G[1, 0] - G[0, 1]])
    tot = (2.0 / m) * np.imag(np.stack([Ec[1] * curlE[2] - Ec[2] * curlE[1],
                                        Ec[2] * curlE[0] - Ec[0] * curlE[2],
                                        Ec[0] * curlE[1] - Ec[1] * curlE[0]]))
    div = G[0, 0] + G[1, 1] + G[2, 2]
    divterm = (2.0 / m) * np.imag(Ec * div)
    return BerryParts(orb, spin, tot, divterm)


# -- audits ---------------------------------------------------------------------------------

@dataclass
class EquivalenceReport:
    """Comparison of the z-averaged energy velocity with the guidance velocity."""

    x: np.ndarray
    y: np.ndarray
    dev_planar: np.ndarray
    v_z: np.ndarray
    mask: np.ndarray
    expected_vz: float
    percentiles: dict
    vz_mean: float
    vz_rel_dev: float
    sincos_term_ratio: float
    warnings: list = field(default_factory=list)

    def summary(self):
        return {
            "planar_deviation_percentiles": self.percentiles,
            "vz_mean": self.vz_mean,
            "vz_expected": self.expected_vz,
            "vz_relative_deviation": self.vz_rel_dev,
            "sincos_term_ratio": self.sincos_term_ratio,
            "masked_points": int(np.sum(self.mask)),
            "warnings": list(self.warnings),
        }

    def to_json(self, **kw):
        return json.dumps(self.summary(), sort_keys=True, **kw)

    def rows(self):
        """``(x, y, dev_planar, v_z)`` on masked points, x fastest."""
        X, Y = np.meshgrid(self.x, self.y, indexing="xy")
        sel = self.mask.ravel()
        return np.column_stack([X.ravel()[sel], Y.ravel()[sel],
                                self.dev_planar.ravel()[sel], self.v_z.ravel()[sel]])


PERCENTILES = (50, 90, 99, 100)


def equivalence_audit(field_, medium, zgrid: ZGrid, V=0.0, e_hat=(0.0, 1.0), method=None,
                      audit_mask=None, backend=None):
    """Audit ``<v>_planar`` against the guidance law and ``<v_z>`` against ``Gamma D0/2``.

    A scalar field is compared with :func:`scalar_velocity`, a spinor with
    the total :func:`pauli_velocity`.  ``audit_mask`` can exclude e.g. a
    sponge layer.
    """
    zgrid.check(medium)
    caught = []
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        avg = z_averaged_flow(field_, V, medium, zgrid, e_hat, method, backend=backend)
        if isinstance(field_, SpinorField):
            ref = pauli_velocity(field_, medium, method).total
        else:
            ref = scalar_velocity(field_, medium, method)
    caught = [str(w.message) for w in rec]
    mask = avg.mask & ref.mask
    if audit_mask is not None:
        mask &= audit_mask
    diff = np.hypot(avg.vx - ref.vx, avg.vy - ref.vy)
    speed = np.hypot(ref.vx, ref.vy)
    with np.errstate(divide="ignore", invalid="ignore"):
        dev = np.where(speed > 0, diff / np.where(speed > 0, speed, 1.0),
                       np.where(diff == 0, 0.0, np.inf))
    dev = np.where(mask, dev, 0.0)
    expected = 0.5 * medium.Gamma * medium.D0
    vals = dev[mask]
    pct = {f"p{p}": float(np.percentile(vals, p)) if vals.size else float("nan")
           for p in PERCENTILES}
    vz = avg.vz[mask]
    vz_mean = float(np.mean(vz)) if vz.size else float("nan")
    if expected > 0:
        vz_dev = float(np.max(np.abs(vz - expected)) / expected) if vz.size else float("nan")
    else:
        vz_dev = float(np.max(np.abs(vz))) if vz.size else float("nan")
    # z-weight of the sin*cos part of S_z relative to the linear-in-z part
    z = zgrid.z
    chi0 = np.sqrt(medium.eps_real) * medium.m * z
    w = zgrid.weights
    term2 = np.sum(w * np.sin(chi0) * np.cos(chi0)) * np.sqrt(medium.eps_real)
    term3 = np.sum(w * z) * medium.eps_real * medium.m
    ratio = float(abs(term2) / term3) if term3 > 0 else 0.0
    return EquivalenceReport(field_.grid.x, field_.grid.y, dev, avg.vz, mask, expected,
                             pct, vz_mean, vz_dev, ratio, caught)


class ConservationReport(NamedTuple):
    residual: np.ndarray
    l2: float
    linf: float
    norm_ratio: float
    expected_ratio: float

    @property
    def norm_ratio_error(self):
        return abs(self.norm_ratio / self.expected_ratio - 1.0)


def conservation_audit(psi_t0, psi_t1, dt, medium, method="central", mask=None):
    """Local continuity residual between two snapshots and the global decay check.

    ``l2`` is the root-mean-square residual over the (masked) grid.
    """
    if psi_t0.grid != psi_t1.grid:
        raise ValidationError("snapshots on mismatched grids")
    res = continuity_residual(psi_t0, psi_t1, dt, medium, method)
    sel = res if mask is None else res[mask]
    ratio = psi_t1.norm2() / psi_t0.norm2()
    return ConservationReport(res, float(np.sqrt(np.mean(sel**2))), float(np.max(np.abs(sel))),
                              ratio, float(np.exp(-medium.total_loss_rate * dt)))


def xz_section(field_, V, medium, z, row, e_hat=(0.0, 1.0), method=None):
    """Local energy velocity ``(S_x/u, S_z/u)`` and ``u`` on the x-z plane through
    grid row ``row``; arrays of shape ``(nz, nx)``."""
    grid = field_.grid
    ip = _in_plane(field_, grid, V, e_hat, method, False)
    K = np.broadcast_to(mode_wavenumber(V, medium), grid.shape)[row]
    sub = InPlane(ip.Ax[row], ip.Ay[row], ip.curl[row], None, ip.tag)
    E, B = _fields_at(sub, K, np.atleast_1d(z), medium, False)
    en = poynting_energy(Fields3D(grid, None, E, B, ip.tag), medium)
    safe = np.where(en.u > 0, en.u, 1.0)
    return (np.where(en.u > 0, en.S[0] / safe, 0.0), np.where(en.u > 0, en.S[2] / safe, 0.0),
            en.u)
