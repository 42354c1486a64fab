"""Leaky waves of a line source between two mirrors, their far field and image.

The cavity occupies ``0 <= z <= D`` with the same permittivity on both sides
of the partially transmitting mirror at ``z = D``.  A line current at height
``d`` excites a Sommerfeld integral whose pole gives the leaky wave and whose
steepest-descent part gives the radiated far field.  The microscope image of
the plane ``z = 0`` is a band-limited rendering of the pole field.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import constants, optimize
from scipy.special import roots_legendre

from . import kernels
from .errors import NumericalError, ParaxialWarning, ValidationError


def _kz(k2, kx):
    """Longitudinal wavenumber with the outgoing/decaying branch (Im >= 0)."""
    kz = np.sqrt(np.asarray(k2, dtype=complex) - np.asarray(kx, dtype=complex) ** 2)
    return np.where(kz.imag < 0, -kz, kz)


@dataclass(frozen=True)
class ReflectivityModel:
    """Mirror reflectivity ``r = |r| exp(i phase)``.

    ``func(omega, kx)`` optionally replaces the constant value; the modulus
    and phase then only seed the Newton search in :func:`fabry_perot_mode`.
    """

    magnitude: float
    phase: float = np.pi
    func: Callable | None = None

    def __post_init__(self):
        if not 0 <= self.magnitude <= 1:
            raise ValidationError("|r| must lie in [0, 1]")

    @classmethod
    def from_loss(cls, eta):
        """``r = -(1 - eta)``."""
        return cls(1.0 - eta, np.pi)

    @property
    def r(self):
        return self.magnitude * np.exp(1j * self.phase)

    @property
    def t(self):
        """Transmission of a lossless mirror, ``sqrt(1 - |r|^2)``."""
        return np.sqrt(1.0 - self.magnitude**2)

    def value(self, omega, kx):
        if self.func is not None:
            return self.func(omega, kx)
        return np.full(np.shape(kx), self.r, dtype=complex) if np.ndim(kx) else self.r

    def transmission(self, omega, kx):
        rv = self.value(omega, kx)
        return np.sqrt(1.0 - np.abs(rv) ** 2)


def fabry_perot_mode(model: ReflectivityModel, D, q, omega=None, eps_real=1.0,
                     tol=1e-13, maxiter=50):
    """Complex longitudinal wavenumber solving ``1 + r exp(2 i kz D) = 0``.

    For a constant ``r`` the closed form
    ``kz = (q + 1/2) pi/D - phase/(2D) + i ln|r| / (2D)`` is returned.  With a
    callable ``r(omega, kx)`` that value seeds a secant/Newton refinement
    (``omega`` is then required; ``kx = sqrt(eps' omega^2 - kz^2)``).
    """
    if model.magnitude == 0:
        raise ValidationError("|r| = 0: no Fabry-Perot mode")
    kz0 = (q + 0.5) * np.pi / D - model.phase / (2 * D) + 1j * np.log(model.magnitude) / (2 * D)
    if model.func is None:
        return complex(kz0)
    if omega is None:
        raise ValidationError("a dispersive reflectivity needs omega")

    def F(kz):
        kx = _kz(eps_real * omega**2, kz)
        return 1.0 + model.func(omega, kx) * np.exp(2j * kz * D)

    try:
        root = optimize.newton(F, kz0, tol=tol, maxiter=maxiter)
    except RuntimeError as exc:
        raise NumericalError(f"Fabry-Perot root search failed: {exc}") from exc
    return complex(root)


def fabry_perot_expansion(eta, D, q):
    """First-order form ``q pi/D - i eta/(2D)`` for ``r = -(1 - eta)``."""
    return complex(q * np.pi / D, -eta / (2 * D))


def loss_rate_from_mirror(model, D, eps_real=1.0):
    """Radiative rate matching ``Im kz = -sqrt(eps') Gamma/2``."""
    return -np.log(model.magnitude) / (np.sqrt(eps_real) * D)


@dataclass(frozen=True)
class LeakyModeParams:
    """Pole angle and wavevectors of the leaky mode.

    ``denominator`` is ``d(r exp(2 i kz D))/d kx`` at the pole, which for a
    constant ``r`` equals ``2 i D kxP / kzP``.
    """

    xi: complex
    kx: complex
    kz: complex
    denominator: complex
    omega: float
    D: float
    eps_real: float = 1.0

    def __post_init__(self):
        problems = []
        if self.kx.real <= 0:
            problems.append("Re kxP must be > 0")
        if self.kx.imag < 0:
            problems.append("Im kxP must be >= 0 (decay along |x|)")
        if self.kz.real <= 0:
            problems.append("Re kzP must be > 0")
        if self.kz.imag > 0:
            problems.append("Im kzP must be <= 0 (growth along z)")
        if problems:
            raise ValidationError("; ".join(problems), problems)

    @property
    def leaky(self):
        """True when the strict signature ``Im kx > 0, Im kz < 0`` holds."""
        return self.kx.imag > 0 and self.kz.imag < 0

    def consistency(self):
        """Relative mismatch of ``kx, kz`` against ``omega sqrt(eps') (sin xi, cos xi)``."""
        n = self.omega * np.sqrt(self.eps_real)
        return (abs(self.kx - n * np.sin(self.xi)) / abs(self.kx),
                abs(self.kz - n * np.cos(self.xi)) / abs(self.kz))


def pole_parameters(E, medium, D=None):
    """Asymptotic pole quantities for detuning ``E`` above the cutoff.

    ``xi = sqrt(2E/m) + i G/(2 sqrt(2 E m))``,
    ``kx = sqrt(2 m eps' E) + i m eps' G/(2 sqrt(2 m eps' E))``,
    ``kz = sqrt(eps') (m - i Gamma/2)``, with ``G = Gamma + m eps''/eps'``.
    """
    if not E > 0:
        raise ValidationError("pole_parameters needs E > 0; use the evanescent branch")
    m, ep = medium.m, medium.eps_real
    if E / m > 0.1:
        warnings.warn(ParaxialWarning("E/m", E / m, 0.1), stacklevel=2)
    G = medium.total_loss_rate
    xi = complex(np.sqrt(2 * E / m), G / (2 * np.sqrt(2 * E * m)))
    root = np.sqrt(2 * m * ep * E)
    kx = complex(root, m * ep * G / (2 * root))
    kz = complex(np.sqrt(ep) * m, -np.sqrt(ep) * medium.Gamma / 2)
    D = medium.D0 if D is None else D
    return LeakyModeParams(xi, kx, kz, 2j * D * kx / kz, m + E, D, ep)


def exact_pole(E, medium, model: ReflectivityModel, D=None, q=None):
    """Pole from the exact Fabry-Perot root and ``kx^2 = eps omega^2 - kz^2``."""
    D = medium.D0 if D is None else D
    q = medium.q if q is None else q
    omega = medium.m + E
    kz = fabry_perot_mode(model, D, q, omega, medium.eps_real)
    k2 = complex(medium.eps_real, medium.eps_imag) * omega**2
    kx = complex(_kz(k2, kz))
    n = omega * np.sqrt(medium.eps_real)
    xi = complex(np.arcsin(kx / n))
    return LeakyModeParams(xi, kx, kz, 2j * D * kx / kz, omega, D, medium.eps_real)


@dataclass(frozen=True)
class SourceSpec:
    """Line current ``I0`` at height ``d`` oscillating at ``omega``."""

    I0: float
    d: float
    omega: float

    def check(self, D):
        if not 0 < self.d <= 0.05 * D:
            raise ValidationError(f"source height d={self.d} must satisfy 0 < d <= 0.05 D")


@dataclass(frozen=True)
class ImagingSetup:
    NA: float
    M: float = 1.0
    A: float = 1.0
    eps_real: float = 1.0

    def __post_init__(self):
        if not self.NA > 0 or self.NA > np.sqrt(self.eps_real):
            raise ValidationError("numerical aperture must lie in (0, sqrt(eps')]")
        if not self.M > 0:
            raise ValidationError("magnification must be > 0")
        if self.NA >= np.sqrt(self.eps_real):
            warnings.warn("numerical aperture at the band edge sqrt(eps')", stacklevel=3)


def cavity_spectrum(kx, source: SourceSpec, model: ReflectivityModel, D, eps_real=1.0):
    """Resonant cavity spectrum ``(i omega I0 d / 2 pi) / (1 + r exp(2 i kz D))``."""
    w = source.omega
    kz = _kz(eps_real * w**2, kx)
    rv = model.value(w, kx)
    return (1j * w * source.I0 * source.d / (2 * np.pi)) / (1.0 + rv * np.exp(2j * kz * D))


class PoleField(NamedTuple):
    value: np.ndarray
    invalid: np.ndarray


def leaky_field(params: LeakyModeParams, source: SourceSpec, model: ReflectivityModel,
                x, z):
    """Pole (leaky-wave) contribution at points ``(x, z)`` with ``z >= d``.

    Each term is gated by a strict Heaviside factor: the direct and
    transmitted waves need ``|phi| > Re xi``, the mirror wave
    ``|phibar| > Re xi``, with ``phi = atan2(x, z)`` and
    ``phibar = atan2(x, D - z)``.  Points where every applicable gate is
    closed get a zero value and ``invalid = True``.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    D = params.D
    source.check(D)
    if np.any(z < source.d):
        raise ValidationError("pole field is defined for z >= d only")
    xi_r = params.xi.real
    phi = np.arctan2(x, z)
    phib = np.arctan2(x, D - z)
    g1 = np.abs(phi) > xi_r
    g2 = np.abs(phib) > xi_r
    kx, kz = params.kx, params.kz
    pref = -source.omega * source.I0 * source.d * np.exp(1j * kx * np.abs(x)) / params.denominator
    inside = z <= D
    f_in = (np.where(g1, np.exp(1j * kz * z), 0)
            + np.where(g2, model.r * np.exp(2j * kz * D) * np.exp(-1j * kz * z), 0))
    f_out = np.where(g1, model.t * np.exp(1j * kz * z), 0)
    f = np.where(inside, f_in, f_out)
    invalid = np.where(inside, ~(g1 | g2), ~g1)
    return PoleField(np.where(invalid, 0, pref * f), invalid)


def hankel_asymptotic(s):
    """Large-argument ``H0^(1)(s) ~ sqrt(2/(pi s)) exp(i (s - pi/4))``."""
    s = np.asarray(s, dtype=float)
    return np.sqrt(2.0 / (np.pi * s)) * np.exp(1j * (s - np.pi / 4))


def sdp_farfield(source: SourceSpec, model: ReflectivityModel, D, x, z, eps_real=1.0,
                 guard=10.0):
    """Steepest-descent (radiated) contribution for ``z >= d``.

    Inside the cavity the direct and mirror-image cylindrical waves are
    weighted by the cavity spectrum at their emission angles; beyond the
    mirror only the transmitted direct wave remains.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    n = source.omega * np.sqrt(eps_real)
    rho = np.hypot(x, z)
    rhob = np.hypot(x, D - z)
    inside = z <= D
    if np.any(n * rho < guard) or np.any(inside & (n * rhob < guard)):
        raise ValidationError(f"asymptotic-invalid: omega sqrt(eps') rho below {guard}")
    phi = np.arctan2(x, z)
    phib = np.arctan2(x, D - z)
    direct = n * cavity_spectrum(n * np.sin(phi), source, model, D, eps_real) * np.cos(phi) \
        * hankel_asymptotic(n * rho)
    kxb = n * np.sin(phib)
    mirror = (n * cavity_spectrum(kxb, source, model, D, eps_real) * np.cos(phib)
              * hankel_asymptotic(n * np.where(inside, rhob, 1.0))
              * model.value(source.omega, kxb) * np.exp(1j * n * np.cos(phib) * D))
    trans = direct * model.transmission(source.omega, n * np.sin(phi))
    return np.where(inside, direct + mirror, trans)


def pole_field_1d(params: LeakyModeParams, source: SourceSpec, model: ReflectivityModel, x):
    """Image-plane pole field ``-omega I0 d t_P exp(i kxP |x|) / denominator``."""
    return (-source.omega * source.I0 * source.d * model.t
            * np.exp(1j * params.kx * np.abs(np.asarray(x, dtype=float))) / params.denominator)


# -- imaging ------------------------------------------------------------------------

def psf(u, bandwidth):
    """``sin(W u)/(pi u)`` with the limit ``W/pi`` at ``u = 0``."""
    u = np.asarray(u, dtype=float)
    small = u == 0
    safe = np.where(small, 1.0, u)
    return np.where(small, bandwidth / np.pi, np.sin(bandwidth * safe) / (np.pi * safe))


class ImageResult(NamedTuple):
    spectral: np.ndarray
    convolution: np.ndarray
    rel_l2: float


def _spectral_route(psi, x, xp, M, W, dx, chunk=256):
    span = np.max(np.abs(x)) + np.max(np.abs(xp)) / M
    nq = int(0.75 * W * span) + 64
    k, wq = roots_legendre(nq)
    k = W * k
    wq = W * wq
    psik = np.empty(nq, dtype=complex)
    for a in range(0, nq, chunk):
        psik[a:a + chunk] = np.exp(-1j * np.outer(k[a:a + chunk], x)) @ psi * dx / (2 * np.pi)
    out = np.empty(xp.size, dtype=complex)
    for a in range(0, xp.size, chunk):
        out[a:a + chunk] = np.exp(-1j * np.outer(xp[a:a + chunk] / M, k)) @ (wq * psik)
    return out


def image_field(psi_p, x, setup: ImagingSetup, omega, xprime, backend=None,
                edge_tol=1e-6):
    """Microscope image of a 1D field by two independent routes.

    Route one filters the sampled spectrum
    ``psi(k) = (1/2 pi) sum_j psi_j exp(-i k x_j) dx`` to ``|k| <= omega NA`` and
    integrates ``psi(k) exp(-i k x'/M)`` by Gauss-Legendre quadrature.  Route
    two sums ``psi_j PSF(x_j + x'/M) dx`` directly.  Both carry the overall
    constant ``setup.A``.
    """
    psi = np.asarray(psi_p, dtype=complex)
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xprime, dtype=float)
    peak = np.max(np.abs(psi))
    if peak > 0 and max(abs(psi[0]), abs(psi[-1])) > edge_tol * peak:
        raise ValidationError("input has not decayed at the window edges")
    dx = float(x[1] - x[0])
    W = omega * setup.NA
    spec = setup.A * _spectral_route(psi, x, xp, setup.M, W, dx)
    impl = kernels if backend is None else kernels.get_backend(backend)
    conv = setup.A * impl.psf_convolve(psi, x, xp / setup.M, dx, W)
    scale = np.linalg.norm(spec)
    rel = float(np.linalg.norm(spec - conv) / scale) if scale > 0 else float(np.linalg.norm(conv))
    return ImageResult(spec, conv, rel)


# -- evanescent velocity ------------------------------------------------------------------

def evanescent_velocity(Gamma, m, Delta, eps_real=1.0):
    """Planar speed ``Gamma / (2 sqrt(2 m eps' |Delta|))`` of a lossy evanescent wave."""
    if Delta >= 0:
        raise ValidationError("evanescent velocity needs Delta < 0")
    if Gamma < 0 or m <= 0:
        raise ValidationError("need Gamma >= 0 and m > 0")
    return Gamma / (2.0 * np.sqrt(2.0 * m * eps_real * abs(Delta)))


class SIVelocity(NamedTuple):
    velocity: float
    Gamma: float
    m: float
    Delta: float


def evanescent_velocity_si(lifetime_s, detuning_eV, wavelength_m, eps_real=1.0):
    """SI version: lifetime in seconds, (negative) detuning in eV, wavelength in metres.

    Rates and energies become inverse lengths (``1/(c tau)``,
    ``|Delta| e/(hbar c)``, ``2 pi/lambda``); the speed is returned in m/s
    together with those inverse lengths.
    """
    c = constants.c
    G = 1.0 / (c * lifetime_s)
    D = detuning_eV * constants.e / (constants.hbar * c)
    m = 2 * np.pi / wavelength_m
    return SIVelocity(evanescent_velocity(G, m, D, eps_real) * c, G, m, D)
