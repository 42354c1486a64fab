"""Time evolution of the effective 2D wave equations.

The scalar equation is

    i dpsi/dt = -lap(psi) / (2 eps' m) + (V - i*loss) psi,
    loss = Gamma/2 + m eps''/(2 eps'),

propagated either by Strang splitting with spectral kinetic factors or by an
implicit-midpoint reference with a five-point Laplacian.  The spin-1/2
(two-component) version is diagonal and reuses the scalar kernel; the
stream-function route builds transverse polarisation pairs from one scalar.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import (ComplexScalarField, Grid2D, SpinorField, cartesian_to_circular,
                   derivative, DEFAULT_GUARD)
from .errors import (ConfigurationError, ConvergenceError, NumericalError,
                     ParaxialWarning, ValidationError)


@dataclass(frozen=True)
class ComplexPotential:
    """Real potential map plus a uniform loss rate (and optional sponge)."""

    V_real: np.ndarray
    loss_rate: float = 0.0
    sponge: np.ndarray | None = None

    def __post_init__(self):
        if not self.loss_rate >= 0:
            raise ValidationError("loss_rate must be >= 0")
        V = np.array(self.V_real, dtype=float)
        V.setflags(write=False)
        object.__setattr__(self, "V_real", V)
        if self.sponge is not None:
            s = np.array(self.sponge, dtype=float)
            if s.shape != V.shape or np.any(s < 0):
                raise ValidationError("sponge must be a non-negative map of grid shape")
            s.setflags(write=False)
            object.__setattr__(self, "sponge", s)

    @classmethod
    def from_medium(cls, V, medium, sponge=None):
        return cls(V, medium.amplitude_loss_rate, sponge)

    def values(self):
        """Complex potential ``V - i(loss + sponge)`` sampled on the grid."""
        absorb = self.loss_rate if self.sponge is None else self.loss_rate + self.sponge
        return self.V_real - 1j * absorb

    def with_sponge(self, sponge):
        return ComplexPotential(self.V_real, self.loss_rate, sponge)


@dataclass(frozen=True)
class PropagatorConfig:
    dt: float
    scheme: str = "split-step"
    boundary: str = "periodic"
    sponge_width: float = 0.0
    sponge_strength: float = 0.0
    max_iter: int = 50
    tol: float = 1e-10

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be > 0")
        if self.scheme not in ("split-step", "implicit"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.boundary not in ("periodic", "sponge"):
            raise ConfigurationError(f"unknown boundary {self.boundary!r}")


def sponge_profile(grid: Grid2D, width, strength):
    """Quadratic absorbing ramp, zero in the interior, ``strength`` at the walls.

    The ramp is laid along every axis longer than ``4 * width``; a narrow
    strip therefore only absorbs at its two far ends.
    """
    if width <= 0 or strength <= 0:
        return np.zeros(grid.shape)
    X, Y = grid.mesh()
    dist = np.full(grid.shape, np.inf)
    for L, C in ((grid.Lx, X), (grid.Ly, Y)):
        if width < L / 4:
            dist = np.minimum(dist, L / 2 - np.abs(C))
    if not np.isfinite(dist).any():
        raise ConfigurationError("sponge width must be < L/4 along at least one axis")
    ramp = np.clip((width - dist) / width, 0.0, 1.0)
    return strength * ramp**2


def sponge_mask(grid, cfg):
    """Boolean map of points outside the sponge layer (used to exclude audits)."""
    if cfg.boundary != "sponge" or cfg.sponge_width <= 0:
        return np.ones(grid.shape, dtype=bool)
    return sponge_profile(grid, cfg.sponge_width, 1.0) == 0


def _effective_potential(pot, grid, cfg):
    if cfg.boundary == "sponge":
        pot = pot.with_sponge(sponge_profile(grid, cfg.sponge_width, cfg.sponge_strength))
    Vc = pot.values()
    if cfg.dt * float(np.max(np.abs(Vc))) > 0.1:
        raise ConfigurationError(
            f"dt*max|V| = {cfg.dt * np.max(np.abs(Vc)):.3g} > 0.1; reduce dt")
    return Vc


def _check_finite(arr, step):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite wavefunction after step {step}", step=step)


def split_step_iter(psi: ComplexScalarField, pot, medium, cfg, n_steps, stride=1):
    """Yield ``(step, values)`` every ``stride`` Strang steps (step 0 first).

    The state lives in Fourier space between steps, so the trajectory is
    identical whatever ``stride`` is used.
    """
    grid = psi.grid
    if not grid.periodic:
        raise ConfigurationError("split-step propagation needs a periodic grid")
    Vc = _effective_potential(pot, grid, cfg)
    dt = cfg.dt
    half_kin = np.exp(-1j * grid.k2() * dt / (4.0 * medium.kinetic_mass))
    full_pot = np.exp(-1j * Vc * dt)
    yield 0, np.array(psi.values)
    spec = np.fft.fft2(psi.values)
    for n in range(1, n_steps + 1):
        spec *= half_kin
        state = np.fft.ifft2(spec)
        state *= full_pot
        _check_finite(state, n)
        spec = np.fft.fft2(state)
        spec *= half_kin
        if n % stride == 0 or n == n_steps:
            yield n, np.fft.ifft2(spec)


def split_step_propagate(psi, pot, medium, cfg, n_steps):
    """Advance ``psi`` by ``n_steps`` Strang steps of size ``cfg.dt``."""
    out = psi.values
    for _, out in split_step_iter(psi, pot, medium, cfg, n_steps, stride=max(n_steps, 1)):
        pass
    return psi.with_values(out)


def fd_laplacian(grid: Grid2D):
    """Five-point Laplacian as a sparse matrix on the flattened (x-fastest) grid."""
    def lap1(n, h, periodic):
        if n == 1:
            # a single sample row: the field is uniform along this axis
            return sp.csr_matrix((1, 1))
        main = -2.0 * np.ones(n)
        off = np.ones(n - 1)
        L = sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="lil")
        if periodic:
            L[0, n - 1] += 1.0
            L[n - 1, 0] += 1.0
        return (L / h**2).tocsr()

    Lx = lap1(grid.nx, grid.dx, grid.periodic_x)
    Ly = lap1(grid.ny, grid.dy, grid.periodic_y)
    return (sp.kron(sp.identity(grid.ny), Lx) + sp.kron(Ly, sp.identity(grid.nx))).tocsc()


class _MidpointStepper:
    def __init__(self, grid, Vc, medium, cfg):
        H = -fd_laplacian(grid) / (2.0 * medium.kinetic_mass) + sp.diags(Vc.ravel())
        eye = sp.identity(grid.size, format="csc", dtype=complex)
        half = 0.5j * cfg.dt * H
        self.A = (eye + half).tocsc()
        self.B = (eye - half).tocsr()
        self.lu = spla.splu(self.A)
        self.cfg = cfg

    def step(self, vec, n):
        b = self.B @ vec
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            return np.zeros_like(b)
        x = self.lu.solve(b)
        for _ in range(self.cfg.max_iter):
            r = b - self.A @ x
            if np.linalg.norm(r) <= self.cfg.tol * bnorm:
                return x
            x = x + self.lu.solve(r)
        raise ConvergenceError(f"implicit step {n} did not reach residual {self.cfg.tol}",
                               step=n)


def implicit_iter(psi, pot, medium, cfg, n_steps, stride=1):
    grid = psi.grid
    Vc = _effective_potential(pot, grid, cfg)
    stepper = _MidpointStepper(grid, Vc, medium, cfg)
    vec = np.array(psi.values, dtype=complex).ravel()
    yield 0, vec.reshape(grid.shape)
    for n in range(1, n_steps + 1):
        vec = stepper.step(vec, n)
        _check_finite(vec, n)
        if n % stride == 0 or n == n_steps:
            yield n, vec.reshape(grid.shape).copy()


def implicit_reference_propagate(psi, pot, medium, cfg, n_steps):
    """Implicit-midpoint (Crank-Nicolson) propagation with a 5-point Laplacian.

    Serves as an independent check on :func:`split_step_propagate`: it shares
    no code path with the spectral kinetic factors.  Each step is solved by a
    sparse LU factorisation followed by iterative refinement down to a
    relative residual of ``cfg.tol``.
    """
    out = psi.values
    for _, out in implicit_iter(psi, pot, medium, cfg, n_steps, stride=max(n_steps, 1)):
        pass
    return psi.with_values(out)


def propagate(psi, pot, medium, cfg, n_steps):
    if cfg.scheme == "implicit":
        return implicit_reference_propagate(psi, pot, medium, cfg, n_steps)
    return split_step_propagate(psi, pot, medium, cfg, n_steps)


def propagate_iter(psi, pot, medium, cfg, n_steps, stride=1):
    if cfg.scheme == "implicit":
        return implicit_iter(psi, pot, medium, cfg, n_steps, stride)
    return split_step_iter(psi, pot, medium, cfg, n_steps, stride)


# -- stationary states ----------------------------------------------------------

def leaky_wavevector(E, medium):
    """Complex in-plane wavevector of the leaky mode at energy ``E``.

    First order in the loss:  k = sqrt(2 m eps' E) + i m eps' G / (2 sqrt(2 m eps' E))
    with G = Gamma + m eps''/eps'.  For ``E < 0`` the same expansion is
    continued analytically (evanescent branch).
    """
    M = medium.kinetic_mass
    G = medium.total_loss_rate
    if E > 0:
        root = np.sqrt(2 * M * E)
        return complex(root, M * G / (2 * root))
    if E < 0:
        kappa = np.sqrt(2 * M * abs(E))
        return complex(M * G / (2 * kappa), kappa)
    raise ValidationError("zero energy: leaky-mode expansion is singular")


def _energy_guard(E, medium):
    if abs(E) / medium.m > DEFAULT_GUARD:
        warnings.warn(ParaxialWarning("|E|/m", abs(E) / medium.m, DEFAULT_GUARD),
                      stacklevel=3)


MODE_KINDS = ("propagating-plane-wave", "leaky-plane-wave", "evanescent", "waveguide-step")


def stationary_mode(kind, params, grid, medium):
    """Closed-form stationary solutions.

    Parameters
    ----------
    kind : str
        ``'propagating-plane-wave'`` (``E`` or ``k``, optional ``angle``),
        ``'leaky-plane-wave'`` (``E``, optional ``x0`` origin),
        ``'evanescent'`` (detuning ``Delta`` < 0, optional ``x0``),
        ``'waveguide-step'`` (``E``, step height ``V0``, interface ``x0``).
    params : dict
    grid : Grid2D
    medium : CavityMedium

    Returns
    -------
    ComplexScalarField
    """
    X, Y = grid.mesh()
    M = medium.kinetic_mass
    x0 = float(params.get("x0", 0.0))
    if kind == "propagating-plane-wave":
        if "k" in params:
            k = float(params["k"])
        else:
            E = float(params["E"])
            _energy_guard(E, medium)
            k = np.sqrt(2 * M * E)
        th = float(params.get("angle", 0.0))
        vals = np.exp(1j * k * ((X - x0) * np.cos(th) + Y * np.sin(th)))
    elif kind == "leaky-plane-wave":
        E = float(params["E"])
        _energy_guard(E, medium)
        if E <= 0:
            raise ValidationError("leaky plane wave needs E > 0")
        vals = np.exp(1j * leaky_wavevector(E, medium) * (X - x0))
    elif kind == "evanescent":
        D = float(params["Delta"])
        if D == 0:
            raise ValidationError("evanescent mode needs a non-zero detuning")
        if D > 0:
            raise ValidationError("evanescent mode needs a negative detuning")
        _energy_guard(D, medium)
        vals = np.exp(1j * leaky_wavevector(D, medium) * (X - x0))
    elif kind == "waveguide-step":
        E = float(params["E"])
        V0 = float(params["V0"])
        _energy_guard(E, medium)
        R, T, k1, k2 = step_coefficients(E, V0, medium)
        xi = X - x0
        left = np.exp(1j * k1 * xi) + R * np.exp(-1j * k1 * xi)
        right = T * np.exp(1j * k2 * xi)
        vals = np.where(xi < 0, left, right)
    else:
        raise ValidationError(f"unknown stationary mode {kind!r}")
    return ComplexScalarField(grid, vals)


def step_coefficients(E, V0, medium):
    """Reflection/transmission amplitudes and wavevectors used by the step mode."""
    M = medium.kinetic_mass
    loss = medium.amplitude_loss_rate
    k1 = np.sqrt(complex(2 * M * (E + 1j * loss)))
    k2 = np.sqrt(complex(2 * M * (E - V0 + 1j * loss)))
    if k2.imag < 0:
        k2 = -k2
    return (k1 - k2) / (k1 + k2), 2 * k1 / (k1 + k2), k1, k2


# -- spinors and stream functions ----------------------------------------------

def pauli_propagate(spinor: SpinorField, pot, medium, cfg, n_steps):
    """Propagate both spinor components with the scalar kernel (no mixing)."""
    a, b = spinor.components()
    out = []
    for comp in (a, b):
        if not np.any(comp.values):
            out.append(comp.values)
        else:
            out.append(propagate(comp, pot, medium, cfg, n_steps).values)
    return SpinorField(spinor.grid, out[0], out[1], basis=spinor.basis)


@dataclass(frozen=True)
class StreamFunction:
    Q: ComplexScalarField

    @property
    def grid(self):
        return self.Q.grid

    def spinor(self):
        return spinor_from_stream(self)


class StreamSpinor(NamedTuple):
    spinor: SpinorField
    psi_x: np.ndarray
    psi_y: np.ndarray


def spinor_from_stream(Q):
    """Transverse polarisation pair from a stream function.

    ``psi_x = -dQ/dy`` and ``psi_y = dQ/dx`` (spectral derivatives); the
    circular components follow from the cartesian pair, which reproduces
    ``psi_+ = -i d_+ Q`` and ``psi_- = i d_- Q`` with ``d_pm = (d_x -/+ i d_y)/sqrt(2)``.
    """
    field_ = Q.Q if isinstance(Q, StreamFunction) else Q
    grid = field_.grid
    if not grid.periodic:
        raise ConfigurationError("stream-function derivatives need a periodic grid")
    px = -derivative(field_.values, grid, "y", "spectral")
    py = derivative(field_.values, grid, "x", "spectral")
    pp, pm = cartesian_to_circular(px, py)
    return StreamSpinor(SpinorField(grid, pp, pm, basis="circular"), px, py)


class TransversalityResidual(NamedTuple):
    linf: float
    l2: float
    scale: float

    @property
    def relative(self):
        return self.linf / self.scale if self.scale > 0 else 0.0


def transversality_residual(psi_x, psi_y, grid, method="spectral"):
    """Norms of ``d_x psi_x + d_y psi_y``.

    ``l2`` is the root-mean-square over the grid; ``scale`` is the larger of
    ``max|d_x psi_x|`` and ``max|d_y psi_y|`` so that ``relative`` measures
    cancellation quality.
    """
    psi_x = getattr(psi_x, "values", psi_x)
    psi_y = getattr(psi_y, "values", psi_y)
    dxx = derivative(psi_x, grid, "x", method)
    dyy = derivative(psi_y, grid, "y", method)
    div = dxx + dyy
    a = np.abs(div)
    scale = max(float(np.max(np.abs(dxx))), float(np.max(np.abs(dyy))))
    return TransversalityResidual(float(a.max()), float(np.sqrt(np.mean(a**2))), scale)


def stream_propagate(Q, pot, medium, cfg, n_steps):
    """Advance a stream function with the scalar propagator."""
    field_ = Q.Q if isinstance(Q, StreamFunction) else Q
    return StreamFunction(propagate(field_, pot, medium, cfg, n_steps))


def gaussian_packet(grid, x0=0.0, y0=0.0, sigma_x=1.0, sigma_y=None, kx=0.0, ky=0.0):
    """Gaussian packet ``exp(-(x-x0)^2/(4 sx^2) - (y-y0)^2/(4 sy^2) + i(kx x + ky y))``.

    ``sigma_y=None`` makes the packet uniform along y.
    """
    X, Y = grid.mesh()
    arg = -((X - x0) ** 2) / (4 * sigma_x**2) + 1j * (kx * X + ky * Y)
    if sigma_y is not None:
        arg = arg - (Y - y0) ** 2 / (4 * sigma_y**2)
    return ComplexScalarField(grid, np.exp(arg))
