"""Guidance velocities, spin density, trajectories and loss-jump ensembles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import kernels
from .core import ComplexScalarField, Grid2D, SpinorField, derivative, gradient
from .errors import NumericalError, ValidationError

DENSITY_FLOOR = 1e-12


@dataclass(frozen=True)
class VelocityField2D:
    """Sampled planar velocity with a validity mask.

    ``empty`` is set when no sample passes the density floor (e.g. a zero
    field); the velocity is zero on masked-out points.
    """

    grid: Grid2D
    vx: np.ndarray
    vy: np.ndarray
    mask: np.ndarray

    @property
    def empty(self):
        return not bool(np.any(self.mask))

    def speed(self):
        return np.hypot(self.vx, self.vy)


def density_mask(density, floor=DENSITY_FLOOR):
    peak = float(np.max(density)) if density.size else 0.0
    if peak <= 0:
        return np.zeros(density.shape, dtype=bool)
    return density >= floor * peak


def _guidance(current_x, current_y, density, mass, mask):
    safe = np.where(mask, density, 1.0)
    vx = np.where(mask, current_x / (mass * safe), 0.0)
    vy = np.where(mask, current_y / (mass * safe), 0.0)
    return vx, vy


def scalar_velocity(psi: ComplexScalarField, medium, method=None, floor=DENSITY_FLOOR):
    """Guidance velocity ``Im[psi* grad psi] / (eps' m |psi|^2)``.

    Parameters
    ----------
    psi : ComplexScalarField
    medium : CavityMedium
    method : {'spectral', 'central'}, optional
        Gradient scheme; defaults to the grid's preference.
    floor : float
        Points with ``|psi|^2 < floor * max|psi|^2`` are masked out.
    """
    g = psi.grid
    v = psi.values
    dx, dy = gradient(v, g, method)
    rho = np.abs(v) ** 2
    mask = density_mask(rho, floor)
    jx = np.imag(np.conj(v) * dx)
    jy = np.imag(np.conj(v) * dy)
    vx, vy = _guidance(jx, jy, rho, medium.kinetic_mass, mask)
    return VelocityField2D(g, vx, vy, mask)


class PauliVelocity(NamedTuple):
    total: VelocityField2D
    convective: VelocityField2D
    spin: VelocityField2D


def pauli_velocity(spinor: SpinorField, medium, method=None, floor=DENSITY_FLOOR):
    """Spinor guidance velocity split into convective and spin parts.

    The convective part is ``Im[F^+ grad F] / (eps' m F^+F)``; the spin part
    is ``(d_y s, -d_x s) / (2 eps' m F^+F)`` with ``s = |psi_+|^2 - |psi_-|^2``.
    ``total`` is their sum.
    """
    g = spinor.grid
    circ = spinor.to_circular()
    a, b = circ.first, circ.second
    ax, ay = gradient(a, g, method)
    bx, by = gradient(b, g, method)
    rho = np.abs(a) ** 2 + np.abs(b) ** 2
    mask = density_mask(rho, floor)
    jx = np.imag(np.conj(a) * ax + np.conj(b) * bx)
    jy = np.imag(np.conj(a) * ay + np.conj(b) * by)
    M = medium.kinetic_mass
    cvx, cvy = _guidance(jx, jy, rho, M, mask)
    s = np.abs(a) ** 2 - np.abs(b) ** 2
    sx, sy = gradient(s, g, method)
    svx, svy = _guidance(0.5 * sy, -0.5 * sx, rho, M, mask)
    conv = VelocityField2D(g, cvx, cvy, mask)
    spin = VelocityField2D(g, svx, svy, mask)
    total = VelocityField2D(g, cvx + svx, cvy + svy, mask)
    return PauliVelocity(total, conv, spin)


@dataclass(frozen=True)
class SpinDensityField:
    grid: Grid2D
    sigma_z: np.ndarray
    mask: np.ndarray


def spin_density(spinor: SpinorField, floor=DENSITY_FLOOR):
    """``Sigma_z = (|psi_+|^2 - |psi_-|^2) / (2 (|psi_+|^2 + |psi_-|^2))``."""
    circ = spinor.to_circular()
    p2 = np.abs(circ.first) ** 2
    m2 = np.abs(circ.second) ** 2
    rho = p2 + m2
    mask = density_mask(rho, floor)
    sz = np.where(mask, 0.5 * (p2 - m2) / np.where(mask, rho, 1.0), 0.0)
    return SpinDensityField(spinor.grid, sz, mask)


def spin_density_cartesian(psi_x, psi_y, floor=DENSITY_FLOOR):
    """Same quantity from the cartesian pair: ``Im[psi_x* psi_y] / (|psi_x|^2 + |psi_y|^2)``."""
    rho = np.abs(psi_x) ** 2 + np.abs(psi_y) ** 2
    mask = density_mask(rho, floor)
    return np.where(mask, np.imag(np.conj(psi_x) * psi_y) / np.where(mask, rho, 1.0), 0.0)


# -- trajectories ---------------------------------------------------------------

@dataclass(frozen=True)
class VelocityHistory:
    """Velocity snapshots at increasing times, linearly interpolated in t.

    The validity mask is the intersection of the snapshot masks.
    """

    grid: Grid2D
    times: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_fields(cls, times, fields: Sequence[VelocityField2D]):
        times = np.asarray(times, dtype=float)
        if len(times) != len(fields) or len(fields) == 0:
            raise ValidationError("need one velocity field per time")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("snapshot times must increase strictly")
        mask = np.logical_and.reduce([f.mask for f in fields])
        return cls(fields[0].grid, times, np.stack([f.vx for f in fields]),
                   np.stack([f.vy for f in fields]), mask)

    @classmethod
    def static(cls, field_: VelocityField2D):
        return cls.from_fields([0.0], [field_])


TERMINATIONS = ("none", "jump", "left-domain")


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped planar path with its termination event."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    termination: str = "none"
    t_end: float | None = None

    def __post_init__(self):
        if self.termination not in TERMINATIONS:
            raise ValidationError(f"unknown termination {self.termination!r}")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValidationError("trajectory times must increase strictly")

    @property
    def start(self):
        return float(self.x[0]), float(self.y[0])

    @property
    def end(self):
        return float(self.x[-1]), float(self.y[-1])

    def truncated(self, t_cut, termination="jump"):
        keep = self.t <= t_cut
        return Trajectory(self.t[keep], self.x[keep], self.y[keep], termination, float(t_cut))

    def status_column(self):
        """Per-sample status labels used for CSV output."""
        status = np.array(["ok"] * len(self.t), dtype=object)
        if len(status) and self.termination != "none":
            status[-1] = self.termination
        return status


def _as_history(provider):
    if isinstance(provider, VelocityHistory):
        return provider
    if isinstance(provider, VelocityField2D):
        return VelocityHistory.static(provider)
    return None


def integrate_trajectories(provider, starts, t0, t1, dt, max_cells=10.0, backend=None):
    """Fourth-order Runge-Kutta paths for many seed points.

    Parameters
    ----------
    provider : VelocityHistory, VelocityField2D or callable
        Sampled fields are interpolated bilinearly in space and linearly in
        time by the compiled kernel; a callable ``f(t, x, y) -> (vx, vy)``
        (vectorised over points) is integrated directly.
    starts : array (n, 2)
    t0, t1, dt : float
    max_cells : float
        A step longer than this many grid cells aborts with NumericalError.

    Returns
    -------
    list of Trajectory
    """
    if not dt > 0 or not t1 > t0:
        raise ValidationError("need dt > 0 and t1 > t0")
    nsteps = int(round((t1 - t0) / dt))
    if nsteps < 1 or abs(nsteps * dt - (t1 - t0)) > 1e-9 * (t1 - t0):
        nsteps = int(np.ceil((t1 - t0) / dt - 1e-12))
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    hist = _as_history(provider)
    if hist is None:
        xs, ys, nvalid, status = _trace_callable(provider, starts, t0, dt, nsteps)
        cell = None
    else:
        g = hist.grid
        cell = min(g.dx, g.dy)
        impl = kernels if backend is None else kernels.get_backend(backend)
        xs, ys, nvalid, status = impl.rk4_trace(
            hist.vx, hist.vy, hist.mask, hist.times, float(g.x[0]), float(g.y[0]),
            g.dx, g.dy, starts, float(t0), float(dt), nsteps, max_cells * cell)
    out = []
    for p in range(starts.shape[0]):
        n = int(nvalid[p])
        if status[p] == 2:
            raise NumericalError(
                f"trajectory {p} from {tuple(starts[p])}: step exceeded {max_cells} cells "
                f"at t={t0 + (n - 1) * dt:.6g}", step=n)
        t = t0 + dt * np.arange(n)
        term = "left-domain" if status[p] == 1 else "none"
        out.append(Trajectory(t, xs[p, :n].copy(), ys[p, :n].copy(), term,
                              float(t[-1]) if n else float(t0)))
    return out


def _trace_callable(f, starts, t0, dt, nsteps):
    n = starts.shape[0]
    xs = np.full((n, nsteps + 1), np.nan)
    ys = np.full((n, nsteps + 1), np.nan)
    x = starts[:, 0].copy()
    y = starts[:, 1].copy()
    xs[:, 0], ys[:, 0] = x, y
    for s in range(nsteps):
        t = t0 + s * dt
        k1 = np.asarray(f(t, x, y))
        k2 = np.asarray(f(t + dt / 2, x + dt / 2 * k1[0], y + dt / 2 * k1[1]))
        k3 = np.asarray(f(t + dt / 2, x + dt / 2 * k2[0], y + dt / 2 * k2[1]))
        k4 = np.asarray(f(t + dt, x + dt * k3[0], y + dt * k3[1]))
        x = x + dt * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]) / 6
        y = y + dt * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]) / 6
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise NumericalError(f"non-finite trajectory position at step {s + 1}", step=s + 1)
        xs[:, s + 1], ys[:, s + 1] = x, y
    return xs, ys, np.full(n, nsteps + 1), np.zeros(n, dtype=int)


def integrate_trajectory(provider, start, t0, t1, dt, **kw):
    """Single-path convenience wrapper around :func:`integrate_trajectories`."""
    return integrate_trajectories(provider, [start], t0, t1, dt, **kw)[0]


# -- loss jumps -------------------------------------------------------------------

@dataclass(frozen=True)
class JumpProcess:
    """Uniform per-particle loss-jump rate ``Gamma + m eps''/eps'``."""

    rate: float
    seed: int = 0

    def __post_init__(self):
        if not self.rate >= 0:
            raise ValidationError("jump rate must be >= 0")

    @classmethod
    def from_medium(cls, medium, seed=0):
        return cls(medium.total_loss_rate, seed)


@dataclass(frozen=True)
class JumpEnsemble:
    times: np.ndarray
    survival: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    jump_times: np.ndarray
    n: int
    trajectories: list | None = None

    def analytic(self, rate):
        return np.exp(-rate * (self.times - self.times[0]))


def wilson_interval(frac, n, z=1.96):
    """Wilson score interval for a binomial proportion."""
    frac = np.asarray(frac, dtype=float)
    den = 1 + z**2 / n
    centre = (frac + z**2 / (2 * n)) / den
    half = z * np.sqrt(frac * (1 - frac) / n + z**2 / (4 * n**2)) / den
    # the interval always contains frac; clamp away rounding at 0 and 1
    return np.minimum(centre - half, frac), np.maximum(centre + half, frac)


def trajectory_rng(seed, index):
    """Independent random stream for trajectory ``index`` of a run."""
    return np.random.Generator(np.random.Philox(key=[int(seed), int(index)]))


def bell_jump_ensemble(density_history, jump: JumpProcess, N, t0, t1, dt,
                       velocity=None, starts=None):
    """Monte Carlo of loss jumps terminating an ensemble of paths.

    Each member survives a step of length ``dt`` with probability
    ``exp(-rate dt)``; its first jump is drawn step by step from its own
    random stream, keyed by ``(jump.seed, index)``.

    Parameters
    ----------
    density_history : ComplexScalarField, array or None
        Density used to draw start points when ``starts`` is not given and a
        velocity provider is supplied.
    jump : JumpProcess
    N : int
    t0, t1, dt : float
    velocity : VelocityHistory or VelocityField2D, optional
        When given, paths are integrated and cut at their jump times.
    starts : array (N, 2), optional

    Returns
    -------
    JumpEnsemble
    """
    if N < 1:
        raise ValidationError("N must be >= 1")
    p = -np.expm1(-jump.rate * dt)
    if jump.rate * dt > 0.1:
        raise ValidationError(f"rate*dt = {jump.rate * dt:.3g} > 0.1: time step too coarse")
    nsteps = int(round((t1 - t0) / dt))
    times = t0 + dt * np.arange(nsteps + 1)
    jump_step = np.full(N, np.iinfo(np.int64).max, dtype=np.int64)
    if p > 0:
        for i in range(N):
            # first success of a per-step Bernoulli(p) sequence
            jump_step[i] = trajectory_rng(jump.seed, i).geometric(p)
    alive = jump_step[None, :] > np.arange(nsteps + 1)[:, None]
    surv = alive.mean(axis=1)
    lo, hi = wilson_interval(surv, N)
    jt = np.where(jump_step <= nsteps, t0 + dt * jump_step.astype(float), np.inf)
    trajs = None
    if velocity is not None:
        if starts is None:
            starts = sample_positions(density_history, N, jump.seed)
        paths = integrate_trajectories(velocity, starts, t0, t1, dt)
        trajs = [tr.truncated(jt[i]) if np.isfinite(jt[i]) and jt[i] <= tr.t[-1] else tr
                 for i, tr in enumerate(paths)]
    return JumpEnsemble(times, surv, lo, hi, jt, N, trajs)


def sample_positions(density, n, seed):
    """Draw ``n`` cell-centre positions from a density map (``|psi|^2``)."""
    if isinstance(density, ComplexScalarField):
        grid, rho = density.grid, density.density
    else:
        grid, rho = density
    w = np.asarray(rho, dtype=float).ravel()
    w = w / w.sum()
    out = np.empty((n, 2))
    for i in range(n):
        k = trajectory_rng(seed + 1, i).choice(w.size, p=w)
        j, c = divmod(k, grid.nx)
        out[i] = grid.x[c], grid.y[j]
    return out


# -- loss-rate fields and continuity --------------------------------------------------

class MasterRates(NamedTuple):
    loss: np.ndarray
    source: np.ndarray
    residual: np.ndarray | None


def continuity_residual(psi0, psi1, dt, medium, method="central"):
    """Discrete ``d_t rho + div(rho v) + rate * rho`` at the midpoint of two snapshots.

    Time derivative by the centred difference of the densities, flux and
    loss by the average of the two snapshots (second order in ``dt``);
    gradients and divergence by ``method``.
    """
    if psi0.grid != psi1.grid:
        raise ValidationError("snapshots live on different grids")
    g = psi0.grid
    r0, r1 = psi0.density, psi1.density
    flux = []
    for v in (psi0.values, psi1.values):
        dx, dy = gradient(v, g, method)
        flux.append((np.imag(np.conj(v) * dx), np.imag(np.conj(v) * dy)))
    jx = 0.5 * (flux[0][0] + flux[1][0]) / medium.kinetic_mass
    jy = 0.5 * (flux[0][1] + flux[1][1]) / medium.kinetic_mass
    div = derivative(jx, g, "x", method) + derivative(jy, g, "y", method)
    return (r1 - r0) / dt + div + medium.total_loss_rate * 0.5 * (r0 + r1)


def master_equation_rates(psi, medium, psi_next=None, dt=None, method="central"):
    """Loss and source rate densities of the jump master equation.

    Sources vanish identically for the uniform-loss split; the loss density
    is ``(Gamma + m eps''/eps') |psi|^2``.  With a second snapshot the
    continuity residual is returned too.
    """
    rho = psi.density
    loss = medium.total_loss_rate * rho
    res = None
    if psi_next is not None:
        res = continuity_residual(psi, psi_next, dt, medium, method)
    return MasterRates(loss, np.zeros_like(rho), res)


def velocity_history(snapshots, medium, method=None):
    """Velocity history from ``[(t, ComplexScalarField), ...]``."""
    times = [t for t, _ in snapshots]
    return VelocityHistory.from_fields(times, [scalar_velocity(f, medium, method)
                                               for _, f in snapshots])


VelocityCallable = Callable[[float, np.ndarray, np.ndarray], tuple]
