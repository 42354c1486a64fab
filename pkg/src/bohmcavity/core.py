"""Grids, cavity media, effective potentials, sampled fields and the
random-phase ensemble average.

Natural units (hbar = c = 1) throughout.  Two-dimensional arrays are stored
with shape ``(ny, nx)`` so that the flattened, row-major order has x varying
fastest.  Sample coordinates are cell centred on ``[-L/2, L/2)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ParaxialWarning, ValidationError

DEFAULT_GUARD = 0.1


def _is_pow2(n):
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid2D:
    """Uniform cell-centred grid on the cavity plane."""

    nx: int
    ny: int
    Lx: float
    Ly: float
    periodic_x: bool = True
    periodic_y: bool = True
    spectral: bool = False

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigurationError("grid counts must be positive")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ConfigurationError("grid lengths must be positive")
        if self.spectral:
            if not (self.periodic_x and self.periodic_y):
                raise ConfigurationError("spectral derivatives need a periodic grid")
            for name, n in (("nx", self.nx), ("ny", self.ny)):
                if n < 8 or not _is_pow2(n):
                    raise ConfigurationError(
                        f"{name}={n}: spectral grids need a power of two >= 8")

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def size(self):
        return self.nx * self.ny

    @property
    def dx(self):
        return self.Lx / self.nx

    @property
    def dy(self):
        return self.Ly / self.ny

    @property
    def cell_area(self):
        return self.dx * self.dy

    @property
    def x(self):
        return -0.5 * self.Lx + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y(self):
        return -0.5 * self.Ly + (np.arange(self.ny) + 0.5) * self.dy

    def mesh(self):
        """Return ``(X, Y)`` arrays of shape ``(ny, nx)``."""
        return np.meshgrid(self.x, self.y, indexing="xy")

    @property
    def kx(self):
        return 2 * np.pi * np.fft.fftfreq(self.nx, d=self.dx)

    @property
    def ky(self):
        return 2 * np.pi * np.fft.fftfreq(self.ny, d=self.dy)

    def k2(self):
        KX, KY = np.meshgrid(self.kx, self.ky, indexing="xy")
        return KX**2 + KY**2

    @property
    def periodic(self):
        return self.periodic_x and self.periodic_y

    def default_derivative(self):
        return "spectral" if self.spectral else "central"

    def index_of(self, x, y):
        """Nearest sample index ``(j, i)`` for a physical point."""
        i = int(np.clip(np.round((x - self.x[0]) / self.dx), 0, self.nx - 1))
        j = int(np.clip(np.round((y - self.y[0]) / self.dy), 0, self.ny - 1))
        return j, i


def make_grid(nx, ny, Lx, Ly, periodic=True, spectral=False):
    """Build a :class:`Grid2D`.

    ``periodic`` is either one flag for both axes or a pair ``(px, py)``.
    Requesting ``spectral`` derivatives on counts that are not powers of two
    raises :class:`ConfigurationError`.
    """
    if isinstance(periodic, (tuple, list)):
        px, py = (bool(p) for p in periodic)
    else:
        px = py = bool(periodic)
    return Grid2D(int(nx), int(ny), float(Lx), float(Ly), px, py, bool(spectral))


# -- derivatives -------------------------------------------------------------

def _spectral_d1(values, grid, axis):
    n = values.shape[axis]
    if axis == -1 or axis == values.ndim - 1:
        k = grid.kx.copy()
    else:
        k = grid.ky.copy()
    if n % 2 == 0:
        k[n // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = n
    f = np.fft.fft(values, axis=axis)
    return np.fft.ifft(1j * k.reshape(shape) * f, axis=axis)


def _central_d1(values, h, axis, periodic):
    if periodic:
        return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2 * h)
    return np.gradient(values, h, axis=axis, edge_order=2)


def derivative(values, grid, axis, method=None):
    """First derivative along ``axis`` ('x' or 'y') of a sampled field.

    Works on arrays whose trailing two axes are ``(ny, nx)``.  ``method`` is
    ``'spectral'`` (periodic FFT, Nyquist mode dropped) or ``'central'``
    (second-order differences, one-sided at non-periodic edges).
    """
    method = method or grid.default_derivative()
    values = np.asarray(values)
    ax = -1 if axis == "x" else -2
    if method == "spectral":
        if not grid.periodic:
            raise ConfigurationError("spectral derivative on a non-periodic grid")
        out = _spectral_d1(values, grid, ax)
        return out if np.iscomplexobj(values) else out.real
    if method == "central":
        h = grid.dx if axis == "x" else grid.dy
        per = grid.periodic_x if axis == "x" else grid.periodic_y
        return _central_d1(values, h, ax, per)
    raise ConfigurationError(f"unknown derivative method {method!r}")


def gradient(values, grid, method=None):
    return derivative(values, grid, "x", method), derivative(values, grid, "y", method)


# -- media and potentials -----------------------------------------------------

def effective_mass(q, D0, eps_real):
    """Effective in-plane mass ``q*pi/(sqrt(eps')*D0)`` of longitudinal mode ``q``."""
    if q < 1 or D0 <= 0 or eps_real <= 0:
        raise ValidationError("effective_mass needs q >= 1, D0 > 0, eps' > 0")
    return q * np.pi / (np.sqrt(eps_real) * D0)


def mirror_spacing(q, m, eps_real):
    """Inverse of :func:`effective_mass` for the spacing ``D0``."""
    return q * np.pi / (np.sqrt(eps_real) * m)


@dataclass(frozen=True)
class CavityMedium:
    """Physical parameters of the planar cavity.

    ``gE`` and ``gB`` are the dispersion factors d(w eps')/dw and d(w mu')/dw
    at the carrier; ``None`` selects the non-dispersive values eps' and 1.
    """

    eps_real: float
    m: float
    D0: float
    q: int
    eps_imag: float = 0.0
    Gamma: float = 0.0
    gE: float | None = None
    gB: float = 1.0
    loss_guard: float = DEFAULT_GUARD

    def __post_init__(self):
        problems = []
        if not self.eps_real > 0:
            problems.append("eps_real must be > 0")
        if not self.eps_imag >= 0:
            problems.append("eps_imag must be >= 0")
        if not self.m > 0:
            problems.append("m must be > 0")
        if not self.D0 > 0:
            problems.append("D0 must be > 0")
        if not (int(self.q) == self.q and self.q >= 1):
            problems.append("q must be an integer >= 1")
        if not self.Gamma >= 0:
            problems.append("Gamma must be >= 0")
        if problems:
            raise ValidationError("; ".join(problems), problems)
        m_geo = effective_mass(self.q, self.D0, self.eps_real)
        if abs(m_geo - self.m) > 1e-9 * self.m:
            raise ValidationError(
                f"m={self.m!r} inconsistent with q*pi/(sqrt(eps')*D0)={m_geo!r}")
        if self.eps_imag > self.loss_guard * self.eps_real:
            warnings.warn(ParaxialWarning("eps''/eps'", self.eps_imag / self.eps_real,
                                          self.loss_guard), stacklevel=3)
        if self.gE is None:
            object.__setattr__(self, "gE", float(self.eps_real))

    @classmethod
    def build(cls, eps_real=1.0, *, m=None, q=None, D0=None, **kw):
        """Complete any two of ``(m, q, D0)`` into a consistent medium."""
        given = sum(v is not None for v in (m, q, D0))
        if given < 2:
            raise ValidationError("specify at least two of m, q, D0")
        if m is None:
            m = effective_mass(q, D0, eps_real)
        elif D0 is None:
            D0 = mirror_spacing(q, m, eps_real)
        elif q is None:
            qf = m * np.sqrt(eps_real) * D0 / np.pi
            q = int(round(qf))
            if q < 1 or abs(qf - q) > 1e-9 * max(qf, 1.0):
                raise ValidationError(f"m and D0 imply non-integer mode order {qf!r}")
        return cls(eps_real=float(eps_real), m=float(m), D0=float(D0), q=int(q), **kw)

    @property
    def kinetic_mass(self):
        """Mass appearing in the kinetic term, eps' * m."""
        return self.eps_real * self.m

    @property
    def total_loss_rate(self):
        """Population decay rate Gamma + m eps''/eps'."""
        return self.Gamma + self.m * self.eps_imag / self.eps_real

    @property
    def amplitude_loss_rate(self):
        """Imaginary part of the effective potential, Gamma/2 + m eps''/(2 eps')."""
        return 0.5 * self.total_loss_rate

    def replace(self, **kw):
        d = dict(eps_real=self.eps_real, m=self.m, D0=self.D0, q=self.q,
                 eps_imag=self.eps_imag, Gamma=self.Gamma, gE=self.gE, gB=self.gB,
                 loss_guard=self.loss_guard)
        if "eps_real" in kw and "gE" not in kw and self.gE == self.eps_real:
            d["gE"] = None
        d.update(kw)
        return CavityMedium(**d)


POTENTIAL_KINDS = ("uniform", "step", "rectangular-waveguide", "tabulated")


@dataclass(frozen=True)
class PotentialSpec:
    """Mirror-spacing modulation (or a direct potential map).

    Parameters by kind
    ------------------
    uniform
        ``delta_D``
    step
        ``x0`` (default 0), ``delta_D_left`` (default 0), ``delta_D_right``
    rectangular-waveguide
        ``width`` (along x), optional ``length`` (along y, default unbounded),
        ``center`` (x, y), ``delta_D_inside``, ``delta_D_outside`` (default 0)
    tabulated
        ``delta_D`` array of grid shape, or ``V`` array (energy units)
    """

    kind: str = "uniform"
    params: dict = field(default_factory=dict)
    guard: float = DEFAULT_GUARD

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValidationError(f"unknown potential kind {self.kind!r}")


def delta_D_map(spec, grid):
    """Mirror-spacing modulation sampled on ``grid``; ``None`` for direct V maps."""
    p = spec.params
    X, Y = grid.mesh()
    if spec.kind == "uniform":
        return np.full(grid.shape, float(p.get("delta_D", 0.0)))
    if spec.kind == "step":
        x0 = float(p.get("x0", 0.0))
        left = float(p.get("delta_D_left", 0.0))
        right = float(p.get("delta_D_right", 0.0))
        return np.where(X < x0, left, right)
    if spec.kind == "rectangular-waveguide":
        cx, cy = p.get("center", (0.0, 0.0))
        w = float(p["width"])
        length = float(p.get("length", np.inf))
        inside = (np.abs(X - cx) < w / 2) & (np.abs(Y - cy) < length / 2)
        return np.where(inside, float(p.get("delta_D_inside", 0.0)),
                        float(p.get("delta_D_outside", 0.0)))
    if "V" in p:
        return None
    arr = np.asarray(p["delta_D"], dtype=float)
    if arr.shape != grid.shape:
        raise ValidationError(f"tabulated map shape {arr.shape} != grid shape {grid.shape}")
    return arr


def eval_potential(spec, grid, medium, *, strict=False):
    """Effective potential ``V = -(1/sqrt(eps')) q pi dD / D0**2`` on ``grid``.

    A worst-case ``|V|/m`` above ``spec.guard`` emits a :class:`ParaxialWarning`
    naming the offending location, or raises :class:`ValidationError` when
    ``strict`` is set.
    """
    dD = delta_D_map(spec, grid)
    if dD is None:
        V = np.asarray(spec.params["V"], dtype=float)
        if V.shape != grid.shape:
            raise ValidationError(f"tabulated map shape {V.shape} != grid shape {grid.shape}")
        V = V.copy()
    else:
        coef = -medium.q * np.pi / (np.sqrt(medium.eps_real) * medium.D0**2)
        V = coef * dD
    if not np.all(np.isfinite(V)):
        raise ValidationError("potential contains non-finite values")
    ratio = np.abs(V) / medium.m
    worst = int(np.argmax(ratio))
    if ratio.flat[worst] > spec.guard:
        j, i = np.unravel_index(worst, grid.shape)
        w = ParaxialWarning("|V|/m", ratio.flat[worst], spec.guard,
                            (float(grid.x[i]), float(grid.y[j])))
        if strict:
            raise ValidationError(str(w), [str(w)])
        warnings.warn(w, stacklevel=2)
    V.setflags(write=False)
    return V


# -- sampled fields -----------------------------------------------------------

def _frozen_complex(values, grid):
    arr = np.array(values, dtype=complex)
    if arr.shape != grid.shape:
        if arr.size == grid.size:
            arr = arr.reshape(grid.shape)
        else:
            raise ValidationError(f"field has {arr.size} samples, grid needs {grid.size}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("field contains NaN or Inf")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ComplexScalarField:
    """Complex wavefunction sampled on a :class:`Grid2D`."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_complex(self.values, self.grid))

    @property
    def density(self):
        return np.abs(self.values) ** 2

    def norm2(self):
        """Integral of ``|psi|^2`` over the plane."""
        return float(np.sum(self.density) * self.grid.cell_area)

    def with_values(self, values):
        return ComplexScalarField(self.grid, values)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__


SQRT2 = np.sqrt(2.0)


def cartesian_to_circular(px, py):
    """``psi_pm = (psi_x -/+ i psi_y)/sqrt(2)``."""
    return (px - 1j * py) / SQRT2, (px + 1j * py) / SQRT2


def circular_to_cartesian(pp, pm):
    return (pp + pm) / SQRT2, 1j * (pp - pm) / SQRT2


@dataclass(frozen=True)
class SpinorField:
    """Two-component field; ``basis`` says whether the pair is (psi_+, psi_-)
    or (psi_x, psi_y)."""

    grid: Grid2D
    first: np.ndarray
    second: np.ndarray
    basis: str = "circular"

    def __post_init__(self):
        if self.basis not in ("circular", "cartesian"):
            raise ValidationError(f"unknown spinor basis {self.basis!r}")
        object.__setattr__(self, "first", _frozen_complex(self.first, self.grid))
        object.__setattr__(self, "second", _frozen_complex(self.second, self.grid))

    def to_circular(self):
        if self.basis == "circular":
            return self
        return SpinorField(self.grid, *cartesian_to_circular(self.first, self.second),
                           basis="circular")

    def to_cartesian(self):
        if self.basis == "cartesian":
            return self
        return SpinorField(self.grid, *circular_to_cartesian(self.first, self.second),
                           basis="cartesian")

    @property
    def plus(self):
        return self.to_circular().first

    @property
    def minus(self):
        return self.to_circular().second

    @property
    def psi_x(self):
        return self.to_cartesian().first

    @property
    def psi_y(self):
        return self.to_cartesian().second

    @property
    def density(self):
        return np.abs(self.first) ** 2 + np.abs(self.second) ** 2

    def norm2(self):
        return float(np.sum(self.density) * self.grid.cell_area)

    def components(self):
        return (ComplexScalarField(self.grid, self.first),
                ComplexScalarField(self.grid, self.second))


# -- random-phase ensemble ----------------------------------------------------

@dataclass(frozen=True)
class PulseEnsembleSpec:
    """Distribution of the pulse delay phase and sample settings.

    ``kind`` is ``'uniform'`` on [0, 2 pi), ``'point'`` (mass at ``delta0``)
    or ``'tabulated'`` (discrete ``values`` with probabilities ``weights``).
    """

    kind: str = "uniform"
    N: int = 1000
    seed: int = 0
    delta0: float = 0.0
    values: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        if self.kind not in ("uniform", "point", "tabulated"):
            raise ValidationError(f"unknown delay distribution {self.kind!r}")
        if self.N < 1:
            raise ValidationError("ensemble size N must be >= 1")
        if self.kind == "tabulated":
            w = np.asarray(self.weights, dtype=float)
            if len(w) != len(self.values) or len(w) == 0:
                raise ValidationError("tabulated distribution needs matching values/weights")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValidationError("tabulated weights must be >= 0 and sum to 1")

    def sample(self, n, rng):
        if self.kind == "uniform":
            return rng.uniform(0.0, 2 * np.pi, size=n)
        if self.kind == "point":
            return np.full(n, float(self.delta0))
        return rng.choice(np.asarray(self.values, float), size=n,
                          p=np.asarray(self.weights, float))


@dataclass(frozen=True)
class PhaseAverage:
    mean: np.ndarray
    stderr: np.ndarray
    n: int
    warning: str | None = None


def real_field(envelope, delta):
    """Real field ``E_delta = env * exp(i delta) + c.c.`` for each delay."""
    delta = np.asarray(delta, dtype=float)
    phase = np.exp(1j * delta).reshape(delta.shape + (1,) * np.ndim(envelope))
    return 2.0 * (np.asarray(envelope)[None, ...] * phase).real


def phase_average(snapshot, functional: Callable, ensemble: PulseEnsembleSpec,
                  batch: int = 4096):
    """Monte Carlo mean of a quadratic functional of the real fields.

    Parameters
    ----------
    snapshot : complex array or sequence of complex arrays
        Complex envelopes (e.g. ``E`` or ``(E, B)``).
    functional : callable
        Receives one real array per envelope, each with a leading ensemble
        axis, and returns an array with the same leading axis.
    ensemble : PulseEnsembleSpec

    Returns
    -------
    PhaseAverage
        Sample mean, its standard error and a warning string when the
        standard error cannot be estimated (``N < 2`` for a random law).
    """
    fields: Sequence = snapshot if isinstance(snapshot, (tuple, list)) else (snapshot,)
    rng = np.random.default_rng(ensemble.seed)
    if ensemble.kind == "point":
        reals = [real_field(f, [ensemble.delta0]) for f in fields]
        value = np.asarray(functional(*reals))[0]
        return PhaseAverage(value, np.zeros_like(value, dtype=float), 1)

    n_total = ensemble.N
    s1 = s2 = None
    done = 0
    while done < n_total:
        nb = min(batch, n_total - done)
        deltas = ensemble.sample(nb, rng)
        vals = np.asarray(functional(*[real_field(f, deltas) for f in fields]), dtype=float)
        part1 = vals.sum(axis=0)
        part2 = (vals**2).sum(axis=0)
        s1 = part1 if s1 is None else s1 + part1
        s2 = part2 if s2 is None else s2 + part2
        done += nb
    mean = s1 / n_total
    warning = None
    if n_total < 2:
        stderr = np.full_like(mean, np.nan)
        warning = "N < 2: standard error undefined for a random delay law"
    else:
        var = np.maximum(s2 / n_total - mean**2, 0.0) * n_total / (n_total - 1)
        stderr = np.sqrt(var / n_total)
    return PhaseAverage(mean, stderr, n_total, warning)
