import numpy as np
import pytest
from oracles import fp_log_kz

from bohmcavity.core import CavityMedium
from bohmcavity.dynamics import leaky_wavevector
from bohmcavity.errors import ValidationError
from bohmcavity.leaky import (ImagingSetup, LeakyModeParams, ReflectivityModel, SourceSpec,
                              cavity_spectrum, evanescent_velocity, evanescent_velocity_si,
                              exact_pole, fabry_perot_expansion, fabry_perot_mode, image_field,
                              leaky_field, loss_rate_from_mirror, pole_field_1d,
                              pole_parameters, psf, sdp_farfield)

# CODATA values typed in by hand, independent of scipy.constants
C = 299792458.0
HBAR = 1.054571817e-34
QE = 1.602176634e-19


def mirror_setup(eta, q=20, E=None):
    model = ReflectivityModel.from_loss(eta)
    D = q * np.pi
    G = loss_rate_from_mirror(model, D)
    med = CavityMedium.build(1.0, q=q, D0=D, Gamma=G)
    E = 20 * G if E is None else E
    return model, med, E


def resonance_hwhm(k, power):
    above = k[power >= 0.5 * power.max()]
    return (above[-1] - above[0]) / 2


# -- Fabry-Perot ---------------------------------------------------------------------

@pytest.mark.parametrize("q", [1, 3, 46])
def test_fp_closed_form_matches_log_oracle(q):
    for eta in (1e-3, 1e-2, 5e-2):
        kz = fabry_perot_mode(ReflectivityModel.from_loss(eta), 1.0, q)
        assert kz == pytest.approx(fp_log_kz(eta, 1.0, q), rel=1e-14)


def test_fp_example_value():
    kz = fabry_perot_mode(ReflectivityModel.from_loss(0.01), 1.0, 2)
    assert kz.real == pytest.approx(2 * np.pi, rel=1e-15)
    assert kz.imag == pytest.approx(-0.00502517, rel=1e-6)


def test_fp_expansion_is_second_order():
    for eta in (1e-3, 1e-2, 5e-2):
        for D in (1.0, 7.5):
            exact = fabry_perot_mode(ReflectivityModel.from_loss(eta), D, 4)
            diff = abs(exact - fabry_perot_expansion(eta, D, 4))
            assert diff <= eta**2 / D
            assert diff >= 0.2 * eta**2 / D


def test_perfect_mirror_is_real():
    kz = fabry_perot_mode(ReflectivityModel(1.0, np.pi), 2.0, 3)
    assert kz == 3 * np.pi / 2.0


def test_mirror_loss_rate():
    for eta in (1e-4, 1e-3):
        G = loss_rate_from_mirror(ReflectivityModel.from_loss(eta), 3.0, 2.0)
        assert G == pytest.approx(eta / (np.sqrt(2.0) * 3.0), rel=eta)


def test_reflectivity_validation():
    with pytest.raises(ValidationError):
        ReflectivityModel(1.2)
    with pytest.raises(ValidationError):
        fabry_perot_mode(ReflectivityModel(0.0), 1.0, 1)
    assert ReflectivityModel.from_loss(0.19).t == pytest.approx(np.sqrt(1 - 0.81**2))


def test_newton_hook():
    const = ReflectivityModel(0.9, np.pi, func=lambda w, kx: -0.9 + 0 * kx)
    closed = fabry_perot_mode(ReflectivityModel(0.9, np.pi), 2.0, 3)
    assert fabry_perot_mode(const, 2.0, 3, omega=5.0) == pytest.approx(closed, rel=1e-12)
    # weak angular dependence: the refined root still solves the resonance condition
    disp = ReflectivityModel(0.9, np.pi, func=lambda w, kx: -0.9 * (1 - 0.01 * kx**2 / w**2))
    kz = fabry_perot_mode(disp, 2.0, 3, omega=5.0)
    kx = np.sqrt(25.0 - kz**2 + 0j)
    assert abs(1 + disp.func(5.0, kx) * np.exp(4j * kz)) < 1e-10
    with pytest.raises(ValidationError):
        fabry_perot_mode(disp, 2.0, 3)


# -- pole parameters --------------------------------------------------------------------

def test_fig1_pole():
    med = CavityMedium.build(1.0, m=1.0, q=46, Gamma=1e-3)
    p = pole_parameters(1e-4, med)
    assert p.xi == pytest.approx(0.0141421 + 0.0353553j, abs=1e-7)
    assert p.kx == pytest.approx(0.0141421 + 0.0353553j, abs=1e-7)
    assert p.kx == pytest.approx(leaky_wavevector(1e-4, med), rel=1e-14)
    assert p.leaky


def test_lossless_pole_is_real():
    p = pole_parameters(1e-3, CavityMedium.build(1.0, m=1.0, q=2))
    assert p.xi.imag == 0 and p.kx.imag == 0 and p.kz.imag == 0
    assert not p.leaky


def test_pole_kz_and_consistency():
    med = CavityMedium.build(2.0, m=1.5, q=3, Gamma=1e-4)
    for E in (1e-4, 1e-3):
        p = pole_parameters(E, med)
        target = np.sqrt(2.0) * (1.5 - 0.5e-4j)
        assert abs(p.kz - target) / abs(target) <= 2 * E / med.m
        ex, ez = p.consistency()
        assert ex <= 5 * E / med.m and ez <= 5 * E / med.m


def test_pole_errors_and_signs():
    med = CavityMedium.build(1.0, m=1.0, q=1, Gamma=1e-3)
    with pytest.raises(ValidationError):
        pole_parameters(0.0, med)
    with pytest.raises(ValidationError):
        LeakyModeParams(0.1 + 0j, 0.1 - 0.01j, 1 - 0.01j, 1j, 1.0, 1.0)
    with pytest.raises(ValidationError):
        LeakyModeParams(0.1 + 0j, 0.1 + 0.01j, 1 + 0.01j, 1j, 1.0, 1.0)


@pytest.mark.parametrize("eta", [1e-3, 1e-2, 5e-2])
def test_exact_and_asymptotic_poles_agree(eta):
    model, med, E = mirror_setup(eta, E=None)
    pe, pa = exact_pole(E, med, model), pole_parameters(E, med)
    assert pe.leaky and pa.leaky
    small = eta**2 / med.D0 + E / med.m
    assert abs(pe.kz - pa.kz) / abs(pa.kz) <= small
    # the asymptotic kx is first order in Gamma/E, which is 1/20 here
    assert abs(pe.kx - pa.kx) / abs(pa.kx) <= 0.05**2 + 5 * E / med.m


# -- pole field ------------------------------------------------------------------------------

@pytest.fixture
def leaky_setup():
    model, med, E = mirror_setup(1e-2, q=10)
    p = exact_pole(E, med, model)
    src = SourceSpec(1.0, 0.01 * med.D0, p.omega)
    return model, med, p, src


def test_on_axis_is_invalid(leaky_setup):
    model, med, p, src = leaky_setup
    f = leaky_field(p, src, model, 0.0, 0.5 * med.D0)
    assert f.invalid and f.value == 0


def test_pole_field_decays_along_x(leaky_setup):
    model, med, p, src = leaky_setup
    z = 0.4 * med.D0
    x1 = 40 * med.D0
    a = leaky_field(p, src, model, x1, z).value
    b = leaky_field(p, src, model, 2 * x1, z).value
    assert abs(b) / abs(a) == pytest.approx(np.exp(-p.kx.imag * x1), rel=1e-12)
    assert abs(leaky_field(p, src, model, -x1, z).value) == pytest.approx(abs(a))


def test_pole_field_vanishes_along_rays(leaky_setup):
    model, med, p, src = leaky_setup
    phi = p.xi.real * 1.05
    rho = med.D0 * np.array([2.0, 1e2, 1e4, 1e5]) / np.cos(phi)
    f = leaky_field(p, src, model, rho * np.sin(phi), rho * np.cos(phi))
    assert not np.any(f.invalid)
    mag = np.abs(f.value)
    assert np.all(np.diff(mag) < 0) and mag[-1] < 1e-3 * mag[0]


def test_pole_field_gates_and_guards(leaky_setup):
    model, med, p, src = leaky_setup
    # below the mirror midplane the image angle is the smaller one, so just
    # inside the critical angle both gates are closed and just outside one opens
    z = 0.25 * med.D0
    x = z * np.tan(p.xi.real)
    inside = leaky_field(p, src, model, x * (1 - 1e-9), z)
    outside = leaky_field(p, src, model, x * (1 + 1e-9), z)
    assert inside.invalid and inside.value == 0
    assert not outside.invalid and outside.value != 0
    with pytest.raises(ValidationError):
        leaky_field(p, src, model, 10.0, 0.5 * src.d)
    with pytest.raises(ValidationError):
        leaky_field(p, SourceSpec(1.0, 0.2 * med.D0, p.omega), model, 10.0, 1.0)


def test_pole_field_1d_is_transmitted_trace(leaky_setup):
    model, med, p, src = leaky_setup
    x = np.linspace(5, 50, 10) * med.D0
    out = leaky_field(p, src, model, x, np.full(x.shape, med.D0 + 1e-9)).value
    # just beyond the mirror only the transmitted wave remains
    assert np.allclose(out, pole_field_1d(p, src, model, x) * np.exp(1j * p.kz * med.D0),
                       rtol=1e-6)


# -- far field ------------------------------------------------------------------------------------

def test_sdp_spreading(leaky_setup):
    model, med, p, src = leaky_setup
    phi = 0.3
    r = np.array([50.0, 200.0]) * med.D0
    f = sdp_farfield(src, model, med.D0, r * np.sin(phi), r * np.cos(phi))
    assert abs(f[1]) / abs(f[0]) == pytest.approx(0.5, rel=1e-12)


def test_sdp_guard(leaky_setup):
    model, med, p, src = leaky_setup
    with pytest.raises(ValidationError):
        sdp_farfield(src, model, med.D0, 0.5, 0.5)


def test_sdp_resonance_angle(leaky_setup):
    model, med, p, src = leaky_setup
    phi = np.linspace(0.2, 3.0, 4001) * p.xi.real
    r = 500 * med.D0
    f = sdp_farfield(src, model, med.D0, r * np.sin(phi), r * np.cos(phi))
    assert phi[np.argmax(np.abs(f))] == pytest.approx(p.xi.real, rel=0.05)


def test_sdp_vanishes_for_closed_cavity():
    amps = []
    for eta in (1e-2, 1e-4, 1e-6, 0.0):
        model, med, E = mirror_setup(max(eta, 1e-2), q=10)
        closed = ReflectivityModel.from_loss(eta)
        src = SourceSpec(1.0, 0.01 * med.D0, med.m + E)
        r = 300 * med.D0
        # off resonance, so the closed-cavity denominator stays finite
        amps.append(abs(sdp_farfield(src, closed, med.D0, r * np.sin(0.5), r * np.cos(0.5))))
    assert amps[-1] == 0 and np.all(np.diff(amps) < 0)


def test_cavity_spectrum_resonance_width():
    for eta in (1e-2, 1e-3):
        model, med, E = mirror_setup(eta, q=10, E=None)
        p = exact_pole(E, med, model)
        src = SourceSpec(1.0, 0.01 * med.D0, p.omega)
        k = np.linspace(p.kx.real - 30 * p.kx.imag, p.kx.real + 30 * p.kx.imag, 20001)
        power = np.abs(cavity_spectrum(k, src, model, med.D0)) ** 2
        assert resonance_hwhm(k, power) == pytest.approx(p.kx.imag, rel=0.1)
        assert k[np.argmax(power)] == pytest.approx(p.kx.real, rel=0.01)


# -- imaging ------------------------------------------------------------------------------------

def test_psf_limit():
    assert psf(0.0, 2.5) == pytest.approx(2.5 / np.pi)
    assert psf(1e-9, 2.5) == pytest.approx(2.5 / np.pi, rel=1e-12)


def test_imaging_setup_checks():
    with pytest.raises(ValidationError):
        ImagingSetup(1.2)
    with pytest.raises(ValidationError):
        ImagingSetup(0.5, M=0)
    with pytest.warns(UserWarning):
        ImagingSetup(1.0)


def _random_input(rng, n=2049, half=60.0):
    x = np.linspace(-half, half, n)
    psi = np.zeros(n, complex)
    for _ in range(4):
        c, w, k = rng.uniform(-15, 15), rng.uniform(1.5, 4), rng.uniform(-1.5, 1.5)
        psi += (rng.normal() + 1j * rng.normal()) * np.exp(-((x - c) / w) ** 2 + 1j * k * x)
    return x, psi


@pytest.mark.parametrize("backend", ["python", "cython"])
def test_imaging_routes_agree(backend):
    rng = np.random.default_rng(21)
    for _ in range(10):
        x, psi = _random_input(rng)
        setup = ImagingSetup(rng.uniform(0.2, 0.9), rng.uniform(1, 8))
        xp = np.linspace(-20, 20, 201) * setup.M
        img = image_field(psi, x, setup, rng.uniform(0.8, 2.0), xp, backend=backend)
        assert img.rel_l2 <= 1e-6


def test_band_limited_cusp():
    k0, kap = 0.3, 0.05
    x = np.linspace(-400, 400, 16001)
    psi = np.exp(1j * (k0 + 1j * kap) * np.abs(x))
    setup = ImagingSetup(0.5)
    xp = np.linspace(-30, 30, 121)
    img = image_field(psi, x, setup, 1.0, xp)
    assert img.rel_l2 <= 1e-6
    # the image contains no spatial frequency above omega NA
    spec = np.fft.fft(image_field(psi, x, setup, 1.0, np.linspace(-200, 200, 4000,
                                                                   endpoint=False)).spectral)
    k = 2 * np.pi * np.fft.fftfreq(4000, 0.1)
    out_band = np.abs(k) > 0.6
    assert np.max(np.abs(spec[out_band])) < 1e-2 * np.max(np.abs(spec))


def test_magnification_moves_features():
    x = np.linspace(-50, 50, 4001)
    a = 6.0
    psi = np.exp(-((x - a) / 0.8) ** 2) + np.exp(-((x + a) / 0.8) ** 2)
    for M in (1.0, 3.0):
        setup = ImagingSetup(0.9, M)
        xp = np.linspace(0, 2 * a * M, 2001)
        img = np.abs(image_field(psi, x, setup, 3.0, xp).spectral)
        assert xp[np.argmax(img)] == pytest.approx(a * M, rel=1e-2)


def test_imaging_edge_check():
    x = np.linspace(-5, 5, 101)
    with pytest.raises(ValidationError):
        image_field(np.ones(101, complex), x, ImagingSetup(0.5), 1.0, x)


# -- evanescent velocity ---------------------------------------------------------------------------

def test_evanescent_velocity_examples():
    assert evanescent_velocity(0.0, 1.0, -0.1) == 0
    v1 = evanescent_velocity(1e-3, 1.0, -0.1)
    assert evanescent_velocity(1e-3, 1.0, -0.2) == pytest.approx(v1 / np.sqrt(2))
    with pytest.raises(ValidationError):
        evanescent_velocity(1e-3, 1.0, 0.0)
    with pytest.raises(ValidationError):
        evanescent_velocity(-1e-3, 1.0, -0.1)


def test_evanescent_velocity_si():
    lam = 600e-9
    res = evanescent_velocity_si(270e-12, -0.04e-3, lam)
    G = 1 / (C * 270e-12)
    d = 0.04e-3 * QE / (HBAR * C)
    m = 2 * np.pi / lam
    expected = G / (2 * np.sqrt(2 * m * d)) * C
    assert res.velocity == pytest.approx(expected, rel=1e-9)
    assert res.velocity == pytest.approx(30e3, rel=0.2)
