"""Scenario orchestration: propagate, audit, trace, write outputs and manifest."""

from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__, kernels
from ..core import eval_potential
from ..dynamics import (ComplexPotential, PropagatorConfig, gaussian_packet, propagate,
                        propagate_iter, sponge_mask, spinor_from_stream, stationary_mode,
                        transversality_residual)
from ..kinematics import (JumpProcess, VelocityHistory, bell_jump_ensemble,
                          integrate_trajectories, velocity_history)
from ..leaky import (ImagingSetup, ReflectivityModel, SourceSpec, cavity_spectrum,
                     evanescent_velocity_si, exact_pole, fabry_perot_expansion,
                     fabry_perot_mode, image_field, loss_rate_from_mirror, pole_field_1d,
                     pole_parameters)
from ..maxwell import (ZGrid, _fields_at, _in_plane, berry_decompose, conservation_audit,
                       equivalence_audit, mode_wavenumber, xz_section, z_averaged_flow)
from .plot import emit_plot


@dataclass
class RunManifest:
    name: str
    config_hash: str
    tool_version: str
    backend: str
    seed: int
    wall_time_s: float
    warnings: list = field(default_factory=list)
    files: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


class _Out:
    """Output directory that records every file it writes."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name):
        self.files.append(name)
        return self.root / name

    def json(self, name, obj):
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n")

    def csv(self, name, header, columns):
        cols = [np.asarray(c) for c in columns]
        with open(self.path(name), "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in zip(*cols):
                w.writerow([_fmt(v) for v in row])

    def plot(self, name, data, kind):
        emit_plot(data, kind, self.path(name))


def _fmt(v):
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def _cplx(z):
    z = complex(z)
    return {"re": z.real, "im": z.imag}


def build_state(cfg, grid, medium, V):
    """Initial field from the ``initial_state`` block: ``(kind, field)``."""
    st = cfg.data["initial_state"]
    kind = st["kind"]
    if kind == "stationary":
        params = dict(st.get("params", {}))
        if st["mode"] == "waveguide-step" and "V0" not in params:
            x0 = float(params.get("x0", 0.0))
            _, i = grid.index_of(x0 + grid.Lx / 4, 0.0)
            j, _ = grid.index_of(0.0, 0.0)
            params["V0"] = float(V[j, i])
        return "scalar", stationary_mode(st["mode"], params, grid, medium)
    if kind == "gaussian":
        return "scalar", gaussian_packet(grid, st.get("x0", 0.0), st.get("y0", 0.0),
                                         st.get("sigma_x", 1.0), st.get("sigma_y", st.get("sigma_x", 1.0)),
                                         st.get("kx", 0.0), st.get("ky", 0.0))
    s = st.get("sigma", 1.0)
    return "stream", gaussian_packet(grid, st.get("x0", 0.0), st.get("y0", 0.0), s, s,
                                     st.get("kx", 0.0), st.get("ky", 0.0))


def _field_for_audit(kind, f):
    return spinor_from_stream(f).spinor if kind == "stream" else f


def run_scenario(cfg, out_dir=None, seed=None):
    """Run every enabled stage of a scenario and write its outputs.

    Returns the :class:`RunManifest`, which is also written as
    ``manifest.json`` next to the data files.
    """
    t_wall = time.perf_counter()
    d = cfg.data
    seed = int(d["run"]["seed"] if seed is None else seed)
    out = _Out(out_dir if out_dir is not None else d["output"]["dir"])
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        _pipeline(cfg, out, seed)
    msgs = sorted({str(w.message) for w in rec})
    out.files.append("manifest.json")
    man = RunManifest(cfg.name, cfg.digest(), __version__, kernels.BACKEND, seed,
                      round(time.perf_counter() - t_wall, 3), msgs, sorted(set(out.files)))
    with open(out.root / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(man.to_json())
    return man


def _pipeline(cfg, out, seed):
    d = cfg.data
    medium = cfg.medium()
    grid = cfg.grid()
    pspec = cfg.potential_spec()
    V = eval_potential(pspec, grid, medium, strict=d["potential"]["strict"])
    method = d["grid"].get("derivative") or grid.default_derivative()
    kind, psi0 = build_state(cfg, grid, medium, V)

    run = d["run"]
    pcfg = PropagatorConfig(run["dt"], run["scheme"], run["boundary"], run["sponge_width"],
                            run["sponge_strength"])
    pot = ComplexPotential.from_medium(V, medium)
    n_steps = int(round(run["t_end"] / run["dt"]))
    snaps = [(0.0, psi0)]
    if n_steps > 0:
        snaps = [(n * run["dt"], psi0.with_values(v))
                 for n, v in propagate_iter(psi0, pot, medium, pcfg, n_steps, run["stride"])]
    t_final, final = snaps[-1]
    audit_mask = sponge_mask(grid, pcfg)

    X, Y = grid.mesh()
    out.csv("fields.csv", ["x", "y", "re", "im"],
            [X.ravel(), Y.ravel(), final.values.real.ravel(), final.values.imag.ravel()])
    if kind == "stream":
        pair = spinor_from_stream(final)
        for name, comp in (("fields_plus.csv", pair.spinor.first),
                           ("fields_minus.csv", pair.spinor.second)):
            out.csv(name, ["x", "y", "re", "im"],
                    [X.ravel(), Y.ravel(), comp.real.ravel(), comp.imag.ravel()])
        res = []
        for t, f in snaps:
            p = spinor_from_stream(f)
            r = transversality_residual(p.psi_x, p.psi_y, grid, "spectral")
            res.append({"t": t, "linf": r.linf, "l2": r.l2, "relative": r.relative})
        out.json("transversality.json", {"snapshots": res})
    out.plot("intensity.svg", {"x": grid.x, "y": grid.y, "values": final.density,
                               "xlabel": "x", "ylabel": "y", "clabel": "|psi|^2",
                               "title": f"{cfg.name}: |psi|^2 at t={t_final:g}"}, "heatmap")

    audits = d["audits"]
    zgrid = ZGrid(int(audits["nz_per_order"]) * medium.q, medium.D0)
    e_hat = tuple(audits["e_hat"])
    audit_field = _field_for_audit(kind, final)
    if audits["equivalence"]:
        rep = equivalence_audit(audit_field, medium, zgrid, V, e_hat, method,
                                audit_mask=audit_mask)
        summary = rep.summary()
        summary["t"] = t_final
        out.json("equivalence.json", summary)
        rows = rep.rows()
        out.csv("equivalence.csv", ["x", "y", "dev_planar", "v_z"], rows.T)
    if audits["conservation"]:
        _conservation(out, snaps, pot, medium, pcfg, method, audit_mask)
    if audits["berry"]:
        _berry(out, audit_field, V, medium, zgrid, e_hat, grid)
    if audits["bell_jumps"]:
        _bell(out, d.get("bell") or {}, medium, seed, snaps)
    if d.get("trajectories"):
        _trajectories(out, d["trajectories"], snaps, kind, medium, method, grid, final)
    if d.get("fig1"):
        _fig1(out, d["fig1"], final, V, medium, zgrid, e_hat, method, grid, d)
    if d.get("leaky"):
        _imaging(out, d["leaky"], medium)
    if d.get("si"):
        si = d["si"]
        r = evanescent_velocity_si(si["lifetime_s"], si["detuning_eV"], si["wavelength_m"])
        out.json("evanescent.json", {"velocity_m_per_s": r.velocity, "Gamma_per_m": r.Gamma,
                                     "m_per_m": r.m, "Delta_per_m": r.Delta,
                                     "assumed_wavelength_m": si["wavelength_m"]})


def _conservation(out, snaps, pot, medium, pcfg, method, mask):
    rows = []
    for t, f in snaps:
        nxt = propagate(f, pot, medium, pcfg, 1)
        rep = conservation_audit(f, nxt, pcfg.dt, medium, method, mask)
        rows.append({"t": t, "l2": rep.l2, "linf": rep.linf, "norm_ratio": rep.norm_ratio,
                     "expected_ratio": rep.expected_ratio,
                     "norm_ratio_error": rep.norm_ratio_error})
    n0 = snaps[0][1].norm2()
    decay = [{"t": t, "norm": f.norm2() / n0,
              "expected": float(np.exp(-medium.total_loss_rate * t))} for t, f in snaps]
    out.json("conservation.json", {"pairs": rows, "norm_history": decay})


def _berry(out, field_, V, medium, zgrid, e_hat, grid):
    # first antinode of the bare mode profile, where E is largest
    z = 0.5 * zgrid.D0 / medium.q
    ip = _in_plane(field_, grid, V, e_hat, None, False)
    K = np.broadcast_to(mode_wavenumber(V, medium), grid.shape)
    E, _ = _fields_at(ip, K, np.array([z]), medium, False)
    c = np.cos(K * z)
    dEdz = np.stack([ip.Ax * K * c, ip.Ay * K * c, np.zeros(grid.shape, complex)])
    meth = "spectral" if grid.periodic else "central"
    parts = berry_decompose(E[:, 0], grid, medium, meth, dEdz)
    out.json("berry.json", {
        "z": z, "method": meth, "identity_residual": parts.residual(),
        "spin_norm": float(np.sqrt(np.sum(parts.spin**2))),
        "orbital_norm": float(np.sqrt(np.sum(parts.orbital**2))),
        "divergence_term_norm": float(np.sqrt(np.sum(parts.divergence_term**2))),
    })


def _bell(out, b, medium, seed, snaps):
    rate = medium.total_loss_rate
    t_end = float(b.get("t_end", snaps[-1][0] or 1.0 / max(rate, 1e-300)))
    dt = float(b.get("dt", t_end / 100))
    N = int(b.get("N", 10000))
    ens = bell_jump_ensemble(None, JumpProcess(rate, seed), N, 0.0, t_end, dt)
    analytic = ens.analytic(rate)
    out.csv("survival.csv", ["t", "fraction", "ci_lo", "ci_hi"],
            [ens.times, ens.survival, ens.ci_lo, ens.ci_hi])
    n0 = snaps[0][1].norm2()
    norms = [(t, f.norm2() / n0) for t, f in snaps]
    surv_at = [float(np.interp(t, ens.times, ens.survival)) for t, _ in norms]
    sigma = np.sqrt(np.clip(np.array([n for _, n in norms]) *
                            (1 - np.array([n for _, n in norms])), 0, None) / N)
    out.json("bell.json", {
        "N": N, "rate": rate, "t_end": t_end, "dt": dt, "seed": seed,
        "final_survival": float(ens.survival[-1]), "analytic_final": float(analytic[-1]),
        "sigma_final": float(np.sqrt(analytic[-1] * (1 - analytic[-1]) / N)),
        "norm_vs_survival": [{"t": t, "norm": n, "survival": s, "sigma": float(sg)}
                             for (t, n), s, sg in zip(norms, surv_at, sigma)],
    })
    out.plot("survival.svg", {"t": ens.times, "fraction": ens.survival, "ci_lo": ens.ci_lo,
                              "ci_hi": ens.ci_hi, "analytic": analytic, "xlabel": "t",
                              "ylabel": "surviving fraction", "title": "loss-jump survival"},
             "survival")


def _trajectories(out, tr, snaps, kind, medium, method, grid, final):
    if kind == "stream":
        from ..kinematics import pauli_velocity
        fields = [pauli_velocity(spinor_from_stream(f).spinor, medium, method).total
                  for _, f in snaps]
        hist = VelocityHistory.from_fields([t for t, _ in snaps], fields)
    else:
        hist = velocity_history(snaps, medium, method)
    t_end = float(tr.get("t_end", snaps[-1][0]))
    dt = float(tr.get("dt", 1.0))
    if len(snaps) > 1:
        t_end = min(t_end, snaps[-1][0])
    paths = integrate_trajectories(hist, tr["seeds"], 0.0, t_end, dt)
    curves = []
    for i, p in enumerate(paths):
        out.csv(f"trajectory_{i:03d}.csv", ["t", "x", "y", "status"],
                [p.t, p.x, p.y, p.status_column()])
        curves.append(np.column_stack([p.x, p.y]))
    out.plot("trajectories.svg", {"x": grid.x, "y": grid.y, "values": final.density,
                                  "white": curves, "xlabel": "x", "ylabel": "y",
                                  "title": "Bohmian paths"}, "streamlines")


def _fit_slope(x, y):
    A = np.column_stack([x, np.ones_like(x)])
    return float(np.linalg.lstsq(A, y, rcond=None)[0][0])


def _fig1(out, f1, final, V, medium, zgrid, e_hat, method, grid, d):
    row = grid.index_of(grid.x[0], 0.0)[0]
    avg = z_averaged_flow(final, V, medium, zgrid, e_hat, method)
    xs = grid.x
    D0 = medium.D0
    # white: z-averaged paths in the x-z plane
    vxr = avg.vx[row]
    vzr = avg.vz[row]
    lat_x = np.stack([vxr, vxr])[None]
    lat_z = np.stack([vzr, vzr])[None]
    mask = np.ones((2, xs.size), dtype=bool)
    dt = float(f1.get("dt", 4.0))
    z0 = float(f1.get("z_start", 1.0))
    nsteps = int(np.ceil(D0 / (max(np.max(vzr), 1e-300) * dt))) + 1
    starts = np.array([[x, z0] for x in f1.get("white_seeds", [])]).reshape(-1, 2)
    white = []
    rows = []
    slopes = []
    if len(starts):
        wx, wz, nv, _ = kernels.rk4_trace(lat_x, lat_z, mask, np.array([0.0]), xs[0], 0.0,
                                          grid.dx, D0, starts, 0.0, dt, nsteps, 10 * grid.dx)
        for p in range(len(starts)):
            n = int(nv[p])
            cx, cz = wx[p, :n], wz[p, :n]
            white.append(np.column_stack([cx, cz]))
            if n >= 2:
                slopes.append(_fit_slope(cx, cz))
            for k in range(n):
                rows.append((p, k * dt, cx[k], cz[k], "white"))
    # red: local S/u in the x-z plane
    nzp = int(f1.get("nz_plot", 400))
    zp = np.linspace(0.0, D0, nzp)
    vx_l, vz_l, _ = xz_section(final, V, medium, zp, row, e_hat, method)
    red = []
    rs = np.asarray(f1.get("red_seeds", []), dtype=float).reshape(-1, 2)
    if len(rs):
        m2 = np.ones(vx_l.shape, dtype=bool)
        vmax = max(float(np.max(np.hypot(vx_l, vz_l))), 1e-300)
        hz = zp[1] - zp[0]
        dtr = 0.5 * min(grid.dx, hz) / vmax
        nred = int(min(20000, np.ceil(2 * (grid.Lx + D0) / (vmax * dtr))))
        rx, rz, nv, _ = kernels.rk4_trace(vx_l[None], vz_l[None], m2, np.array([0.0]),
                                          xs[0], 0.0, grid.dx, hz, rs, 0.0, dtr, nred,
                                          10 * min(grid.dx, hz))
        for p in range(len(rs)):
            n = int(nv[p])
            red.append(np.column_stack([rx[p, :n], rz[p, :n]]))
            for k in range(0, n, max(1, n // 200)):
                rows.append((len(starts) + p, k * dtr, rx[p, k], rz[p, k], "red"))
    K = mode_wavenumber(V[row] if np.ndim(V) else V, medium)
    heat = np.abs(final.values[row]) ** 2 * np.abs(np.sin(np.multiply.outer(zp, K))) ** 2
    out.csv("fig1_paths.csv", ["path", "t", "x", "z", "color"], list(zip(*rows)) if rows
            else [[], [], [], [], []])
    dens = np.abs(final.values[row]) ** 2
    decay = -_fit_slope(xs, np.log(dens))
    summary = {"row_y": float(grid.y[row]), "white_slopes": slopes,
               "white_slope_mean": float(np.mean(slopes)) if slopes else None,
               "decay_rate_measured": decay, "vz_mean": float(np.mean(vzr)),
               "vx_mean": float(np.mean(vxr))}
    st = d["initial_state"]
    if st["kind"] == "stationary" and st["mode"] == "leaky-plane-wave":
        pp = pole_parameters(float(st["params"]["E"]), medium)
        summary["slope_expected"] = (0.5 * medium.Gamma * D0) / (pp.kx.real / medium.kinetic_mass)
        summary["decay_rate_expected"] = 2 * pp.kx.imag
    out.json("fig1.json", summary)
    out.plot("fig1.svg", {"x": xs, "y": zp, "values": heat, "white": white, "red": red,
                          "xlim": (xs[0], xs[-1]), "ylim": (0.0, D0), "xlabel": "x",
                          "ylabel": "z", "clabel": "|psi(x)|^2 |f(z)|^2",
                          "title": "energy flow in the x-z plane"}, "streamlines")


def _imaging(out, lk, medium):
    eps = float(lk.get("eps_real", medium.eps_real))
    q = int(lk.get("q", medium.q))
    D = float(lk.get("D", q * np.pi / (np.sqrt(eps) * medium.m)))
    eta = float(lk["eta"])
    model = ReflectivityModel.from_loss(eta)
    G = loss_rate_from_mirror(model, D, eps)
    med = medium.replace(eps_real=eps, q=q, D0=D, Gamma=G)
    E = float(lk.get("E", 0.01 * med.m))
    pe = exact_pole(E, med, model)
    pa = pole_parameters(E, med)
    src = SourceSpec(float(lk.get("I0", 1.0)), float(lk.get("d", 0.01 * D)), pe.omega)
    src.check(D)
    half = float(lk.get("x_extent", 2 * 1.1 * np.log(1e7) / pe.kx.imag)) / 2
    dx = min(np.pi / (4 * pe.omega * np.sqrt(eps)), 0.25 * 2 * np.pi / pe.kx.real) * 2
    x = np.arange(-half, half + dx / 2, dx)
    psi = pole_field_1d(pe, src, model, x)
    setup = ImagingSetup(float(lk.get("NA", 0.5)), float(lk.get("M", 10.0)), 1.0, eps)
    nimg = int(lk.get("n_image", 801))
    xp = np.linspace(-0.25 * half * setup.M, 0.25 * half * setup.M, nimg)
    img = image_field(psi, x, setup, pe.omega, xp)
    out.csv("pole_field.csv", ["x", "re", "im"], [x, psi.real, psi.imag])
    out.csv("image.csv", ["x", "re", "im"], [xp, img.spectral.real, img.spectral.imag])
    out.csv("image_convolution.csv", ["x", "re", "im"],
            [xp, img.convolution.real, img.convolution.imag])
    k = np.linspace(pe.kx.real - 30 * pe.kx.imag, pe.kx.real + 30 * pe.kx.imag, 6001)
    power = np.abs(cavity_spectrum(k, src, model, D, eps)) ** 2
    above = k[power >= 0.5 * power.max()]
    hwhm = float(above[-1] - above[0]) / 2
    out.csv("spectrum.csv", ["kx", "power"], [k, power])
    kz_exact = fabry_perot_mode(model, D, q)
    out.json("imaging.json", {
        "eta": eta, "D": D, "q": q, "E": E, "Gamma_from_mirror": G,
        "kx_exact": _cplx(pe.kx), "kz_exact": _cplx(pe.kz),
        "kx_asymptotic": _cplx(pa.kx), "kz_asymptotic": _cplx(pa.kz),
        "kz_expansion": _cplx(fabry_perot_expansion(eta, D, q)), "kz_closed_form": _cplx(kz_exact),
        "routes_rel_l2": img.rel_l2, "resonance_hwhm": hwhm,
        "resonance_hwhm_over_im_kx": hwhm / pe.kx.imag,
    })
    norm = max(np.max(np.abs(img.spectral) ** 2), 1e-300)
    out.plot("image.svg", {"x": xp, "series": {
        "spectral route": np.abs(img.spectral) ** 2 / norm,
        "PSF convolution": np.abs(img.convolution) ** 2 / norm},
        "xlabel": "x'", "ylabel": "|image|^2 (normalised)", "title": "microscope image"}, "line")
    out.plot("spectrum.svg", {"x": k, "series": {"|psi_c(kx)|^2": power / power.max()},
                              "xlabel": "kx", "ylabel": "normalised power",
                              "title": "cavity resonance"}, "line")
