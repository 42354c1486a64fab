"""Pure numpy versions of the compiled kernels (same signatures and results)."""

import numpy as np

OK, LEFT, EXPLODED = 0, 1, 2


def _sample(vx, vy, mask, times, xmin, ymin, dx, dy, t, x, y):
    """Vectorised bilinear/linear-in-time sampling; returns (vx, vy, ok)."""
    nt, ny, nx = vx.shape
    fx = (x - xmin) / dx
    fy = (y - ymin) / dy
    ok = (fx >= 0) & (fy >= 0) & (fx <= nx - 1) & (fy <= ny - 1)
    if nx < 2 or ny < 2:
        ok &= False
    i = np.clip(np.floor(np.where(ok, fx, 0)).astype(np.int64), 0, max(nx - 2, 0))
    j = np.clip(np.floor(np.where(ok, fy, 0)).astype(np.int64), 0, max(ny - 2, 0))
    ok &= mask[j, i] & mask[j, i + 1] & mask[j + 1, i] & mask[j + 1, i + 1]
    ax = np.where(ok, fx - i, 0.0)
    ay = np.where(ok, fy - j, 0.0)
    w00 = (1 - ax) * (1 - ay)
    w01 = ax * (1 - ay)
    w10 = (1 - ax) * ay
    w11 = ax * ay
    if nt > 1:
        if t <= times[0]:
            k, at = 0, 0.0
        elif t >= times[-1]:
            k, at = nt - 2, 1.0
        else:
            k = int(np.searchsorted(times, t, side="right")) - 1
            k = min(k, nt - 2)
            at = (t - times[k]) / (times[k + 1] - times[k])
    else:
        k, at = 0, 0.0

    def interp(f, kk):
        return (w00 * f[kk, j, i] + w01 * f[kk, j, i + 1] + w10 * f[kk, j + 1, i]
                + w11 * f[kk, j + 1, i + 1])

    a = interp(vx, k)
    b = interp(vy, k)
    if nt > 1 and at > 0.0:
        a = (1 - at) * a + at * interp(vx, k + 1)
        b = (1 - at) * b + at * interp(vy, k + 1)
    return a, b, ok


def rk4_trace(vx, vy, mask, times, xmin, ymin, dx, dy, starts, t0, dt, nsteps, max_step):
    vx = np.ascontiguousarray(vx, dtype=float)
    vy = np.ascontiguousarray(vy, dtype=float)
    mask = np.ascontiguousarray(mask, dtype=bool)
    times = np.ascontiguousarray(times, dtype=float)
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    n = starts.shape[0]
    xs = np.full((n, nsteps + 1), np.nan)
    ys = np.full((n, nsteps + 1), np.nan)
    nvalid = np.zeros(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int64)
    x = starts[:, 0].copy()
    y = starts[:, 1].copy()
    _, _, ok = _sample(vx, vy, mask, times, xmin, ymin, dx, dy, t0, x, y)
    active = ok.copy()
    status[~ok] = LEFT
    xs[active, 0] = x[active]
    ys[active, 0] = y[active]
    nvalid[active] = 1
    for s in range(nsteps):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        px, py = x[idx], y[idx]
        t = t0 + s * dt
        k1x, k1y, ok1 = _sample(vx, vy, mask, times, xmin, ymin, dx, dy, t, px, py)
        # an Euler-sized first stage already too long counts as an explosion
        early = ok1 & (dt * np.sqrt(k1x**2 + k1y**2) > max_step)
        if early.any():
            status[idx[early]] = EXPLODED
            active[idx[early]] = False
            keep = ~early
            idx, px, py = idx[keep], px[keep], py[keep]
            k1x, k1y, ok1 = k1x[keep], k1y[keep], ok1[keep]
        k2x, k2y, ok2 = _sample(vx, vy, mask, times, xmin, ymin, dx, dy, t + 0.5 * dt,
                                px + 0.5 * dt * k1x, py + 0.5 * dt * k1y)
        k3x, k3y, ok3 = _sample(vx, vy, mask, times, xmin, ymin, dx, dy, t + 0.5 * dt,
                                px + 0.5 * dt * k2x, py + 0.5 * dt * k2y)
        k4x, k4y, ok4 = _sample(vx, vy, mask, times, xmin, ymin, dx, dy, t + dt,
                                px + dt * k3x, py + dt * k3y)
        good = ok1 & ok2 & ok3 & ok4
        ddx = dt * (k1x + 2 * k2x + 2 * k3x + k4x) / 6.0
        ddy = dt * (k1y + 2 * k2y + 2 * k3y + k4y) / 6.0
        boom = good & (np.sqrt(ddx**2 + ddy**2) > max_step)
        status[idx[~good]] = LEFT
        status[idx[boom]] = EXPLODED
        move = good & ~boom
        mi = idx[move]
        x[mi] = px[move] + ddx[move]
        y[mi] = py[move] + ddy[move]
        xs[mi, s + 1] = x[mi]
        ys[mi, s + 1] = y[mi]
        nvalid[mi] = s + 2
        active[idx[~move]] = False
    return xs, ys, nvalid, status


def z_moments(K, z0, h, w, chunk=256):
    K = np.ascontiguousarray(K, dtype=complex).ravel()
    w = np.asarray(w, dtype=float)
    nz = w.shape[0]
    out = np.zeros((5, K.size), dtype=complex)
    for a in range(0, nz, chunk):
        z = z0 + h * np.arange(a, min(a + chunk, nz))
        wz = w[a:a + len(z)][:, None]
        arg = z[:, None] * K[None, :]
        s = np.sin(arg)
        c = np.cos(arg)
        ss = (s.real**2 + s.imag**2)
        cc = (c.real**2 + c.imag**2)
        cs = np.conj(s) * c
        zz = z[:, None]
        out[0] += np.sum(wz * ss, axis=0)
        out[1] += np.sum(wz * cc, axis=0)
        out[2] += np.sum(wz * cs, axis=0)
        out[3] += np.sum(wz * zz * cs, axis=0)
        out[4] += np.sum(wz * zz**2 * cc, axis=0)
    return out


def psf_convolve(psi, x, u, dx, bandwidth, chunk=512):
    psi = np.asarray(psi, dtype=complex)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.size, dtype=complex)
    for a in range(0, u.size, chunk):
        arg = x[None, :] + u[a:a + chunk, None]
        small = np.abs(arg) < 1e-300
        safe = np.where(small, 1.0, arg)
        ker = np.where(small, bandwidth / np.pi, np.sin(bandwidth * safe) / (np.pi * safe))
        out[a:a + chunk] = (ker @ psi) * dx
    return out
