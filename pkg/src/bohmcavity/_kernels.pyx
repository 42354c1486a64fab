# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: trajectory tracing, z-moment accumulation, PSF sums.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature; ``bohmcavity.kernels`` picks one at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sin, fabs, sqrt

cnp.import_array()

ctypedef double complex dcomplex

cdef enum:
    OK = 0
    LEFT = 1
    EXPLODED = 2


cdef inline int _sample(const double[:, :, ::1] vx, const double[:, :, ::1] vy,
                        const unsigned char[:, ::1] mask, const double[::1] times,
                        double xmin, double ymin, double dx, double dy,
                        double t, double x, double y, double* ox, double* oy) noexcept nogil:
    cdef Py_ssize_t nt = vx.shape[0], ny = vx.shape[1], nx = vx.shape[2]
    cdef double fx = (x - xmin) / dx, fy = (y - ymin) / dy
    cdef Py_ssize_t i, j, k = 0
    cdef double ax, ay, at = 0.0
    cdef double v00, v01, v10, v11, a, b
    if not (fx >= 0.0 and fy >= 0.0):
        return LEFT
    i = <Py_ssize_t>floor(fx)
    j = <Py_ssize_t>floor(fy)
    if i >= nx - 1:
        if i == nx - 1 and fx == <double>(nx - 1) and nx > 1:
            i = nx - 2
        else:
            return LEFT
    if j >= ny - 1:
        if j == ny - 1 and fy == <double>(ny - 1) and ny > 1:
            j = ny - 2
        else:
            return LEFT
    if not (mask[j, i] and mask[j, i + 1] and mask[j + 1, i] and mask[j + 1, i + 1]):
        return LEFT
    ax = fx - i
    ay = fy - j
    if nt > 1:
        if t <= times[0]:
            k = 0
            at = 0.0
        elif t >= times[nt - 1]:
            k = nt - 2
            at = 1.0
        else:
            while k < nt - 2 and times[k + 1] <= t:
                k += 1
            at = (t - times[k]) / (times[k + 1] - times[k])
    # bilinear in space, linear in time
    v00 = (1 - ax) * (1 - ay)
    v01 = ax * (1 - ay)
    v10 = (1 - ax) * ay
    v11 = ax * ay
    a = (v00 * vx[k, j, i] + v01 * vx[k, j, i + 1] + v10 * vx[k, j + 1, i]
         + v11 * vx[k, j + 1, i + 1])
    b = (v00 * vy[k, j, i] + v01 * vy[k, j, i + 1] + v10 * vy[k, j + 1, i]
         + v11 * vy[k, j + 1, i + 1])
    if nt > 1 and at > 0.0:
        a = (1 - at) * a + at * (v00 * vx[k + 1, j, i] + v01 * vx[k + 1, j, i + 1]
                                 + v10 * vx[k + 1, j + 1, i] + v11 * vx[k + 1, j + 1, i + 1])
        b = (1 - at) * b + at * (v00 * vy[k + 1, j, i] + v01 * vy[k + 1, j, i + 1]
                                 + v10 * vy[k + 1, j + 1, i] + v11 * vy[k + 1, j + 1, i + 1])
    ox[0] = a
    oy[0] = b
    return OK


def rk4_trace(vx_in, vy_in, mask_in, times_in, double xmin, double ymin,
              double dx, double dy, starts_in, double t0, double dt,
              Py_ssize_t nsteps, double max_step):
    """Trace many paths through a sampled, time-interpolated velocity field.

    Returns ``(xs, ys, nvalid, status)``: positions of shape (n, nsteps+1),
    number of valid samples per path, and a status code per path
    (0 finished, 1 left the valid region, 2 step explosion).
    """
    cdef const double[:, :, ::1] vx = np.ascontiguousarray(vx_in, dtype=np.float64)
    cdef const double[:, :, ::1] vy = np.ascontiguousarray(vy_in, dtype=np.float64)
    cdef const unsigned char[:, ::1] mask = np.ascontiguousarray(mask_in, dtype=np.uint8)
    cdef const double[::1] times = np.ascontiguousarray(times_in, dtype=np.float64)
    cdef const double[:, ::1] starts = np.ascontiguousarray(starts_in, dtype=np.float64)
    cdef Py_ssize_t n = starts.shape[0], p, s
    xs_arr = np.full((n, nsteps + 1), np.nan)
    ys_arr = np.full((n, nsteps + 1), np.nan)
    nvalid_arr = np.zeros(n, dtype=np.int64)
    status_arr = np.zeros(n, dtype=np.int64)
    cdef double[:, ::1] xs = xs_arr
    cdef double[:, ::1] ys = ys_arr
    cdef long long[::1] nvalid = nvalid_arr
    cdef long long[::1] status = status_arr
    cdef double x, y, t, k1x, k1y, k2x, k2y, k3x, k3y, k4x, k4y, ddx, ddy
    cdef int st
    with nogil:
        for p in range(n):
            x = starts[p, 0]
            y = starts[p, 1]
            st = _sample(vx, vy, mask, times, xmin, ymin, dx, dy, t0, x, y, &k1x, &k1y)
            if st != OK:
                status[p] = LEFT
                nvalid[p] = 0
                continue
            xs[p, 0] = x
            ys[p, 0] = y
            nvalid[p] = 1
            for s in range(nsteps):
                t = t0 + s * dt
                st = _sample(vx, vy, mask, times, xmin, ymin, dx, dy, t, x, y, &k1x, &k1y)
                if st == OK and dt * sqrt(k1x * k1x + k1y * k1y) > max_step:
                    status[p] = EXPLODED
                    break
                if st == OK:
                    st = _sample(vx, vy, mask, times, xmin, ymin, dx, dy, t + 0.5 * dt,
                                 x + 0.5 * dt * k1x, y + 0.5 * dt * k1y, &k2x, &k2y)
                if st == OK:
                    st = _sample(vx, vy, mask, times, xmin, ymin, dx, dy, t + 0.5 * dt,
                                 x + 0.5 * dt * k2x, y + 0.5 * dt * k2y, &k3x, &k3y)
                if st == OK:
                    st = _sample(vx, vy, mask, times, xmin, ymin, dx, dy, t + dt,
                                 x + dt * k3x, y + dt * k3y, &k4x, &k4y)
                if st != OK:
                    status[p] = LEFT
                    break
                ddx = dt * (k1x + 2 * k2x + 2 * k3x + k4x) / 6.0
                ddy = dt * (k1y + 2 * k2y + 2 * k3y + k4y) / 6.0
                if sqrt(ddx * ddx + ddy * ddy) > max_step:
                    status[p] = EXPLODED
                    break
                x = x + ddx
                y = y + ddy
                xs[p, s + 1] = x
                ys[p, s + 1] = y
                nvalid[p] = s + 2
    return xs_arr, ys_arr, nvalid_arr, status_arr


cdef Py_ssize_t RESEED = 64


def z_moments(K_in, double z0, double h, w_in):
    """Weighted z-integrals of products of ``s = sin(K z)`` and ``c = cos(K z)``.

    For each complex ``K`` returns the five sums over the uniform z-grid
    ``z_k = z0 + k h`` with weights ``w_k``:
    ``|s|^2, |c|^2, conj(s) c, z conj(s) c, z^2 |c|^2``.
    The sines are advanced by an angle-addition recurrence, so the inner loop
    needs no transcendental calls.  The recurrence is reseeded from exact
    values every ``RESEED`` samples so rounding does not grow with ``nz``.
    """
    K_arr = np.ascontiguousarray(K_in, dtype=np.complex128).ravel()
    cdef const double[::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef Py_ssize_t nz = w.shape[0]
    zs = z0 + h * np.arange(0, nz, RESEED)
    s0_arr = np.ascontiguousarray(np.sin(np.outer(K_arr, zs)))
    c0_arr = np.ascontiguousarray(np.cos(np.outer(K_arr, zs)))
    sh_arr = np.sin(K_arr * h)
    ch_arr = np.cos(K_arr * h)
    cdef const dcomplex[:, ::1] s0 = s0_arr
    cdef const dcomplex[:, ::1] c0 = c0_arr
    cdef const dcomplex[::1] sh = sh_arr
    cdef const dcomplex[::1] ch = ch_arr
    cdef Py_ssize_t n = K_arr.shape[0], p, k
    out_arr = np.zeros((5, n), dtype=np.complex128)
    cdef dcomplex[:, ::1] out = out_arr
    cdef dcomplex s, c, sn, cs
    cdef double z, wk, ss, cc
    cdef dcomplex a_ss, a_cc, a_sc, a_zsc, a_zzcc
    with nogil:
        for p in range(n):
            a_ss = 0
            a_cc = 0
            a_sc = 0
            a_zsc = 0
            a_zzcc = 0
            for k in range(nz):
                if k % RESEED == 0:
                    s = s0[p, k // RESEED]
                    c = c0[p, k // RESEED]
                z = z0 + k * h
                wk = w[k]
                ss = s.real * s.real + s.imag * s.imag
                cc = c.real * c.real + c.imag * c.imag
                cs = s.conjugate() * c
                a_ss = a_ss + wk * ss
                a_cc = a_cc + wk * cc
                a_sc = a_sc + wk * cs
                a_zsc = a_zsc + wk * z * cs
                a_zzcc = a_zzcc + wk * z * z * cc
                sn = s * ch[p] + c * sh[p]
                c = c * ch[p] - s * sh[p]
                s = sn
            out[0, p] = a_ss
            out[1, p] = a_cc
            out[2, p] = a_sc
            out[3, p] = a_zsc
            out[4, p] = a_zzcc
    return out_arr


def psf_convolve(psi_in, x_in, u_in, double dx, double bandwidth):
    """Riemann sum ``sum_j psi_j * sin(W (x_j + u)) / (pi (x_j + u)) * dx``."""
    cdef const dcomplex[::1] psi = np.ascontiguousarray(psi_in, dtype=np.complex128)
    cdef const double[::1] xs = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef const double[::1] us = np.ascontiguousarray(u_in, dtype=np.float64)
    cdef Py_ssize_t n = xs.shape[0], m = us.shape[0], i, j
    out_arr = np.zeros(m, dtype=np.complex128)
    cdef dcomplex[::1] out = out_arr
    cdef dcomplex acc
    cdef double arg, ker
    cdef double peak = bandwidth / 3.141592653589793
    with nogil:
        for j in range(m):
            acc = 0
            for i in range(n):
                arg = xs[i] + us[j]
                if fabs(arg) < 1e-300:
                    ker = peak
                else:
                    ker = sin(bandwidth * arg) / (3.141592653589793 * arg)
                acc = acc + psi[i] * ker
            out[j] = acc * dx
    return out_arr
