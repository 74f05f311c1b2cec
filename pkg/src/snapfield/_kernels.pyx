# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray-marching kernels over a trilinear density + SH grid.

Mirrors ``snapfield._reference`` sample for sample.  Rays are processed in
order on a single thread, so gradient accumulation is bit-reproducible.
"""
import numpy as np

from libc.math cimport exp, log1p, floor, tanh
from libc.stdlib cimport malloc, free

cdef double C0 = 0.28209479177387814
cdef double C1 = 0.4886025119029199
cdef double C20 = 1.0925484305920792
cdef double C21 = -1.0925484305920792
cdef double C22 = 0.31539156525252005
cdef double C23 = -1.0925484305920792
cdef double C24 = 0.5462742152960396


cdef inline double _softplus(double x) noexcept nogil:
    if x > 30.0:
        return x
    if x < -30.0:
        return exp(x)
    return log1p(exp(x))


cdef inline double _sigmoid(double x) noexcept nogil:
    return 0.5 * (1.0 + tanh(0.5 * x))


cdef inline void _basis(int deg, double x, double y, double z, double* out) noexcept nogil:
    out[0] = C0
    if deg >= 1:
        out[1] = -C1 * y
        out[2] = C1 * z
        out[3] = -C1 * x
    if deg >= 2:
        out[4] = C20 * x * y
        out[5] = C21 * y * z
        out[6] = C22 * (2.0 * z * z - x * x - y * y)
        out[7] = C23 * x * z
        out[8] = C24 * (x * x - y * y)


cdef inline void _basis_grad(int deg, double x, double y, double z, double* g) noexcept nogil:
    # g[k*3 + axis]
    cdef int i
    for i in range(27):
        g[i] = 0.0
    if deg >= 1:
        g[1 * 3 + 1] = -C1
        g[2 * 3 + 2] = C1
        g[3 * 3 + 0] = -C1
    if deg >= 2:
        g[4 * 3 + 0] = C20 * y
        g[4 * 3 + 1] = C20 * x
        g[5 * 3 + 1] = C21 * z
        g[5 * 3 + 2] = C21 * y
        g[6 * 3 + 0] = -2.0 * C22 * x
        g[6 * 3 + 1] = -2.0 * C22 * y
        g[6 * 3 + 2] = 4.0 * C22 * z
        g[7 * 3 + 0] = C23 * z
        g[7 * 3 + 2] = C23 * x
        g[8 * 3 + 0] = 2.0 * C24 * x
        g[8 * 3 + 1] = -2.0 * C24 * y


cdef struct Grid:
    const double* dens
    const double* sh
    int nx, ny, nz
    int kc             # K * 3
    double bmin[3]
    double bmax[3]
    double inv_vs[3]


cdef inline bint _corners(Grid* g, double px, double py, double pz,
                          long* idx, double* w, double* dw, bint want_grad) noexcept nogil:
    """Fill 8 corner indices/weights; returns False outside the bbox."""
    cdef double p[3]
    cdef double f[3]
    cdef double fr[3]
    cdef int i0[3]
    cdef int i1[3]
    cdef int n[3]
    cdef int a, c, bx, by, bz
    cdef double u, hi, wx, wy, wz
    p[0] = px
    p[1] = py
    p[2] = pz
    n[0] = g.nx
    n[1] = g.ny
    n[2] = g.nz
    for a in range(3):
        if p[a] < g.bmin[a] or p[a] > g.bmax[a]:
            return False
    for a in range(3):
        u = (p[a] - g.bmin[a]) * g.inv_vs[a] - 0.5
        hi = n[a] - 1
        fr[a] = 1.0 if (u > 0.0 and u < hi) else 0.0
        if u < 0.0:
            u = 0.0
        elif u > hi:
            u = hi
        i0[a] = <int>floor(u)
        if n[a] >= 2 and i0[a] > n[a] - 2:
            i0[a] = n[a] - 2
        elif n[a] < 2:
            i0[a] = 0
        f[a] = u - i0[a]
        i1[a] = i0[a] + 1 if i0[a] + 1 < n[a] else n[a] - 1
    for c in range(8):
        bx = (c >> 2) & 1
        by = (c >> 1) & 1
        bz = c & 1
        idx[c] = (<long>(i1[0] if bx else i0[0]) * g.ny + (i1[1] if by else i0[1])) * g.nz \
            + (i1[2] if bz else i0[2])
        wx = f[0] if bx else 1.0 - f[0]
        wy = f[1] if by else 1.0 - f[1]
        wz = f[2] if bz else 1.0 - f[2]
        w[c] = wx * wy * wz
        if want_grad:
            dw[c * 3 + 0] = (1.0 if bx else -1.0) * wy * wz * fr[0] * g.inv_vs[0]
            dw[c * 3 + 1] = (1.0 if by else -1.0) * wx * wz * fr[1] * g.inv_vs[1]
            dw[c * 3 + 2] = (1.0 if bz else -1.0) * wx * wy * fr[2] * g.inv_vs[2]
    return True


cdef Grid _make_grid(double[:, :, ::1] density, double[:, ::1] sh, int sh_degree,
                     double[::1] bmin, double[::1] bmax):
    cdef Grid g
    cdef int a
    g.dens = &density[0, 0, 0]
    g.sh = &sh[0, 0]
    g.nx = density.shape[0]
    g.ny = density.shape[1]
    g.nz = density.shape[2]
    g.kc = (sh_degree + 1) * (sh_degree + 1) * 3
    n = (g.nx, g.ny, g.nz)
    for a in range(3):
        g.bmin[a] = bmin[a]
        g.bmax[a] = bmax[a]
        g.inv_vs[a] = n[a] / (bmax[a] - bmin[a])
    return g


def render_forward(double[:, :, ::1] density, double[:, ::1] sh, int sh_degree,
                   double[::1] bmin, double[::1] bmax,
                   double[:, ::1] origins, double[:, ::1] dirs,
                   double t_near, double t_far, int n_samples, offsets,
                   double[::1] bg, double min_t):
    cdef Grid g = _make_grid(density, sh, sh_degree, bmin, bmax)
    cdef Py_ssize_t n_rays = origins.shape[0]
    colors_np = np.zeros((n_rays, 3))
    tfin_np = np.zeros(n_rays)
    cdef double[:, ::1] colors = colors_np
    cdef double[::1] tfin = tfin_np
    cdef double[:, ::1] off
    cdef bint has_off = offsets is not None
    if has_off:
        off = offsets
    cdef double step = (t_far - t_near) / n_samples
    cdef int K = (sh_degree + 1) * (sh_degree + 1)
    cdef double basis[9]
    cdef long idx[8]
    cdef double w[8]
    cdef Py_ssize_t r
    cdef int j, c, k, ch
    cdef double t, px, py, pz, raw, sig, alpha, T, wgt, val
    cdef double col[3]
    cdef const double* row
    with nogil:
        for r in range(n_rays):
            _basis(sh_degree, dirs[r, 0], dirs[r, 1], dirs[r, 2], basis)
            T = 1.0
            col[0] = 0.0
            col[1] = 0.0
            col[2] = 0.0
            for j in range(n_samples):
                if T < min_t:
                    break
                t = t_near + (j + (off[r, j] if has_off else 0.5)) * step
                px = origins[r, 0] + t * dirs[r, 0]
                py = origins[r, 1] + t * dirs[r, 1]
                pz = origins[r, 2] + t * dirs[r, 2]
                if not _corners(&g, px, py, pz, idx, w, NULL, False):
                    continue
                raw = 0.0
                for c in range(8):
                    raw = raw + w[c] * g.dens[idx[c]]
                sig = _softplus(raw)
                alpha = 1.0 - exp(-sig * step)
                wgt = T * alpha
                for ch in range(3):
                    val = 0.0
                    for k in range(K):
                        for c in range(8):
                            val = val + basis[k] * w[c] * g.sh[idx[c] * g.kc + k * 3 + ch]
                    if val < 0.0:
                        val = 0.0
                    elif val > 1.0:
                        val = 1.0
                    col[ch] = col[ch] + wgt * val
                T = T * (1.0 - alpha)
            for ch in range(3):
                colors[r, ch] = col[ch] + T * bg[ch]
            tfin[r] = T
    return colors_np, tfin_np


def render_backward(double[:, :, ::1] density, double[:, ::1] sh, int sh_degree,
                    double[::1] bmin, double[::1] bmax,
                    double[:, ::1] origins, double[:, ::1] dirs,
                    double t_near, double t_far, int n_samples, offsets,
                    double[::1] bg, double min_t,
                    double[:, ::1] grad_color, double[:, :, ::1] grad_density,
                    double[:, ::1] grad_sh, grad_origins=None, grad_dirs=None):
    cdef Grid g = _make_grid(density, sh, sh_degree, bmin, bmax)
    cdef Py_ssize_t n_rays = origins.shape[0]
    cdef double[:, ::1] off
    cdef bint has_off = offsets is not None
    if has_off:
        off = offsets
    cdef bint want_ray = grad_origins is not None
    cdef double[:, ::1] go
    cdef double[:, ::1] gdir
    if want_ray:
        go = grad_origins
        gdir = grad_dirs
    cdef double* gdens = &grad_density[0, 0, 0]
    cdef double* gsh = &grad_sh[0, 0]
    cdef double step = (t_far - t_near) / n_samples
    cdef int K = (sh_degree + 1) * (sh_degree + 1)
    cdef int KC = K * 3
    cdef double basis[9]
    cdef double bgrad[27]
    cdef long idx[8]
    cdef double w[8]
    cdef double dw[24]
    # per-sample scratch
    cdef int ns = n_samples
    cdef long* s_idx = <long*>malloc(ns * 8 * sizeof(long))
    cdef double* s_w = <double*>malloc(ns * 8 * sizeof(double))
    cdef double* s_dw = <double*>malloc(ns * 24 * sizeof(double))
    cdef double* s_alpha = <double*>malloc(ns * sizeof(double))
    cdef double* s_dsig = <double*>malloc(ns * sizeof(double))
    cdef double* s_col = <double*>malloc(ns * 3 * sizeof(double))
    cdef double* s_inter = <double*>malloc(ns * 3 * sizeof(double))
    cdef double* s_t = <double*>malloc(ns * sizeof(double))
    cdef char* s_in = <char*>malloc(ns * sizeof(char))
    if (s_idx == NULL or s_w == NULL or s_dw == NULL or s_alpha == NULL or s_dsig == NULL
            or s_col == NULL or s_inter == NULL or s_t == NULL or s_in == NULL):
        free(s_idx); free(s_w); free(s_dw); free(s_alpha); free(s_dsig)
        free(s_col); free(s_inter); free(s_t); free(s_in)
        raise MemoryError()
    cdef Py_ssize_t r, base
    cdef int j, c, k, ch, a, n_live
    cdef double t, raw, sig, alpha, T, Tn, wgt, val, gsum_after, gcol, dsig, draw, dc
    cdef double shv, g0, g1, g2
    cdef double col[3]
    cdef double after[3]
    cdef double dp[3]
    cdef double gd_sh[3]
    cdef double dcol[3]
    try:
        with nogil:
            for r in range(n_rays):
                g0 = grad_color[r, 0]
                g1 = grad_color[r, 1]
                g2 = grad_color[r, 2]
                _basis(sh_degree, dirs[r, 0], dirs[r, 1], dirs[r, 2], basis)
                if want_ray:
                    _basis_grad(sh_degree, dirs[r, 0], dirs[r, 1], dirs[r, 2], bgrad)
                # forward pass, caching per-sample state
                T = 1.0
                col[0] = 0.0
                col[1] = 0.0
                col[2] = 0.0
                n_live = 0
                for j in range(n_samples):
                    if T < min_t:
                        break
                    n_live = j + 1
                    t = t_near + (j + (off[r, j] if has_off else 0.5)) * step
                    s_t[j] = t
                    s_in[j] = _corners(&g, origins[r, 0] + t * dirs[r, 0],
                                       origins[r, 1] + t * dirs[r, 1],
                                       origins[r, 2] + t * dirs[r, 2],
                                       &s_idx[j * 8], &s_w[j * 8], &s_dw[j * 24], want_ray)
                    if not s_in[j]:
                        s_alpha[j] = 0.0
                        s_dsig[j] = 0.0
                        for ch in range(3):
                            s_col[j * 3 + ch] = 0.0
                            s_inter[j * 3 + ch] = 0.0
                        continue
                    raw = 0.0
                    for c in range(8):
                        raw = raw + s_w[j * 8 + c] * g.dens[s_idx[j * 8 + c]]
                    sig = _softplus(raw)
                    s_dsig[j] = _sigmoid(raw)
                    alpha = 1.0 - exp(-sig * step)
                    s_alpha[j] = alpha
                    wgt = T * alpha
                    for ch in range(3):
                        val = 0.0
                        for k in range(K):
                            for c in range(8):
                                val = val + basis[k] * s_w[j * 8 + c] * g.sh[s_idx[j * 8 + c] * KC + k * 3 + ch]
                        s_inter[j * 3 + ch] = 1.0 if (val > 0.0 and val < 1.0) else 0.0
                        if val < 0.0:
                            val = 0.0
                        elif val > 1.0:
                            val = 1.0
                        s_col[j * 3 + ch] = val
                        col[ch] = col[ch] + wgt * val
                    T = T * (1.0 - alpha)
                # remaining light after sample j: after = total - prefix
                for ch in range(3):
                    after[ch] = col[ch] + T * bg[ch]
                T = 1.0
                for j in range(n_live):
                    alpha = s_alpha[j]
                    wgt = T * alpha
                    for ch in range(3):
                        after[ch] = after[ch] - wgt * s_col[j * 3 + ch]
                    Tn = T * (1.0 - alpha)
                    if s_in[j]:
                        gsum_after = g0 * after[0] + g1 * after[1] + g2 * after[2]
                        gcol = g0 * s_col[j * 3] + g1 * s_col[j * 3 + 1] + g2 * s_col[j * 3 + 2]
                        dsig = step * (Tn * gcol - gsum_after)
                        draw = dsig * s_dsig[j]
                        dcol[0] = wgt * g0 * s_inter[j * 3]
                        dcol[1] = wgt * g1 * s_inter[j * 3 + 1]
                        dcol[2] = wgt * g2 * s_inter[j * 3 + 2]
                        base = j * 8
                        for c in range(8):
                            gdens[s_idx[base + c]] += draw * s_w[base + c]
                            for k in range(K):
                                for ch in range(3):
                                    gsh[s_idx[base + c] * KC + k * 3 + ch] += s_w[base + c] * basis[k] * dcol[ch]
                        if want_ray:
                            dp[0] = 0.0
                            dp[1] = 0.0
                            dp[2] = 0.0
                            gd_sh[0] = 0.0
                            gd_sh[1] = 0.0
                            gd_sh[2] = 0.0
                            for c in range(8):
                                val = draw * g.dens[s_idx[base + c]]
                                for k in range(K):
                                    for ch in range(3):
                                        shv = g.sh[s_idx[base + c] * KC + k * 3 + ch]
                                        dc = dcol[ch] * shv
                                        val = val + dc * basis[k]
                                        # direction term through the SH basis
                                        for a in range(3):
                                            gd_sh[a] = gd_sh[a] + dc * s_w[base + c] * bgrad[k * 3 + a]
                                for a in range(3):
                                    dp[a] = dp[a] + val * s_dw[j * 24 + c * 3 + a]
                            t = s_t[j]
                            for a in range(3):
                                go[r, a] += dp[a]
                                gdir[r, a] += t * dp[a] + gd_sh[a]
                    T = Tn
    finally:
        free(s_idx); free(s_w); free(s_dw); free(s_alpha); free(s_dsig)
        free(s_col); free(s_inter); free(s_t); free(s_in)
