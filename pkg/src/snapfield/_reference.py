"""Pure-numpy ray-marching kernels.

Same signatures and math as the compiled ``_kernels`` module; used when the
extension is unavailable and as a cross-check in the tests.  Work is split
into ray chunks to bound the memory of the (rays, samples, 8 corners)
intermediates.
"""
import numpy as np

from .sh import sh_basis, sh_basis_grad

CHUNK = 2048


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sample_times(t_near, t_far, n_samples, offsets, n_rays):
    step = (t_far - t_near) / n_samples
    j = np.arange(n_samples, dtype=np.float64)
    if offsets is None:
        t = np.broadcast_to(t_near + (j + 0.5) * step, (n_rays, n_samples))
    else:
        t = t_near + (j + offsets) * step
    return t, step


def trilinear(points, bmin, bmax, res, want_grad=False):
    """Corner indices/weights for points, flat index ``(x*ny + y)*nz + z``."""
    res = np.asarray(res)
    vs = (bmax - bmin) / res
    inside = np.all((points >= bmin) & (points <= bmax), axis=-1)
    u = (points - bmin) / vs - 0.5
    hi = (res - 1).astype(np.float64)
    free = (u > 0) & (u < hi)
    u = np.clip(u, 0.0, hi)
    i0 = np.minimum(np.floor(u).astype(np.int64), np.maximum(res - 2, 0))
    f = u - i0
    i1 = np.minimum(i0 + 1, res - 1)
    ny, nz = res[1], res[2]
    idx = np.empty(points.shape[:-1] + (8,), dtype=np.int64)
    w = np.empty(points.shape[:-1] + (8,))
    dw = np.empty(points.shape[:-1] + (8, 3)) if want_grad else None
    for c in range(8):
        bx, by, bz = (c >> 2) & 1, (c >> 1) & 1, c & 1
        ix = i1[..., 0] if bx else i0[..., 0]
        iy = i1[..., 1] if by else i0[..., 1]
        iz = i1[..., 2] if bz else i0[..., 2]
        idx[..., c] = (ix * ny + iy) * nz + iz
        wx = f[..., 0] if bx else 1.0 - f[..., 0]
        wy = f[..., 1] if by else 1.0 - f[..., 1]
        wz = f[..., 2] if bz else 1.0 - f[..., 2]
        w[..., c] = wx * wy * wz
        if want_grad:
            sx, sy, sz = (1.0 if bx else -1.0), (1.0 if by else -1.0), (1.0 if bz else -1.0)
            dw[..., c, 0] = sx * wy * wz * free[..., 0] / vs[0]
            dw[..., c, 1] = sy * wx * wz * free[..., 1] / vs[1]
            dw[..., c, 2] = sz * wx * wy * free[..., 2] / vs[2]
    return inside, idx, w, dw


def _march(density, sh, sh_degree, bmin, bmax, origins, dirs, t, step, bg, min_t,
           want_grad=False):
    res = density.shape
    dens = density.reshape(-1)
    k = (sh_degree + 1) ** 2
    shf = sh.reshape(-1, k, 3)
    p = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    inside, idx, w, dw = trilinear(p, bmin, bmax, res, want_grad)
    raw = np.einsum("rnc,rnc->rn", w, dens[idx])
    sig = softplus(raw) * inside
    shi = np.einsum("rnc,rnckd->rnkd", w, shf[idx])
    basis = sh_basis(dirs, sh_degree)
    cpre = np.einsum("rk,rnkd->rnd", basis, shi)
    col = np.clip(cpre, 0.0, 1.0) * inside[..., None]
    alpha = 1.0 - np.exp(-sig * step)
    one_minus = 1.0 - alpha
    trans = np.cumprod(np.concatenate([np.ones_like(alpha[:, :1]), one_minus[:, :-1]], axis=1), axis=1)
    if min_t > 0:
        live = trans >= min_t
        alpha = alpha * live
        one_minus = 1.0 - alpha
    weights = trans * alpha
    t_final = trans[:, -1] * one_minus[:, -1]
    color = np.einsum("rn,rnd->rd", weights, col) + t_final[:, None] * bg
    return dict(color=color, t_final=t_final, weights=weights, trans=trans, alpha=alpha,
                col=col, cpre=cpre, raw=raw, inside=inside, idx=idx, w=w, dw=dw,
                shi=shi, basis=basis, one_minus=one_minus)


def render_forward(density, sh, sh_degree, bmin, bmax, origins, dirs, t_near, t_far,
                   n_samples, offsets, bg, min_t, return_weights=False):
    n_rays = origins.shape[0]
    colors = np.empty((n_rays, 3))
    t_final = np.empty(n_rays)
    weights = np.empty((n_rays, n_samples)) if return_weights else None
    for s in range(0, n_rays, CHUNK):
        sl = slice(s, s + CHUNK)
        off = None if offsets is None else offsets[sl]
        t, step = sample_times(t_near, t_far, n_samples, off, origins[sl].shape[0])
        m = _march(density, sh, sh_degree, bmin, bmax, origins[sl], dirs[sl], t, step, bg, min_t)
        colors[sl] = m["color"]
        t_final[sl] = m["t_final"]
        if return_weights:
            weights[sl] = m["weights"]
    if return_weights:
        return colors, t_final, weights
    return colors, t_final


def render_backward(density, sh, sh_degree, bmin, bmax, origins, dirs, t_near, t_far,
                    n_samples, offsets, bg, min_t, grad_color, grad_density, grad_sh,
                    grad_origins=None, grad_dirs=None):
    """Accumulate d(sum grad_color * color) into the gradient buffers in place."""
    want_ray = grad_origins is not None
    k = (sh_degree + 1) ** 2
    n_vox = grad_density.size
    gd_flat = grad_density.reshape(-1)
    gs_flat = grad_sh.reshape(n_vox, k * 3)
    dens = density.reshape(-1)
    shf = sh.reshape(-1, k, 3)
    for s in range(0, origins.shape[0], CHUNK):
        sl = slice(s, s + CHUNK)
        o, d, g = origins[sl], dirs[sl], grad_color[sl]
        off = None if offsets is None else offsets[sl]
        t, step = sample_times(t_near, t_far, n_samples, off, o.shape[0])
        m = _march(density, sh, sh_degree, bmin, bmax, o, d, t, step, bg, min_t, want_ray)
        wc = m["weights"][..., None] * m["col"]
        suffix = np.cumsum(wc[:, ::-1], axis=1)[:, ::-1]
        after = np.concatenate([suffix[:, 1:], np.zeros_like(suffix[:, :1])], axis=1)
        after = after + m["t_final"][:, None, None] * bg
        g_after = np.einsum("rnd,rd->rn", after, g)
        g_col = np.einsum("rnd,rd->rn", m["col"], g)
        trans_next = m["trans"] * m["one_minus"]
        d_sigma = step * (trans_next * g_col - g_after)
        if min_t > 0:
            d_sigma = d_sigma * (m["trans"] >= min_t)
        d_raw = d_sigma * sigmoid(m["raw"]) * m["inside"]
        interior = (m["cpre"] > 0.0) & (m["cpre"] < 1.0) & m["inside"][..., None]
        d_col = m["weights"][..., None] * g[:, None, :] * interior
        d_shi = m["basis"][:, None, :, None] * d_col[:, :, None, :]  # r n k 3
        w, idx = m["w"], m["idx"]
        gd_flat += np.bincount(idx.ravel(), weights=(w * d_raw[..., None]).ravel(), minlength=n_vox)
        contrib = w[..., None, None] * d_shi[:, :, None, :, :]  # r n c k 3
        contrib = contrib.reshape(-1, k * 3)
        flat_idx = idx.ravel()
        for q in range(k * 3):
            gs_flat[:, q] += np.bincount(flat_idx, weights=contrib[:, q], minlength=n_vox)
        if want_ray:
            dw = m["dw"]
            draw_dp = np.einsum("rncx,rnc->rnx", dw, dens[idx])
            dshi_dp = np.einsum("rncx,rnckd->rnkdx", dw, shf[idx])
            dcol_dp = np.einsum("rk,rnkdx->rndx", m["basis"], dshi_dp)
            dp = d_raw[..., None] * draw_dp + np.einsum("rnd,rndx->rnx", d_col, dcol_dp)
            grad_origins[sl] += dp.sum(axis=1)
            bgrad = sh_basis_grad(d, sh_degree)  # r k x
            dir_sh = np.einsum("rnd,rnkd,rkx->rx", d_col, m["shi"], bgrad)
            grad_dirs[sl] += np.einsum("rn,rnx->rx", t, dp) + dir_sh
