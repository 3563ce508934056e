"""Pure numpy ray marcher, used when the compiled kernel is unavailable.

Same arithmetic as _raymarch.pyx, vectorized across rays: each pass of the
sample loop advances every ray that still has samples left.
"""

import numpy as np


def _sample(data, fx, fy, fz):
    nz, ny, nx = data.shape
    fx = np.clip(fx, 0.0, nx - 1)
    fy = np.clip(fy, 0.0, ny - 1)
    fz = np.clip(fz, 0.0, nz - 1)
    x0 = np.minimum(np.floor(fx).astype(np.intp), max(nx - 2, 0))
    y0 = np.minimum(np.floor(fy).astype(np.intp), max(ny - 2, 0))
    z0 = np.minimum(np.floor(fz).astype(np.intp), max(nz - 2, 0))
    x1 = x0 + 1 if nx > 1 else x0
    y1 = y0 + 1 if ny > 1 else y0
    z1 = z0 + 1 if nz > 1 else z0
    wx = fx - x0
    wy = fy - y0
    wz = fz - z0

    def v(z, y, x):
        return data[z, y, x].astype(np.float64)

    c00 = v(z0, y0, x0) * (1.0 - wx) + v(z0, y0, x1) * wx
    c01 = v(z0, y1, x0) * (1.0 - wx) + v(z0, y1, x1) * wx
    c10 = v(z1, y0, x0) * (1.0 - wx) + v(z1, y0, x1) * wx
    c11 = v(z1, y1, x0) * (1.0 - wx) + v(z1, y1, x1) * wx
    c0 = c00 * (1.0 - wy) + c01 * wy
    c1 = c10 * (1.0 - wy) + c11 * wy
    return c0 * (1.0 - wz) + c1 * wz


def march_rays(data, origin, spacing, ray_origins, ray_dirs, step, out):
    nz, ny, nx = data.shape
    dims = np.array([nx, ny, nz], dtype=np.float64)
    lo = origin - 0.5 * spacing
    hi = origin + (dims - 0.5) * spacing

    n_rays = ray_origins.shape[0]
    t0 = np.full(n_rays, -np.inf)
    t1 = np.full(n_rays, np.inf)
    miss = np.zeros(n_rays, dtype=bool)
    for a in range(3):
        o = ray_origins[:, a]
        d = ray_dirs[:, a]
        flat = np.abs(d) < 1e-12
        miss |= flat & ((o < lo[a]) | (o > hi[a]))
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo[a] - o) / d
            tb = (hi[a] - o) / d
        near = np.where(flat, -np.inf, np.minimum(ta, tb))
        far = np.where(flat, np.inf, np.maximum(ta, tb))
        t0 = np.maximum(t0, near)
        t1 = np.minimum(t1, far)

    hit = ~miss & (t1 > t0)
    out[:] = 0.0
    if not hit.any():
        return
    idx = np.nonzero(hit)[0]
    o = ray_origins[idx]
    d = ray_dirs[idx]
    t0 = t0[idx]
    length = t1[idx] - t0
    n = np.maximum(np.ceil(length / step), 1.0).astype(np.int64)
    h = length / n
    acc = np.zeros(len(idx))
    for k in range(int(n.max())):
        live = n > k
        if not live.all():
            sel = np.nonzero(live)[0]
        else:
            sel = slice(None)
        t = t0[sel] + (k + 0.5) * h[sel]
        os_, ds_ = o[sel], d[sel]
        acc[sel] += _sample(
            data,
            (os_[:, 0] + t * ds_[:, 0] - origin[0]) / spacing[0],
            (os_[:, 1] + t * ds_[:, 1] - origin[1]) / spacing[1],
            (os_[:, 2] + t * ds_[:, 2] - origin[2]) / spacing[2],
        )
    out[idx] = acc * h
