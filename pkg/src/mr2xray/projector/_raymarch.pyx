# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ray-marching kernel. Mirrors _raymarch_py.march_rays."""

from libc.math cimport ceil, floor, fabs, INFINITY


cdef inline double _sample(const float[:, :, ::1] data, int nx, int ny, int nz,
                           double fx, double fy, double fz) noexcept nogil:
    cdef int x0, y0, z0, x1, y1, z1
    cdef double wx, wy, wz, c00, c01, c10, c11, c0, c1

    if fx < 0.0:
        fx = 0.0
    elif fx > nx - 1:
        fx = nx - 1
    if fy < 0.0:
        fy = 0.0
    elif fy > ny - 1:
        fy = ny - 1
    if fz < 0.0:
        fz = 0.0
    elif fz > nz - 1:
        fz = nz - 1

    x0 = <int>floor(fx)
    y0 = <int>floor(fy)
    z0 = <int>floor(fz)
    if x0 > nx - 2:
        x0 = nx - 2 if nx > 1 else 0
    if y0 > ny - 2:
        y0 = ny - 2 if ny > 1 else 0
    if z0 > nz - 2:
        z0 = nz - 2 if nz > 1 else 0
    x1 = x0 + 1 if nx > 1 else 0
    y1 = y0 + 1 if ny > 1 else 0
    z1 = z0 + 1 if nz > 1 else 0
    wx = fx - x0
    wy = fy - y0
    wz = fz - z0

    c00 = data[z0, y0, x0] * (1.0 - wx) + data[z0, y0, x1] * wx
    c01 = data[z0, y1, x0] * (1.0 - wx) + data[z0, y1, x1] * wx
    c10 = data[z1, y0, x0] * (1.0 - wx) + data[z1, y0, x1] * wx
    c11 = data[z1, y1, x0] * (1.0 - wx) + data[z1, y1, x1] * wx
    c0 = c00 * (1.0 - wy) + c01 * wy
    c1 = c10 * (1.0 - wy) + c11 * wy
    return c0 * (1.0 - wz) + c1 * wz


def march_rays(const float[:, :, ::1] data,
               const double[::1] origin,
               const double[::1] spacing,
               const double[:, ::1] ray_origins,
               const double[:, ::1] ray_dirs,
               double step,
               double[::1] out):
    """Midpoint-rule line integrals of a trilinearly sampled volume.

    data is indexed [z, y, x]; origin/spacing are (x, y, z) in mm.
    """
    cdef Py_ssize_t n_rays = ray_origins.shape[0]
    cdef int nz = data.shape[0]
    cdef int ny = data.shape[1]
    cdef int nx = data.shape[2]
    cdef double lo[3]
    cdef double hi[3]
    cdef double o[3]
    cdef double d[3]
    cdef double t0, t1, ta, tb, length, h, t, acc
    cdef Py_ssize_t r, k, n
    cdef int a, dims[3]
    cdef bint miss

    dims[0] = nx
    dims[1] = ny
    dims[2] = nz
    for a in range(3):
        lo[a] = origin[a] - 0.5 * spacing[a]
        hi[a] = origin[a] + (dims[a] - 0.5) * spacing[a]

    with nogil:
        for r in range(n_rays):
            t0 = -INFINITY
            t1 = INFINITY
            miss = False
            for a in range(3):
                o[a] = ray_origins[r, a]
                d[a] = ray_dirs[r, a]
                if fabs(d[a]) < 1e-12:
                    if o[a] < lo[a] or o[a] > hi[a]:
                        miss = True
                else:
                    ta = (lo[a] - o[a]) / d[a]
                    tb = (hi[a] - o[a]) / d[a]
                    if ta > tb:
                        ta, tb = tb, ta
                    if ta > t0:
                        t0 = ta
                    if tb < t1:
                        t1 = tb
            if miss or not (t1 > t0):
                out[r] = 0.0
                continue
            length = t1 - t0
            n = <Py_ssize_t>ceil(length / step)
            if n < 1:
                n = 1
            h = length / n
            acc = 0.0
            for k in range(n):
                t = t0 + (k + 0.5) * h
                acc += _sample(data, nx, ny, nz,
                               (o[0] + t * d[0] - origin[0]) / spacing[0],
                               (o[1] + t * d[1] - origin[1]) / spacing[1],
                               (o[2] + t * d[2] - origin[2]) / spacing[2])
            out[r] = acc * h
