# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched constraint evaluation for the planar arm.

Evaluates the full signed constraint vector (position, velocity,
acceleration, jerk, torque, end-effector speed, self-collision
clearance) for many (q, dq, ddq, dddq) states in one C loop.  Mirrors
the numpy reference implementation to float64 round-off.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, cos, fabs, sin, sqrt
from libc.stdlib cimport free, malloc

cnp.import_array()


cdef inline double _clip01(double x) nogil:
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


cdef inline double _seg_dist(double ax, double az, double bx, double bz,
                             double cx, double cz, double dx, double dz) nogil:
    cdef double d1x = bx - ax
    cdef double d1z = bz - az
    cdef double d2x = dx - cx
    cdef double d2z = dz - cz
    cdef double rx = ax - cx
    cdef double rz = az - cz
    cdef double a = d1x * d1x + d1z * d1z
    cdef double e = d2x * d2x + d2z * d2z
    cdef double f = d2x * rx + d2z * rz
    cdef double cc = d1x * rx + d1z * rz
    cdef double b = d1x * d2x + d1z * d2z
    cdef double denom = a * e - b * b
    cdef double s, t, t_cl, px, pz
    if denom > 1e-12:
        s = _clip01((b * f - cc * e) / (denom if denom > 1e-12 else 1e-12))
    else:
        s = 0.0
    t = (b * s + f) / e
    t_cl = _clip01(t)
    if t < 0.0:
        s = _clip01(-cc / a)
    elif t > 1.0:
        s = _clip01((b - cc) / a)
    px = ax + d1x * s - (cx + d2x * t_cl)
    pz = az + d1z * s - (cz + d2z * t_cl)
    return sqrt(px * px + pz * pz + 1e-300)


def constraint_batch_c(
    double[:, :] q,
    double[:, :] dq,
    double[:, :] ddq,
    double[:, :] dddq,
    double[:] lengths,
    double[:] masses,
    double[:] coms,
    double[:] inertias,
    double gravity,
    double[:] q_min,
    double[:] q_max,
    double[:] dq_max,
    double[:] ddq_max,
    double[:] dddq_max,
    double[:] tau_max,
    double v_ee_max,
    double min_clear,
    long[:, :] pairs,
    double margin_frac,
    double clearance_margin,
):
    """Constraint values (N, 6n+2) for N flattened states of an n-link arm."""
    cdef Py_ssize_t N = q.shape[0]
    cdef Py_ssize_t n = q.shape[1]
    cdef Py_ssize_t P = pairs.shape[0]
    cdef Py_ssize_t k_dim = 6 * n + 2
    out_arr = np.empty((N, k_dim), dtype=np.float64)
    cdef double[:, :] out = out_arr

    cdef double *theta = <double *> malloc(n * sizeof(double))
    cdef double *jx = <double *> malloc((n + 1) * sizeof(double))
    cdef double *jz = <double *> malloc((n + 1) * sizeof(double))
    cdef double *cx = <double *> malloc(n * sizeof(double))
    cdef double *cz = <double *> malloc(n * sizeof(double))
    cdef double *Dx = <double *> malloc(n * n * sizeof(double))
    cdef double *Dz = <double *> malloc(n * n * sizeof(double))
    cdef double *M = <double *> malloc(n * n * sizeof(double))
    cdef double *dM = <double *> malloc(n * n * n * sizeof(double))
    cdef double *cvec = <double *> malloc(n * sizeof(double))
    cdef double *hvec = <double *> malloc(n * sizeof(double))
    cdef double *tau = <double *> malloc(n * sizeof(double))

    cdef Py_ssize_t s_idx, i, j, k, p, a_l, b_l
    cdef double th, acc, g_x, g_z, ddx_i, ddz_i, ddx_j, ddz_j
    cdef double vx, vz, speed, dmin, d, delta, mf = margin_frac
    cdef Py_ssize_t off_vel = 2 * n
    cdef Py_ssize_t off_acc = 3 * n
    cdef Py_ssize_t off_jerk = 4 * n
    cdef Py_ssize_t off_tau = 5 * n

    try:
        for s_idx in range(N):
            # chain geometry
            th = 0.0
            jx[0] = 0.0
            jz[0] = 0.0
            for i in range(n):
                th += q[s_idx, i]
                theta[i] = th
                jx[i + 1] = jx[i] + lengths[i] * cos(th)
                jz[i + 1] = jz[i] + lengths[i] * sin(th)
                cx[i] = jx[i] + coms[i] * cos(th)
                cz[i] = jz[i] + coms[i] * sin(th)
            for i in range(n):
                for p in range(n):
                    Dx[i * n + p] = cx[p] - jx[i]
                    Dz[i * n + p] = cz[p] - jz[i]
            # mass matrix and gravity
            for i in range(n):
                acc = 0.0
                for p in range(i, n):
                    acc += masses[p] * Dx[i * n + p]
                hvec[i] = gravity * acc
                for j in range(i, n):
                    acc = 0.0
                    for p in range(j, n):
                        acc += masses[p] * (
                            Dx[i * n + p] * Dx[j * n + p] + Dz[i * n + p] * Dz[j * n + p]
                        ) + inertias[p]
                    M[i * n + j] = acc
                    M[j * n + i] = acc
            # dM[i][j][k] with analytic pivot/COM Jacobians
            for i in range(n):
                for j in range(n):
                    for k in range(n):
                        acc = 0.0
                        for p in range((j if j > i else i), n):
                            # dDx[i,p]/dq_k and dDx[j,p]/dq_k
                            ddx_i = (-Dz[k * n + p] if p >= k else 0.0) + (
                                jz[i] - jz[k] if k < i else 0.0
                            )
                            ddz_i = (Dx[k * n + p] if p >= k else 0.0) - (
                                jx[i] - jx[k] if k < i else 0.0
                            )
                            ddx_j = (-Dz[k * n + p] if p >= k else 0.0) + (
                                jz[j] - jz[k] if k < j else 0.0
                            )
                            ddz_j = (Dx[k * n + p] if p >= k else 0.0) - (
                                jx[j] - jx[k] if k < j else 0.0
                            )
                            acc += masses[p] * (
                                ddx_i * Dx[j * n + p]
                                + Dx[i * n + p] * ddx_j
                                + ddz_i * Dz[j * n + p]
                                + Dz[i * n + p] * ddz_j
                            )
                        dM[(i * n + j) * n + k] = acc
            # Coriolis and torque
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    for k in range(n):
                        acc += (
                            dM[(i * n + j) * n + k] - 0.5 * dM[(j * n + k) * n + i]
                        ) * dq[s_idx, j] * dq[s_idx, k]
                cvec[i] = acc
            for i in range(n):
                acc = cvec[i] + hvec[i]
                for j in range(n):
                    acc += M[i * n + j] * ddq[s_idx, j]
                tau[i] = acc
            # end-effector speed
            vx = 0.0
            vz = 0.0
            for k in range(n):
                vx += -(jz[n] - jz[k]) * dq[s_idx, k]
                vz += (jx[n] - jx[k]) * dq[s_idx, k]
            speed = sqrt(vx * vx + vz * vz + 1e-18)
            # minimum pair clearance
            dmin = 1e300
            for p in range(P):
                a_l = pairs[p, 0]
                b_l = pairs[p, 1]
                d = _seg_dist(
                    jx[a_l], jz[a_l], jx[a_l + 1], jz[a_l + 1],
                    jx[b_l], jz[b_l], jx[b_l + 1], jz[b_l + 1],
                )
                if d < dmin:
                    dmin = d
            # assemble the signed constraint vector
            for i in range(n):
                delta = mf * (q_max[i] - q_min[i]) * 0.5
                out[s_idx, i] = (q_min[i] + delta) - q[s_idx, i]
                out[s_idx, n + i] = q[s_idx, i] - (q_max[i] - delta)
                out[s_idx, off_vel + i] = fabs(dq[s_idx, i]) - dq_max[i] * (1.0 - mf)
                out[s_idx, off_acc + i] = fabs(ddq[s_idx, i]) - ddq_max[i] * (1.0 - mf)
                out[s_idx, off_jerk + i] = fabs(dddq[s_idx, i]) - dddq_max[i] * (1.0 - mf)
                out[s_idx, off_tau + i] = fabs(tau[i]) - tau_max[i] * (1.0 - mf)
            out[s_idx, 6 * n] = speed - v_ee_max * (1.0 - mf)
            if P > 0:
                out[s_idx, 6 * n + 1] = (min_clear + clearance_margin) - dmin
            else:
                out[s_idx, 6 * n + 1] = -INFINITY
    finally:
        free(theta)
        free(jx)
        free(jz)
        free(cx)
        free(cz)
        free(Dx)
        free(Dz)
        free(M)
        free(dM)
        free(cvec)
        free(hvec)
        free(tau)
    return out_arr
