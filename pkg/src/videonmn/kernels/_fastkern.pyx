# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled LSTM recurrence kernels; mirrors kernels/reference.py exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()

NAME = "compiled"

ctypedef fused real:
    float
    double


cdef inline double _sig(double z) noexcept nogil:
    return 1.0 / (1.0 + exp(-z))


def lstm_recur_fwd(real[:, ::1] xp, real[:, ::1] w_hh, bint reverse):
    cdef Py_ssize_t T = xp.shape[0]
    cdef Py_ssize_t H4 = xp.shape[1]
    cdef Py_ssize_t H = H4 // 4
    dtype = np.float32 if real is float else np.float64
    h_arr = np.zeros((T, H), dtype=dtype)
    gates_arr = np.empty((T, H4), dtype=dtype)
    c_arr = np.zeros((T, H), dtype=dtype)
    tanh_c_arr = np.empty((T, H), dtype=dtype)
    cdef real[:, ::1] h = h_arr
    cdef real[:, ::1] gates = gates_arr
    cdef real[:, ::1] c = c_arr
    cdef real[:, ::1] tanh_c = tanh_c_arr
    z_arr = np.empty(H4, dtype=dtype)
    cdef real[::1] z = z_arr
    cdef Py_ssize_t step, t, tp, j, k
    cdef double hk, iv, fv, gv, ov, cv
    cdef bint have_prev
    with nogil:
        for step in range(T):
            t = T - 1 - step if reverse else step
            tp = t + 1 if reverse else t - 1
            have_prev = step > 0
            for j in range(H4):
                z[j] = xp[t, j]
            if have_prev:
                for k in range(H):
                    hk = h[tp, k]
                    if hk != 0.0:
                        for j in range(H4):
                            z[j] += <real> (hk * w_hh[k, j])
            for k in range(H):
                iv = _sig(z[k])
                fv = _sig(z[H + k])
                gv = tanh(z[2 * H + k])
                ov = _sig(z[3 * H + k])
                cv = iv * gv
                if have_prev:
                    cv += fv * c[tp, k]
                gates[t, k] = <real> iv
                gates[t, H + k] = <real> fv
                gates[t, 2 * H + k] = <real> gv
                gates[t, 3 * H + k] = <real> ov
                c[t, k] = <real> cv
                tanh_c[t, k] = <real> tanh(cv)
                h[t, k] = <real> (ov * tanh_c[t, k])
    return h_arr, gates_arr, c_arr, tanh_c_arr


def lstm_recur_bwd(real[:, ::1] w_hh, real[:, ::1] gates, real[:, ::1] c,
                   real[:, ::1] tanh_c, real[:, ::1] h, real[:, ::1] dh,
                   bint reverse):
    cdef Py_ssize_t T = dh.shape[0]
    cdef Py_ssize_t H = dh.shape[1]
    cdef Py_ssize_t H4 = 4 * H
    dtype = np.float32 if real is float else np.float64
    dz_arr = np.zeros((T, H4), dtype=dtype)
    dw_hh_arr = np.zeros((w_hh.shape[0], w_hh.shape[1]), dtype=dtype)
    cdef real[:, ::1] dz = dz_arr
    cdef real[:, ::1] dw_hh = dw_hh_arr
    carry_arr = np.zeros(2 * H, dtype=dtype)
    cdef real[::1] carry = carry_arr  # [dh_carry | dc_carry]
    cdef Py_ssize_t step, t, tp, j, k
    cdef double iv, fv, gv, ov, tc, dh_t, dc, cprev, hprev, dzv, acc
    cdef bint have_prev
    with nogil:
        for step in range(T):
            t = step if reverse else T - 1 - step
            tp = t + 1 if reverse else t - 1
            have_prev = step < T - 1
            for k in range(H):
                iv = gates[t, k]
                fv = gates[t, H + k]
                gv = gates[t, 2 * H + k]
                ov = gates[t, 3 * H + k]
                tc = tanh_c[t, k]
                cprev = c[tp, k] if have_prev else 0.0
                dh_t = dh[t, k] + carry[k]
                dc = dh_t * ov * (1.0 - tc * tc) + carry[H + k]
                dz[t, k] = <real> (dc * gv * iv * (1.0 - iv))
                dz[t, H + k] = <real> (dc * cprev * fv * (1.0 - fv))
                dz[t, 2 * H + k] = <real> (dc * iv * (1.0 - gv * gv))
                dz[t, 3 * H + k] = <real> (dh_t * tc * ov * (1.0 - ov))
                carry[H + k] = <real> (dc * fv)
            if have_prev:
                for k in range(H):
                    hprev = h[tp, k]
                    if hprev != 0.0:
                        for j in range(H4):
                            dw_hh[k, j] += <real> (hprev * dz[t, j])
            for k in range(H):
                acc = 0.0
                for j in range(H4):
                    acc += w_hh[k, j] * dz[t, j]
                carry[k] = <real> acc
    return dz_arr, dw_hh_arr
