"""Pure-numpy recurrence kernels (fallback backend).

Only the sequential part of the LSTM lives here; the big input/output
GEMMs are done with BLAS by the caller. Gate packing is [i | f | g | o].
The compiled backend in `_fastkern.pyx` implements the same two functions.
"""

import numpy as np

NAME = "reference"


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm_recur_fwd(xp, w_hh, reverse):
    """Run the LSTM recurrence.

    xp: (T, 4H) input projections (x @ w_ih + b); w_hh: (H, 4H).
    Returns h (T, H), gates (T, 4H) post-activation, c (T, H), tanh_c (T, H),
    all indexed in array order regardless of direction.
    """
    T, H4 = xp.shape
    H = H4 // 4
    h = np.zeros((T, H), dtype=xp.dtype)
    gates = np.empty((T, H4), dtype=xp.dtype)
    c = np.zeros((T, H), dtype=xp.dtype)
    tanh_c = np.empty((T, H), dtype=xp.dtype)
    h_prev = np.zeros(H, dtype=xp.dtype)
    c_prev = np.zeros(H, dtype=xp.dtype)
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        z = xp[t] + h_prev @ w_hh
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H : 2 * H])
        g = np.tanh(z[2 * H : 3 * H])
        o = _sigmoid(z[3 * H :])
        c_t = f * c_prev + i * g
        tc = np.tanh(c_t)
        h_t = o * tc
        gates[t, :H] = i
        gates[t, H : 2 * H] = f
        gates[t, 2 * H : 3 * H] = g
        gates[t, 3 * H :] = o
        c[t] = c_t
        tanh_c[t] = tc
        h[t] = h_t
        h_prev, c_prev = h_t, c_t
    return h, gates, c, tanh_c


def lstm_recur_bwd(w_hh, gates, c, tanh_c, h, dh, reverse):
    """Backward pass through the recurrence.

    Returns dz (T, 4H) pre-activation gate gradients and dw_hh (H, 4H).
    """
    T, H = dh.shape
    dz = np.zeros((T, 4 * H), dtype=dh.dtype)
    dw_hh = np.zeros_like(w_hh)
    dh_carry = np.zeros(H, dtype=dh.dtype)
    dc_carry = np.zeros(H, dtype=dh.dtype)
    zeros = np.zeros(H, dtype=dh.dtype)
    order = range(T) if reverse else range(T - 1, -1, -1)
    first = T - 1 if reverse else 0
    for t in order:
        if reverse:
            c_prev = c[t + 1] if t < T - 1 else zeros
            h_prev = h[t + 1] if t < T - 1 else zeros
        else:
            c_prev = c[t - 1] if t > 0 else zeros
            h_prev = h[t - 1] if t > 0 else zeros
        i = gates[t, :H]
        f = gates[t, H : 2 * H]
        g = gates[t, 2 * H : 3 * H]
        o = gates[t, 3 * H :]
        tc = tanh_c[t]
        dh_t = dh[t] + dh_carry
        dc = dh_t * o * (1.0 - tc * tc) + dc_carry
        dz_t = dz[t]
        dz_t[:H] = dc * g * i * (1.0 - i)
        dz_t[H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz_t[2 * H : 3 * H] = dc * i * (1.0 - g * g)
        dz_t[3 * H :] = dh_t * tc * o * (1.0 - o)
        dc_carry = dc * f
        if t != first:
            dw_hh += np.outer(h_prev, dz_t)
        dh_carry = dz_t @ w_hh.T
    return dz, dw_hh
