"""NumPy implementation of the layer kernels.

This is the fallback backend used when the compiled extension is not
available. Both backends implement the same contracts on contiguous
float64 arrays:

  dense:  z = W @ x + b                      W is (out_len, in_len)
  conv1d: z[o] = b + sum_j k[j] * xp[o*s+j]  xp = x zero-padded by p each side
  transposed conv1d: adjoint of conv1d; scatter x through the kernel into a
      buffer of length (in_len-1)*s + K, slice [p : p+out_len], add bias.

Gradient routines return (dk_or_dW, db, dx).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def dense_forward(x, w, b):
    return w @ x + b


def dense_backward(x, w, dz):
    dw = np.outer(dz, x)
    db = dz.copy()
    dx = w.T @ dz
    return dw, db, dx


def _pad(x, p):
    if p == 0:
        return x
    xp = np.zeros(x.shape[0] + 2 * p, dtype=np.float64)
    xp[p : p + x.shape[0]] = x
    return xp


def conv1d_forward(x, k, b, stride, padding, out_len):
    xp = _pad(x, padding)
    windows = sliding_window_view(xp, k.shape[0])[::stride][:out_len]
    return windows @ k + b[0]


def conv1d_backward(x, k, dz, stride, padding):
    ksz = k.shape[0]
    out_len = dz.shape[0]
    xp = _pad(x, padding)
    dxp = np.zeros_like(xp)
    dk = np.empty(ksz, dtype=np.float64)
    span = out_len * stride
    for j in range(ksz):
        tap = xp[j : j + span : stride][:out_len]
        dk[j] = dz @ tap
        dxp[j : j + span : stride][:out_len] += dz * k[j]
    db = np.array([dz.sum()])
    dx = dxp[padding : padding + x.shape[0]] if padding else dxp
    return dk, db, dx.copy() if padding else dx


def tconv1d_forward(x, k, b, stride, padding, out_len):
    ksz = k.shape[0]
    in_len = x.shape[0]
    full_len = (in_len - 1) * stride + ksz
    # window may overhang the scatter extent by < stride; overhang is zero-filled
    full = np.zeros(max(full_len, padding + out_len), dtype=np.float64)
    span = in_len * stride
    for j in range(ksz):
        full[j : j + span : stride][:in_len] += k[j] * x
    return full[padding : padding + out_len] + b[0]


def tconv1d_backward(x, k, dz, stride, padding):
    ksz = k.shape[0]
    in_len = x.shape[0]
    full_len = (in_len - 1) * stride + ksz
    dfull = np.zeros(max(full_len, padding + dz.shape[0]), dtype=np.float64)
    dfull[padding : padding + dz.shape[0]] = dz
    dk = np.empty(ksz, dtype=np.float64)
    dx = np.zeros(in_len, dtype=np.float64)
    span = in_len * stride
    for j in range(ksz):
        tap = dfull[j : j + span : stride][:in_len]
        dk[j] = x @ tap
        dx += k[j] * tap
    db = np.array([dz.sum()])
    return dk, db, dx
