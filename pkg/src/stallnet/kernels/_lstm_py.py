"""Pure numpy LSTM sequence kernels (fallback when the compiled core is absent).

Array layout shared with the compiled kernels:

    X  (T, B, n_in)   input sequence, time-major
    W  (4h, n_in)     input weights, gate blocks ordered i, f, o, g
    U  (4h, h)        recurrent weights, same gate order
    b  (4h,)          biases
    H, C  (T, B, h)   hidden and cell states per step
    G  (T, B, 4h)     post-activation gate values per step

Initial hidden and cell states are zero.
"""

import numpy as np


def sigmoid(z):
    # exp of a non-positive argument only, so no overflow for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_seq_forward(X, W, U, b):
    T, B, _ = X.shape
    h = U.shape[1]
    Z = (X.reshape(T * B, -1) @ W.T).reshape(T, B, 4 * h)
    Z += b
    H = np.zeros((T, B, h))
    C = np.zeros((T, B, h))
    G = np.empty((T, B, 4 * h))
    h_prev = np.zeros((B, h))
    c_prev = np.zeros((B, h))
    for t in range(T):
        z = Z[t] + h_prev @ U.T
        G[t, :, : 3 * h] = sigmoid(z[:, : 3 * h])
        G[t, :, 3 * h :] = np.tanh(z[:, 3 * h :])
        i, f, o, g = G[t, :, :h], G[t, :, h : 2 * h], G[t, :, 2 * h : 3 * h], G[t, :, 3 * h :]
        C[t] = f * c_prev + i * g
        H[t] = o * np.tanh(C[t])
        h_prev, c_prev = H[t], C[t]
    return H, C, G


def lstm_seq_backward(X, W, U, H, C, G, dH):
    """Backpropagate ``dH`` (loss gradient w.r.t. every H[t]) through time.

    Returns ``(dX, dW, dU, db)``.
    """
    T, B, _ = X.shape
    h = U.shape[1]
    dZ = np.empty((T, B, 4 * h))
    dU = np.zeros_like(U)
    dh_next = np.zeros((B, h))
    dc_next = np.zeros((B, h))
    for t in range(T - 1, -1, -1):
        i, f, o, g = G[t, :, :h], G[t, :, h : 2 * h], G[t, :, 2 * h : 3 * h], G[t, :, 3 * h :]
        tc = np.tanh(C[t])
        dh = dH[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        c_prev = C[t - 1] if t > 0 else np.zeros((B, h))
        dZ[t, :, :h] = dc * g * i * (1.0 - i)
        dZ[t, :, h : 2 * h] = dc * c_prev * f * (1.0 - f)
        dZ[t, :, 2 * h : 3 * h] = dh * tc * o * (1.0 - o)
        dZ[t, :, 3 * h :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = dZ[t] @ U
        if t > 0:
            dU += dZ[t].T @ H[t - 1]
    dZ2 = dZ.reshape(T * B, 4 * h)
    dW = dZ2.T @ X.reshape(T * B, -1)
    dX = (dZ2 @ W).reshape(X.shape)
    db = dZ2.sum(axis=0)
    return dX, dW, dU, db
