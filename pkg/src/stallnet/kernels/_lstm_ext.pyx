# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled LSTM sequence kernels.

Same contract and array layout as ``_lstm_py``; the time loop, the fused gate
nonlinearities and the BLAS calls all run without Python-level overhead.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sigmoid(double z) nogil:
    cdef double ez
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    ez = exp(z)
    return ez / (1.0 + ez)


cdef void _gemm(char ta, char tb, int m, int n, int k, double alpha,
                double *A, int lda, double *B, int ldb, double beta,
                double *C, int ldc) noexcept nogil:
    # row-major C = alpha op(A) op(B) + beta C via column-major dgemm on transposes
    dgemm(&tb, &ta, &n, &m, &k, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


def lstm_seq_forward(X, W, U, b):
    cdef cnp.ndarray[double, ndim=3, mode="c"] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] Wc = np.ascontiguousarray(W, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] Uc = np.ascontiguousarray(U, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] bc = np.ascontiguousarray(b, dtype=np.float64)
    cdef int T = Xc.shape[0]
    cdef int B = Xc.shape[1]
    cdef int n_in = Xc.shape[2]
    cdef int h = Uc.shape[1]
    cdef int h4 = 4 * h
    cdef cnp.ndarray[double, ndim=3, mode="c"] G = np.empty((T, B, h4))
    cdef cnp.ndarray[double, ndim=3, mode="c"] H = np.empty((T, B, h))
    cdef cnp.ndarray[double, ndim=3, mode="c"] C = np.empty((T, B, h))
    cdef double *g = &G[0, 0, 0]
    cdef double *hp = &H[0, 0, 0]
    cdef double *cp = &C[0, 0, 0]
    cdef double *bp = &bc[0]
    cdef int t, r, j
    cdef double *zrow
    cdef double *hrow
    cdef double *crow
    cdef double *cprev
    cdef double iv, fv, ov, gv, cv

    with nogil:
        _gemm(b'N', b'T', T * B, h4, n_in, 1.0, &Xc[0, 0, 0], n_in,
              &Wc[0, 0], n_in, 0.0, g, h4)
        for t in range(T):
            if t > 0:
                _gemm(b'N', b'T', B, h4, h, 1.0, hp + (t - 1) * B * h, h,
                      &Uc[0, 0], h, 1.0, g + t * B * h4, h4)
            for r in range(B):
                zrow = g + (t * B + r) * h4
                hrow = hp + (t * B + r) * h
                crow = cp + (t * B + r) * h
                cprev = cp + ((t - 1) * B + r) * h
                for j in range(h):
                    iv = _sigmoid(zrow[j] + bp[j])
                    fv = _sigmoid(zrow[h + j] + bp[h + j])
                    ov = _sigmoid(zrow[2 * h + j] + bp[2 * h + j])
                    gv = tanh(zrow[3 * h + j] + bp[3 * h + j])
                    zrow[j] = iv
                    zrow[h + j] = fv
                    zrow[2 * h + j] = ov
                    zrow[3 * h + j] = gv
                    cv = iv * gv
                    if t > 0:
                        cv = cv + fv * cprev[j]
                    crow[j] = cv
                    hrow[j] = ov * tanh(cv)
    return H, C, G


def lstm_seq_backward(X, W, U, H, C, G, dH):
    cdef cnp.ndarray[double, ndim=3, mode="c"] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] Wc = np.ascontiguousarray(W, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] Uc = np.ascontiguousarray(U, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] Hc = np.ascontiguousarray(H, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] Cc = np.ascontiguousarray(C, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] Gc = np.ascontiguousarray(G, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] dHc = np.ascontiguousarray(dH, dtype=np.float64)
    cdef int T = Xc.shape[0]
    cdef int B = Xc.shape[1]
    cdef int n_in = Xc.shape[2]
    cdef int h = Uc.shape[1]
    cdef int h4 = 4 * h
    cdef cnp.ndarray[double, ndim=3, mode="c"] dZ = np.empty((T, B, h4))
    cdef cnp.ndarray[double, ndim=2, mode="c"] dU = np.zeros((h4, h))
    cdef cnp.ndarray[double, ndim=2, mode="c"] dW = np.empty((h4, n_in))
    cdef cnp.ndarray[double, ndim=3, mode="c"] dX = np.empty((T, B, n_in))
    cdef cnp.ndarray[double, ndim=1, mode="c"] db = np.zeros(h4)
    cdef cnp.ndarray[double, ndim=2, mode="c"] dh_next = np.zeros((B, h))
    cdef cnp.ndarray[double, ndim=2, mode="c"] dc_next = np.zeros((B, h))
    cdef double *dz = &dZ[0, 0, 0]
    cdef double *gp = &Gc[0, 0, 0]
    cdef double *cp = &Cc[0, 0, 0]
    cdef double *hp = &Hc[0, 0, 0]
    cdef double *dhp = &dHc[0, 0, 0]
    cdef double *dhn = &dh_next[0, 0]
    cdef double *dcn = &dc_next[0, 0]
    cdef double *dbp = &db[0]
    cdef int t, r, j, k
    cdef double *grow
    cdef double *dzrow
    cdef double iv, fv, ov, gv, tc, dh, dc, cprev

    with nogil:
        for t in range(T - 1, -1, -1):
            for r in range(B):
                grow = gp + (t * B + r) * h4
                dzrow = dz + (t * B + r) * h4
                for j in range(h):
                    iv = grow[j]
                    fv = grow[h + j]
                    ov = grow[2 * h + j]
                    gv = grow[3 * h + j]
                    tc = tanh(cp[(t * B + r) * h + j])
                    dh = dhp[(t * B + r) * h + j] + dhn[r * h + j]
                    dc = dcn[r * h + j] + dh * ov * (1.0 - tc * tc)
                    if t > 0:
                        cprev = cp[((t - 1) * B + r) * h + j]
                    else:
                        cprev = 0.0
                    dzrow[j] = dc * gv * iv * (1.0 - iv)
                    dzrow[h + j] = dc * cprev * fv * (1.0 - fv)
                    dzrow[2 * h + j] = dh * tc * ov * (1.0 - ov)
                    dzrow[3 * h + j] = dc * iv * (1.0 - gv * gv)
                    dcn[r * h + j] = dc * fv
            _gemm(b'N', b'N', B, h, h4, 1.0, dz + t * B * h4, h4,
                  &Uc[0, 0], h, 0.0, dhn, h)
            if t > 0:
                _gemm(b'T', b'N', h4, h, B, 1.0, dz + t * B * h4, h4,
                      hp + (t - 1) * B * h, h, 1.0, &dU[0, 0], h)
        _gemm(b'T', b'N', h4, n_in, T * B, 1.0, dz, h4,
              &Xc[0, 0, 0], n_in, 0.0, &dW[0, 0], n_in)
        _gemm(b'N', b'N', T * B, n_in, h4, 1.0, dz, h4,
              &Wc[0, 0], n_in, 0.0, &dX[0, 0, 0], n_in)
        for k in range(T * B):
            for j in range(h4):
                dbp[j] += dz[k * h4 + j]
    return dX, dW, dU, db
