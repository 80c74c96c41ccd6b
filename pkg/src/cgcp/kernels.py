"""Compiled loop kernels used only for complexity-slope timing.

Plain loops have a flat cost per multiply-add, so their runtime follows the
operation count; BLAS-backed numpy calls do not at these sizes.
"""

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def dense_contract(Md, X, Y, Z):
    """Z[n, k] = sum_ij Md[k, i, j] X[n, i] Y[n, j]; Theta(N d3 d1 d2)."""
    N = X.shape[0]
    d3, d1, d2 = Md.shape
    for n in range(N):
        for k in range(d3):
            acc = 0.0
            for i in range(d1):
                s = 0.0
                for j in range(d2):
                    s += Md[k, i, j] * Y[n, j]
                acc += X[n, i] * s
            Z[n, k] = acc


@numba.njit(cache=True, nogil=True)
def cp_contract(A, B, C, X, Y, Z):
    """Z[n] = A (B^T X[n] * C^T Y[n]); Theta(N R (d1 + d2 + d3))."""
    N = X.shape[0]
    d3, R = A.shape
    d1 = B.shape[0]
    d2 = C.shape[0]
    h = np.empty(R, dtype=A.dtype)
    for n in range(N):
        for r in range(R):
            u = 0.0
            for i in range(d1):
                u += B[i, r] * X[n, i]
            v = 0.0
            for j in range(d2):
                v += C[j, r] * Y[n, j]
            h[r] = u * v
        for k in range(d3):
            acc = 0.0
            for r in range(R):
                acc += A[k, r] * h[r]
            Z[n, k] = acc
