"""CG coefficient tensor, exact and CP-approximate tensor products, and the
path-weight-sharing layer.

Feature vectors for the full product use the multiplicity-1 layout
``0x..+1x..`` up to degree ``L``: degree ``l`` starts at offset ``l**2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import so3
from .errors import ArgumentError
from .so3 import Path
from .tensor3 import CPFactors, Tensor3

MAX_L = 8


@dataclass(frozen=True)
class PathBlock:
    path: Path
    offsets: tuple[int, int, int]  # (out, in1, in2) start positions
    block: np.ndarray  # (2l3+1, 2l1+1, 2l2+1)


@dataclass(frozen=True)
class CGTensor:
    L: int
    tensor: Tensor3
    paths: tuple[PathBlock, ...]
    clamp_output: bool = True

    @property
    def d(self) -> int:
        return (self.L + 1) ** 2

    @cached_property
    def dense(self) -> np.ndarray:
        return self.tensor.dense()

    def astype(self, dtype) -> "CGTensor":
        """Copy with path blocks cast to ``dtype`` (for 32-bit benchmarks)."""
        blocks = tuple(PathBlock(pb.path, pb.offsets, pb.block.astype(dtype)) for pb in self.paths)
        return CGTensor(self.L, self.tensor, blocks, self.clamp_output)

    def path_norms(self) -> dict[Path, float]:
        return {pb.path: float(np.sum(pb.block ** 2)) for pb in self.paths}

    def write_text(self, fh) -> None:
        """Sparse text export: ``L d nnz`` then ``k i j value`` per entry."""
        T = self.tensor
        fh.write(f"{self.L} {self.d} {T.nnz}\n")
        order = np.lexsort((T.coords[:, 2], T.coords[:, 1], T.coords[:, 0]))
        for (k, i, j), v in zip(T.coords[order], T.values[order]):
            fh.write(f"{k} {i} {j} {v:.17g}\n")


def read_cg_text(fh) -> tuple[int, Tensor3]:
    L, d, nnz = (int(t) for t in fh.readline().split())
    rows = [line.split() for line in fh if line.strip()]
    if len(rows) != nnz:
        raise ArgumentError(f"expected {nnz} entries, found {len(rows)}")
    coords = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows], dtype=np.int64).reshape(-1, 3)
    values = np.array([float(r[3]) for r in rows])
    return L, Tensor3((d, d, d), coords=coords, values=values)


def build_cg_tensor(L: int, clamp_output: bool = True) -> CGTensor:
    """Concatenate the real CG blocks of every admissible path up to degree ``L``."""
    if not isinstance(L, (int, np.integer)) or not 0 <= L <= MAX_L:
        raise ArgumentError(f"L must be an integer in [0, {MAX_L}], got {L!r}")
    L = int(L)
    d = (L + 1) ** 2
    blocks, coords, values = [], [], []
    for p in so3.enumerate_paths(L, clamp_output):
        blk = so3.cg_block(*p)
        offs = (p.l3 ** 2, p.l1 ** 2, p.l2 ** 2)
        blocks.append(PathBlock(p, offs, blk))
        nz = np.argwhere(blk != 0.0)
        coords.append(nz + np.array(offs))
        values.append(blk[tuple(nz.T)])
    # paths sharing (l1, l2) but differing in l3 never overlap, so coordinates are unique
    T = Tensor3((d, d, d), coords=np.concatenate(coords), values=np.concatenate(values))
    return CGTensor(L, T, tuple(blocks), clamp_output)


def _check_vec(v, n, name):
    v = np.asarray(v)
    if not np.issubdtype(v.dtype, np.floating):
        v = v.astype(float)
    if v.shape != (n,):
        raise ArgumentError(f"{name} must have shape ({n},), got {v.shape}")
    return v


def exact_tp(M: CGTensor, x, y) -> np.ndarray:
    """Path-by-path CG product ``z_k = sum_ij M_kij x_i y_j``."""
    x = _check_vec(x, M.d, "x")
    y = _check_vec(y, M.d, "y")
    z = np.zeros(M.d, dtype=np.result_type(x, y))
    for pb in M.paths:
        l1, l2, l3 = pb.path
        o3, o1, o2 = pb.offsets
        xs = x[o1:o1 + 2 * l1 + 1]
        ys = y[o2:o2 + 2 * l2 + 1]
        z[o3:o3 + 2 * l3 + 1] += pb.block.reshape(2 * l3 + 1, -1) @ np.outer(xs, ys).ravel()
    return z


def dense_tp(Md: np.ndarray, x, y) -> np.ndarray:
    """Full dense contraction, Theta(d^3). Kept for the complexity benchmark."""
    d3, d1, d2 = Md.shape
    return Md.reshape(d3, d1 * d2) @ np.outer(x, y).ravel()


def dense_tp_batched(Md: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    d3, d1, d2 = Md.shape
    XY = (X[:, :, None] * Y[:, None, :]).reshape(X.shape[0], d1 * d2)
    return XY @ Md.reshape(d3, d1 * d2).T


def apply_cp(factors: CPFactors, x, y) -> np.ndarray:
    """``A (B^T x * C^T y)``: O(R (d1 + d2 + d3))."""
    d3, d1, d2 = factors.dims
    x = _check_vec(x, d1, "x")
    y = _check_vec(y, d2, "y")
    return factors.A @ ((factors.B.T @ x) * (factors.C.T @ y))


def apply_cp_batched(factors: CPFactors, X, Y) -> np.ndarray:
    """Row-wise :func:`apply_cp` over the leading (multiplicity) axis."""
    d3, d1, d2 = factors.dims
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != d1 or Y.shape[1] != d2 or X.shape[0] != Y.shape[0]:
        raise ArgumentError(f"expected X (c, {d1}) and Y (c, {d2}), got {X.shape} and {Y.shape}")
    return ((X @ factors.B) * (Y @ factors.C)) @ factors.A.T


def apply_cp_multiorder(A, Bs: Sequence[np.ndarray], xs: Sequence[np.ndarray]) -> np.ndarray:
    """``A (B1^T x1 * ... * BN^T xN)`` for an (N+1)-way CP model."""
    if len(Bs) < 2 or len(Bs) != len(xs):
        raise ArgumentError("need N >= 2 factor matrices and as many inputs")
    A = np.asarray(A, dtype=float)
    R = A.shape[1]
    h = np.ones(R)
    for B, x in zip(Bs, xs):
        B = np.asarray(B, dtype=float)
        x = np.asarray(x, dtype=float)
        if B.ndim != 2 or B.shape[1] != R or x.shape != (B.shape[0],):
            raise ArgumentError(f"factor {B.shape} and input {x.shape} do not match rank {R}")
        h = h * (B.T @ x)
    return A @ h


class SharedWeightTP:
    """Channel-wise CP tensor product followed by one c x c mix shared by all paths.

    ``forward(X, Y) = W @ apply_cp_batched(factors, X, Y)`` for X, Y of shape
    ``(c, (L+1)**2)``.  W acts on the multiplicity axis only.
    """

    def __init__(self, factors: CPFactors, W):
        W = np.asarray(W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ArgumentError(f"W must be square, got shape {W.shape}")
        if not np.isfinite(W).all():
            raise ArgumentError("W must be finite")
        self.factors = factors
        self.W = W

    @property
    def c(self) -> int:
        return self.W.shape[0]

    def parameter_count(self) -> int:
        return self.W.size

    def __call__(self, X, Y) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] != self.c:
            raise ArgumentError(f"expected {self.c} channels, got shape {X.shape}")
        return self.W @ apply_cp_batched(self.factors, X, Y)


def shared_weight_tp(factors: CPFactors, W, X, Y) -> np.ndarray:
    return SharedWeightTP(factors, W)(X, Y)


def per_path_parameter_count(c: int, L: int) -> int:
    """Weights of an unshared layer: one c x c matrix per path."""
    return c * c * len(so3.enumerate_paths(L))
