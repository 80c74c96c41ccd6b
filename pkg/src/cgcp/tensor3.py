"""Three-way tensors, unfoldings, singular-value tails and CP-ALS.

Index order is ``(k, i, j)`` with dims ``(d3, d1, d2)``: output first, then
the two inputs.  A CP model ``M[k, i, j] ~= sum_r A[k, r] B[i, r] C[j, r]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArgumentError, NumericalError

DENSE_CAP = 2 ** 26
RIDGE = 1e-12
CPF_VERSION = 1


class Tensor3:
    """Dense or sparse (coordinate list) three-way tensor."""

    def __init__(self, dims, *, dense=None, coords=None, values=None):
        self.dims = tuple(int(d) for d in dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ArgumentError(f"dims must be three positive integers, got {dims}")
        if (dense is None) == (coords is None):
            raise ArgumentError("give exactly one of dense= or coords=/values=")
        self._dense = None
        self.coords = None
        self.values = None
        if dense is not None:
            dense = np.asarray(dense, dtype=float)
            if dense.shape != self.dims:
                raise ArgumentError(f"dense shape {dense.shape} != dims {self.dims}")
            self._dense = dense
        else:
            coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
            values = np.asarray(values, dtype=float).reshape(-1)
            if len(coords) != len(values):
                raise ArgumentError("coords and values differ in length")
            keep = values != 0.0
            coords, values = coords[keep], values[keep]
            if len(coords) and ((coords < 0).any() or (coords >= self.dims).any()):
                raise ArgumentError("sparse coordinate out of range")
            if len(np.unique(coords, axis=0)) != len(coords):
                raise ArgumentError("duplicate sparse coordinates")
            self.coords, self.values = coords, values

    @classmethod
    def from_dense(cls, array) -> "Tensor3":
        array = np.asarray(array, dtype=float)
        return cls(array.shape, dense=array)

    @property
    def is_sparse(self) -> bool:
        return self.coords is not None

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    @property
    def nnz(self) -> int:
        if self.is_sparse:
            return len(self.values)
        return int(np.count_nonzero(self._dense))

    def dense(self) -> np.ndarray:
        if self._dense is None:
            if self.size > DENSE_CAP:
                raise ArgumentError(f"tensor with {self.size} entries exceeds the dense cap {DENSE_CAP}")
            out = np.zeros(self.dims)
            out[tuple(self.coords.T)] = self.values
            self._dense = out
        return self._dense

    def to_sparse(self) -> "Tensor3":
        if self.is_sparse:
            return self
        d = self.dense()
        idx = np.argwhere(d != 0.0)
        return Tensor3(self.dims, coords=idx, values=d[tuple(idx.T)])

    def norm(self) -> float:
        if self.is_sparse:
            return float(np.linalg.norm(self.values))
        return float(np.linalg.norm(self._dense))


def _as_dense(T) -> np.ndarray:
    if isinstance(T, Tensor3):
        return T.dense()
    T = np.asarray(T, dtype=float)
    if T.ndim != 3:
        raise ArgumentError(f"expected a three-way tensor, got shape {T.shape}")
    return T


def matricize(T, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding (1, 2 or 3), Kolda-Bader ordering.

    Row index is the mode index; the remaining indices form the column index
    with the earlier one varying fastest.
    """
    if mode not in (1, 2, 3):
        raise ArgumentError(f"mode must be 1, 2 or 3, got {mode}")
    X = _as_dense(T)
    n = mode - 1
    return np.reshape(np.moveaxis(X, n, 0), (X.shape[n], -1), order="F")


def mode_singular_values(T) -> list[np.ndarray]:
    return [np.linalg.svd(matricize(T, n), compute_uv=False) for n in (1, 2, 3)]


def singular_tail(T, rank: int) -> float:
    """sqrt of the summed squared singular values beyond ``rank`` over all three unfoldings."""
    if rank < 0:
        raise ArgumentError("truncation rank must be non-negative")
    total = sum(float(np.sum(s[rank:] ** 2)) for s in mode_singular_values(T))
    return math.sqrt(total)


def generic_rank_bound(dims: Sequence[int]) -> int:
    d3, d1, d2 = dims
    return min(d1 * d2, d1 * d3, d2 * d3)


# --------------------------------------------------------------------------- #
# CP factors
# --------------------------------------------------------------------------- #


def _as_float(m) -> np.ndarray:
    m = np.asarray(m)
    return m if m.dtype in (np.float32, np.float64) else m.astype(float)


@dataclass
class CPFactors:
    """Rank-R CP model. ``fit`` is the relative error ||M - Mhat||_F / ||M||_F."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    fit: float = float("nan")
    iterations: int = 0
    seed: int | None = None
    history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.A, self.B, self.C = (_as_float(m) for m in (self.A, self.B, self.C))
        if not (self.A.ndim == self.B.ndim == self.C.ndim == 2):
            raise ArgumentError("factors must be matrices")
        if not (self.A.shape[1] == self.B.shape[1] == self.C.shape[1]):
            raise ArgumentError("factor matrices must share the column count")

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.A.shape[0], self.B.shape[0], self.C.shape[0]

    def relative_error(self, T) -> float:
        X = _as_dense(T)
        nx = np.linalg.norm(X)
        return float(np.linalg.norm(X - reconstruct(self)) / (nx if nx > 0 else 1.0))

    def save(self, path) -> None:
        save_cpf(self, path)


def reconstruct(factors: CPFactors) -> np.ndarray:
    """Dense tensor ``sum_r A[:, r] o B[:, r] o C[:, r]``."""
    return np.einsum("kr,ir,jr->kij", factors.A, factors.B, factors.C, optimize=True)


def khatri_rao(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product, rows ordered with ``V``'s index fastest."""
    return (U[:, None, :] * V[None, :, :]).reshape(-1, U.shape[1])


def _solve(mttkrp: np.ndarray, gram: np.ndarray) -> np.ndarray:
    G = gram + RIDGE * np.eye(gram.shape[0])
    return np.linalg.solve(G, mttkrp.T).T


def _normalize(A, B, C):
    for F in (B, C):
        n = np.linalg.norm(F, axis=0)
        n[n == 0.0] = 1.0
        F /= n
        A *= n


def _als_run(X, normX, A, B, C, max_iters, tol):
    """One ALS run. Returns (A, B, C, fit, iterations, history).

    A is updated first so that zero-padded A columns of a warm start get a
    least-squares value before B and C are touched.  A sweep that raises the
    fit (possible only through the ridge term, near exact fits) is rejected
    and ends the run, so ``history`` is non-increasing.
    """
    X1, X2, X3 = (matricize(X, n) for n in (1, 2, 3))

    def relfit(A, B, C):
        return float(np.linalg.norm(X3 - C @ khatri_rao(B, A).T) / normX)

    fit = relfit(A, B, C)
    history = [fit]
    it = 0
    for it in range(1, max_iters + 1):
        nA = _solve(X1 @ khatri_rao(C, B), (B.T @ B) * (C.T @ C))
        nB = _solve(X2 @ khatri_rao(C, nA), (nA.T @ nA) * (C.T @ C))
        nC = _solve(X3 @ khatri_rao(nB, nA), (nA.T @ nA) * (nB.T @ nB))
        _normalize(nA, nB, nC)
        if not (np.isfinite(nA).all() and np.isfinite(nB).all() and np.isfinite(nC).all()):
            raise NumericalError("non-finite factor values in CP-ALS", iteration=it)
        new = relfit(nA, nB, nC)
        if new > fit:
            break
        A, B, C = nA, nB, nC
        history.append(new)
        done = fit - new < tol or new == 0.0
        fit = new
        if done:
            break
    # ridge-free final solve for A removes the regularization bias
    if fit > 0.0:
        A_ls = np.linalg.lstsq(khatri_rao(C, B), X1.T, rcond=None)[0].T
        new = relfit(A_ls, B, C) if np.isfinite(A_ls).all() else math.inf
        if new <= fit:
            A, fit = A_ls, new
            history.append(new)
    return A, B, C, fit, it, history


def cp_als(
    T,
    rank: int,
    *,
    max_iters: int = 500,
    tol: float = 1e-9,
    restarts: int = 8,
    seed: int = 0,
    init: CPFactors | None = None,
) -> CPFactors:
    """Fit a rank-``rank`` CP model by alternating least squares.

    Each restart starts from i.i.d. Gaussian factors drawn from the stream
    ``(seed, restart)``.  If ``init`` is given it is run first, with missing
    columns filled as zeros in A and Gaussian values in B and C, so its
    starting reconstruction equals the given one.  The best fit wins.
    """
    X = _as_dense(T)
    d3, d1, d2 = X.shape
    bound = generic_rank_bound(X.shape)
    if rank < 1 or rank > bound:
        raise ArgumentError(f"rank {rank} outside [1, {bound}] (generic rank bound for dims {X.shape})")
    if tol <= 0:
        raise ArgumentError("tol must be positive")
    if restarts < 0 or max_iters < 1:
        raise ArgumentError("restarts must be >= 0 and max_iters >= 1")
    if not np.isfinite(X).all():
        raise NumericalError("input tensor has non-finite entries", iteration=0)
    normX = float(np.linalg.norm(X))
    if normX == 0.0:
        z = CPFactors(np.zeros((d3, rank)), np.zeros((d1, rank)), np.zeros((d2, rank)), 0.0, 0, seed, [0.0])
        return z

    starts = []
    if init is not None:
        if init.dims != (d3, d1, d2) or init.rank > rank:
            raise ArgumentError("warm start factors do not fit the tensor or exceed the rank")
        rng = np.random.default_rng([seed, 2 ** 31 - 1])
        pad = rank - init.rank
        starts.append((
            np.hstack([init.A, np.zeros((d3, pad))]),
            np.hstack([init.B, rng.standard_normal((d1, pad))]),
            np.hstack([init.C, rng.standard_normal((d2, pad))]),
        ))
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        starts.append((
            rng.standard_normal((d3, rank)),
            rng.standard_normal((d1, rank)),
            rng.standard_normal((d2, rank)),
        ))
    if not starts:
        raise ArgumentError("need at least one restart or a warm start")

    best = None
    for A, B, C in starts:
        A, B, C, fit, it, hist = _als_run(X, normX, A, B, C, max_iters, tol)
        if best is None or fit < best.fit:
            best = CPFactors(A, B, C, fit, it, seed, hist)
    return best


# --------------------------------------------------------------------------- #
# .cpf files: one JSON header line, then A, B, C as little-endian float64,
# each in column-major order.
# --------------------------------------------------------------------------- #


def save_cpf(factors: CPFactors, path) -> None:
    d3, d1, d2 = factors.dims
    header = {
        "format": "cpf",
        "convention_version": CPF_VERSION,
        "dims": [d3, d1, d2],
        "rank": factors.rank,
        "fit": factors.fit,
        "iterations": factors.iterations,
        "seed": factors.seed,
        "dtype": "<f8",
        "order": "F",
        "matrices": ["A", "B", "C"],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for M in (factors.A, factors.B, factors.C):
            fh.write(np.asarray(M, dtype="<f8").tobytes(order="F"))


def load_cpf(path) -> CPFactors:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    if header.get("format") != "cpf":
        raise ArgumentError(f"{path} is not a .cpf file")
    if header.get("convention_version") != CPF_VERSION:
        raise ArgumentError(f"unsupported .cpf convention version {header.get('convention_version')}")
    d3, d1, d2 = header["dims"]
    R = header["rank"]
    data = np.frombuffer(raw[nl + 1:], dtype="<f8")
    if data.size != R * (d3 + d1 + d2):
        raise ArgumentError(f"{path}: payload has {data.size} values, expected {R * (d3 + d1 + d2)}")
    mats, off = [], 0
    for d in (d3, d1, d2):
        mats.append(data[off:off + d * R].reshape((d, R), order="F").astype(float))
        off += d * R
    fit = header.get("fit")
    return CPFactors(*mats, fit=float("nan") if fit is None else fit,
                     iterations=header.get("iterations", 0), seed=header.get("seed"))
