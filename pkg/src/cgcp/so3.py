"""SO(3) bookkeeping: irreps layouts, real-basis Clebsch-Gordan coefficients,
real Wigner D-matrices and Haar-uniform rotations.

Conventions
-----------
Real spherical harmonics are built from the complex (Condon-Shortley) ones by
the unitary ``Q`` of :func:`real_basis`::

    Y_{l,m} = i/sqrt2 (Y_l^m - (-1)^m Y_l^{-m})      m < 0
    Y_{l,0} = Y_l^0
    Y_{l,m} = 1/sqrt2 (Y_l^{-m} + (-1)^m Y_l^m)      m > 0

so that the degree-1 components are ordered (y, z, x).  A real coefficient
vector ``x`` of a degree-l field corresponds to complex coefficients
``Q.T @ x``.  Each real CG path block is the complex Racah block conjugated by
these matrices and multiplied by ``(-i)^(l1+l2+l3)``, which makes it real and
fixes its overall sign.  Components are ordered m = -l..l, degrees ascending.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ArgumentError

# Cartesian (x, y, z) -> degree-1 component order (y, z, x).
_CART_TO_L1 = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])

# Entries of the real CG blocks below this magnitude are rounding residue.
_ZERO_CUTOFF = 1e-14


# --------------------------------------------------------------------------- #
# Irreps layouts and paths
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class IrrepsSpec:
    """Ordered (multiplicity, degree) blocks of a concatenated feature field.

    Within a block the multiplicity channel is outermost: channel ``u`` of
    block ``(c, l)`` occupies ``2l+1`` contiguous components.
    """

    blocks: tuple[tuple[int, int], ...]

    def __post_init__(self):
        blocks = tuple((int(c), int(l)) for c, l in self.blocks)
        prev = -1
        for c, l in blocks:
            if c < 1:
                raise ArgumentError(f"multiplicity must be positive, got {c}x{l}")
            if l <= prev:
                raise ArgumentError("degrees must be strictly increasing")
            prev = l
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def parse(cls, text: str) -> "IrrepsSpec":
        """Parse the canonical form ``"128x0+64x1"``."""
        blocks = []
        for part in text.replace(" ", "").split("+"):
            m = re.fullmatch(r"(\d+)x(\d+)", part)
            if m is None:
                raise ArgumentError(f"cannot parse irreps block {part!r}")
            blocks.append((int(m.group(1)), int(m.group(2))))
        return cls(tuple(blocks))

    @classmethod
    def uniform(cls, c: int, L: int) -> "IrrepsSpec":
        return cls(tuple((c, l) for l in range(L + 1)))

    def __str__(self):
        return "+".join(f"{c}x{l}" for c, l in self.blocks)

    @property
    def total_dim(self) -> int:
        return sum(c * (2 * l + 1) for c, l in self.blocks)

    @property
    def lmax(self) -> int:
        return self.blocks[-1][1] if self.blocks else -1

    def multiplicity(self, l: int) -> int:
        for c, deg in self.blocks:
            if deg == l:
                return c
        return 0

    def slices(self) -> Iterator[tuple[int, int, int]]:
        """Yield ``(l, channel, offset)`` for every irrep copy in layout order."""
        offset = 0
        for c, l in self.blocks:
            for u in range(c):
                yield l, u, offset
                offset += 2 * l + 1


class Path(NamedTuple):
    l1: int
    l2: int
    l3: int


def triangle(l1: int, l2: int, l3: int) -> bool:
    return abs(l1 - l2) <= l3 <= l1 + l2


def enumerate_paths(L: int, clamp_output: bool = True) -> list[Path]:
    """Admissible paths with all degrees at most ``L``.

    With ``clamp_output`` (default) every pair ``l1, l2 <= L`` couples into
    ``l3 = |l1-l2| .. min(l1+l2, L)``; otherwise only pairs with
    ``l1 + l2 <= L`` are kept.
    """
    out = []
    for l1 in range(L + 1):
        for l2 in range(L + 1):
            if not clamp_output and l1 + l2 > L:
                continue
            for l3 in range(abs(l1 - l2), min(l1 + l2, L) + 1):
                out.append(Path(l1, l2, l3))
    return out


# --------------------------------------------------------------------------- #
# Clebsch-Gordan coefficients
# --------------------------------------------------------------------------- #


def complex_cg(j1: int, m1: int, j2: int, m2: int, j3: int, m3: int) -> float:
    """Condon-Shortley CG coefficient <j1 m1 j2 m2 | j3 m3> (Racah formula).

    The alternating sum is evaluated in exact rational arithmetic; only the
    final square root is rounded.
    """
    if m1 + m2 != m3 or not triangle(j1, j2, j3):
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0.0
    return _complex_cg(j1, m1, j2, m2, j3, m3)


@lru_cache(maxsize=None)
def _complex_cg(j1, m1, j2, m2, j3, m3):
    f = math.factorial
    pre = Fraction(
        (2 * j3 + 1) * f(j3 + j1 - j2) * f(j3 - j1 + j2) * f(j1 + j2 - j3),
        f(j1 + j2 + j3 + 1),
    ) * (f(j3 + m3) * f(j3 - m3) * f(j1 - m1) * f(j1 + m1) * f(j2 - m2) * f(j2 + m2))
    kmin = max(0, j2 - j3 - m1, j1 - j3 + m2)
    kmax = min(j1 + j2 - j3, j1 - m1, j2 + m2)
    s = Fraction(0)
    for k in range(kmin, kmax + 1):
        s += Fraction(
            (-1) ** k,
            f(k) * f(j1 + j2 - j3 - k) * f(j1 - m1 - k) * f(j2 + m2 - k)
            * f(j3 - j2 + m1 + k) * f(j3 - j1 - m2 + k),
        )
    if s == 0:
        return 0.0
    return math.copysign(math.sqrt(pre * s * s), s)


@lru_cache(maxsize=None)
def real_basis(l: int) -> np.ndarray:
    """Unitary ``Q`` with real harmonics ``= Q @`` complex harmonics (rows m=-l..l)."""
    Q = np.zeros((2 * l + 1, 2 * l + 1), dtype=complex)
    r = 1 / math.sqrt(2)
    for m in range(-l, l + 1):
        if m < 0:
            Q[l + m, l + m] = 1j * r
            Q[l + m, l - m] = -1j * r * (-1) ** m
        elif m == 0:
            Q[l, l] = 1.0
        else:
            Q[l + m, l - m] = r
            Q[l + m, l + m] = r * (-1) ** m
    Q.setflags(write=False)
    return Q


@lru_cache(maxsize=None)
def cg_block(l1: int, l2: int, l3: int) -> np.ndarray:
    """Real-basis CG block of shape ``(2l3+1, 2l1+1, 2l2+1)`` indexed [m3, m1, m2].

    All zeros when the selection rule fails.  Read-only.
    """
    for l in (l1, l2, l3):
        if l < 0:
            raise ArgumentError(f"degree must be non-negative, got {l}")
    out = np.zeros((2 * l3 + 1, 2 * l1 + 1, 2 * l2 + 1))
    if triangle(l1, l2, l3):
        cplx = np.zeros((2 * l3 + 1, 2 * l1 + 1, 2 * l2 + 1))
        for m1 in range(-l1, l1 + 1):
            for m2 in range(-l2, l2 + 1):
                if abs(m1 + m2) <= l3:
                    cplx[l3 + m1 + m2, l1 + m1, l2 + m2] = complex_cg(l1, m1, l2, m2, l3, m1 + m2)
        Q1, Q2, Q3 = real_basis(l1), real_basis(l2), real_basis(l3)
        block = np.einsum("kc,ia,jb,cab->kij", Q3.conj(), Q1, Q2, cplx)
        block = block * (-1j) ** (l1 + l2 + l3)
        if np.abs(block.imag).max() > 1e-12:
            raise AssertionError(f"real CG block ({l1},{l2},{l3}) is not real")
        out = block.real.copy()
        out[np.abs(out) < _ZERO_CUTOFF] = 0.0
    out.setflags(write=False)
    return out


def cg_coefficient(l1: int, m1: int, l2: int, m2: int, l3: int, m3: int) -> float:
    """Real-basis CG coefficient coupling (l1, m1) x (l2, m2) into (l3, m3)."""
    for l, m in ((l1, m1), (l2, m2), (l3, m3)):
        if l < 0 or abs(m) > l:
            raise ArgumentError(f"invalid (l, m) = ({l}, {m})")
    if not triangle(l1, l2, l3):
        return 0.0
    return float(cg_block(l1, l2, l3)[l3 + m3, l1 + m1, l2 + m2])


# --------------------------------------------------------------------------- #
# Rotations
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Rotation:
    """SO(3) element stored as a unit quaternion ``(w, x, y, z)``."""

    quaternion: tuple[float, float, float, float]

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=float)
        n = np.linalg.norm(q)
        if q.shape != (4,) or not np.isfinite(n) or n == 0.0:
            raise ArgumentError("quaternion must be a finite non-zero 4-vector")
        object.__setattr__(self, "quaternion", tuple(float(v) for v in q / n))

    @classmethod
    def identity(cls) -> "Rotation":
        return cls((1.0, 0.0, 0.0, 0.0))

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> "Rotation":
        a = np.asarray(axis, dtype=float)
        a = a / np.linalg.norm(a)
        s = math.sin(angle / 2)
        return cls((math.cos(angle / 2), *(s * a)))

    @property
    def matrix(self) -> np.ndarray:
        w, x, y, z = self.quaternion
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def __matmul__(self, other: "Rotation") -> "Rotation":
        """Composition: ``(self @ other).matrix == self.matrix @ other.matrix``."""
        w1, x1, y1, z1 = self.quaternion
        w2, x2, y2, z2 = other.quaternion
        return Rotation((
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ))

    def inverse(self) -> "Rotation":
        w, x, y, z = self.quaternion
        return Rotation((w, -x, -y, -z))


def sample_rotation(rng: np.random.Generator) -> Rotation:
    """Haar-uniform rotation: a normalized 4-vector of standard normals."""
    while True:
        q = rng.standard_normal(4)
        n = np.linalg.norm(q)
        if n > 0.0:
            return Rotation(tuple(q / n))


def sample_rotations(rng: np.random.Generator, n: int) -> list[Rotation]:
    return [sample_rotation(rng) for _ in range(n)]


# --------------------------------------------------------------------------- #
# Wigner D-matrices
# --------------------------------------------------------------------------- #


@lru_cache(maxsize=None)
def _coupling_matrix(l: int) -> np.ndarray:
    # path (l-1, 1, l) flattened to (2l+1, (2l-1)*3); rows are orthonormal
    return np.ascontiguousarray(cg_block(l - 1, 1, l).reshape(2 * l + 1, -1))


def wigner_d(l: int, R: Rotation) -> np.ndarray:
    """Real-basis Wigner D-matrix of degree ``l`` (orthogonal, (2l+1) x (2l+1)).

    Degree 1 is the rotation matrix in (y, z, x) order; higher degrees follow
    from projecting ``D(l-1) (x) D(1)`` onto degree ``l`` with the CG block.
    """
    if l < 0:
        raise ArgumentError(f"degree must be non-negative, got {l}")
    return _wigner_ds(l, R)[l]


def _wigner_ds(lmax: int, R: Rotation) -> list[np.ndarray]:
    Ds = [np.ones((1, 1))]
    if lmax == 0:
        return Ds
    D1 = _CART_TO_L1 @ R.matrix @ _CART_TO_L1.T
    Ds.append(D1)
    for l in range(2, lmax + 1):
        C = _coupling_matrix(l)
        Ds.append(C @ np.kron(Ds[-1], D1) @ C.T)
    return Ds


def wigner_block(spec: IrrepsSpec, R: Rotation) -> np.ndarray:
    """Block-diagonal action of ``R`` on a field laid out as ``spec``."""
    D = np.zeros((spec.total_dim, spec.total_dim))
    if not spec.blocks:
        return D
    Ds = _wigner_ds(spec.lmax, R)
    for l, _, off in spec.slices():
        n = 2 * l + 1
        D[off:off + n, off:off + n] = Ds[l]
    return D
