"""Error metrics, bounds, the universality construction, rank sweeps and
runtime benchmarks for the CP-approximate CG tensor product."""

from __future__ import annotations

import csv
import gc
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import so3
from .cgtp import CGTensor, apply_cp, apply_cp_batched, build_cg_tensor, dense_tp_batched, exact_tp
from .errors import ArgumentError, NumericalError
from .so3 import IrrepsSpec
from .tensor3 import CPFactors, cp_als, generic_rank_bound, reconstruct, singular_tail

FORMAT_VERSION = 1
DEGENERATE_NORM = 1e-14
BOUND_SLACK = 1e-9


# --------------------------------------------------------------------------- #
# Rank schedules
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class RankSchedule:
    """Rank as a function of the maximum degree, clamped to [1, generic bound]."""

    name: str
    coef: float = 1.0
    power: float = 1.0

    def raw(self, L: int) -> int:
        if self.name == "quartic":
            return (L + 1) ** 4
        if self.name == "log2":
            return math.ceil(16 * math.log2(L + 1) ** 2 - 1e-9)
        if self.name == "linear7":
            return 7 * L
        if self.name == "quadratic7":
            return 7 * L * L
        if self.name == "custom":
            return math.ceil(self.coef * L ** self.power - 1e-9)
        raise ArgumentError(f"unknown rank schedule {self.name!r}")

    def __call__(self, L: int) -> int:
        d = (L + 1) ** 2
        return int(min(max(self.raw(L), 1), generic_rank_bound((d, d, d))))

    @property
    def label(self) -> str:
        return f"custom:{self.coef:g},{self.power:g}" if self.name == "custom" else self.name

    @classmethod
    def parse(cls, text: str) -> "RankSchedule":
        """``quartic``, ``log2``, ``linear7``, ``quadratic7`` or ``custom:coef,power``."""
        text = text.strip()
        if text.startswith("custom:"):
            try:
                coef, power = (float(v) for v in text[len("custom:"):].split(","))
            except ValueError:
                raise ArgumentError(f"bad custom schedule {text!r}; expected custom:coef,power") from None
            return cls("custom", coef, power)
        if text not in SCHEDULES:
            raise ArgumentError(f"unknown rank schedule {text!r}; choose from {sorted(SCHEDULES)} or custom:a,p")
        return SCHEDULES[text]


SCHEDULES = {n: RankSchedule(n) for n in ("quartic", "log2", "linear7", "quadratic7")}


def cube_root_ceil(R: int) -> int:
    t = max(0, round(R ** (1 / 3)) - 1)
    while t ** 3 < R:
        t += 1
    return t


# --------------------------------------------------------------------------- #
# Error metrics
# --------------------------------------------------------------------------- #


def sample_inputs(rng: np.random.Generator, n: int, d: int, C: float) -> np.ndarray:
    """``n`` Gaussian vectors rescaled to norm exactly ``C``."""
    X = rng.standard_normal((n, d))
    nrm = np.linalg.norm(X, axis=1)
    while (nrm == 0.0).any():
        bad = nrm == 0.0
        X[bad] = rng.standard_normal((int(bad.sum()), d))
        nrm = np.linalg.norm(X, axis=1)
    return X * (C / nrm)[:, None]


def _degree_of(d: int) -> int:
    L = math.isqrt(d) - 1
    if (L + 1) ** 2 != d:
        raise ArgumentError(f"dimension {d} is not (L+1)^2 for any L")
    return L


def _stream(seed, *key) -> np.random.Generator:
    return np.random.default_rng([int(seed), *[int(k) for k in key]])


def approximation_error_detail(M: CGTensor, factors: CPFactors, samples: int, C: float, seed) -> tuple[float, int]:
    """Mean relative error and number of skipped degenerate samples."""
    if samples < 1 or C <= 0:
        raise ArgumentError("need samples >= 1 and C > 0")
    rng = _stream(seed, 1)
    X = sample_inputs(rng, samples, M.d, C)
    Y = sample_inputs(rng, samples, M.d, C)
    Z = dense_tp_batched(M.dense, X, Y)
    Zh = apply_cp_batched(factors, X, Y)
    nz = np.linalg.norm(Z, axis=1)
    ok = nz >= DEGENERATE_NORM
    if not ok.any():
        raise NumericalError("every sample had a degenerate exact product")
    rel = np.linalg.norm(Z - Zh, axis=1)[ok] / nz[ok]
    return float(np.mean(rel)), int((~ok).sum())


def approximation_error(M: CGTensor, factors: CPFactors, samples: int = 1000, C: float = 1.0, seed=0) -> float:
    """Mean of ||M(x(x)y) - Mhat(x(x)y)|| / ||M(x(x)y)|| over random inputs of norm C."""
    return approximation_error_detail(M, factors, samples, C, seed)[0]


@dataclass
class EquivarianceSamples:
    eps: np.ndarray
    x_norms: np.ndarray
    y_norms: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.eps.mean())

    @property
    def max(self) -> float:
        return float(self.eps.max())


def equivariance_samples(model, rotations: int = 1000, samples_per_rotation: int = 1,
                         C: float = 1.0, seed=0) -> EquivarianceSamples:
    """Per-sample eps(R, x, y) = ||f(Dx, Dy) - D f(x, y)|| for ``model``.

    ``model`` is a :class:`CGTensor` (exact product) or :class:`CPFactors`.
    """
    if rotations < 1 or samples_per_rotation < 1:
        raise ArgumentError("need rotations >= 1 and samples_per_rotation >= 1")
    if isinstance(model, CGTensor):
        L = model.L
        f = lambda x, y: exact_tp(model, x, y)  # noqa: E731
    elif isinstance(model, CPFactors):
        d3, d1, d2 = model.dims
        if not d1 == d2 == d3:
            raise ArgumentError("equivariance needs equal input and output layouts")
        L = _degree_of(d3)
        f = lambda x, y: apply_cp(model, x, y)  # noqa: E731
    else:
        raise ArgumentError(f"cannot measure equivariance of {type(model).__name__}")
    spec = IrrepsSpec.uniform(1, L)
    rng = _stream(seed, 2)
    eps, xn, yn = [], [], []
    for _ in range(rotations):
        D = so3.wigner_block(spec, so3.sample_rotation(rng))
        for _ in range(samples_per_rotation):
            x, y = sample_inputs(rng, 2, spec.total_dim, C)
            eps.append(np.linalg.norm(f(D @ x, D @ y) - D @ f(x, y)))
            xn.append(np.linalg.norm(x))
            yn.append(np.linalg.norm(y))
    return EquivarianceSamples(np.array(eps), np.array(xn), np.array(yn))


def equivariance_error(model, rotations: int = 1000, samples_per_rotation: int = 1,
                       C: float = 1.0, seed=0) -> tuple[float, float]:
    s = equivariance_samples(model, rotations, samples_per_rotation, C, seed)
    return s.mean, s.max


def frobenius_residual(M: CGTensor, factors: CPFactors) -> float:
    return float(np.linalg.norm(M.dense - reconstruct(factors)))


def theorem1_bound(M: CGTensor, R: int, C: float = 1.0) -> tuple[float, Callable[[CPFactors], float]]:
    """Singular-tail equivariance bound and the fitted-residual bound.

    Returns ``2 C^2 tail(M, ceil(R^(1/3)))`` and a function mapping fitted
    factors to ``2 C^2 ||M - Mhat||_F``, the intermediate bound that holds
    for any factors.
    """
    if R < 1:
        raise ArgumentError("rank must be >= 1")
    tail = 2 * C * C * singular_tail(M.dense, cube_root_ceil(R))

    def proof_step(factors: CPFactors) -> float:
        return 2 * C * C * frobenius_residual(M, factors)

    return tail, proof_step


# --------------------------------------------------------------------------- #
# Universality: exact CP factors for any equivariant bilinear map
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class BasisElement:
    path: so3.Path
    u: int  # output channel
    v: int  # first-input channel
    w: int  # second-input channel


def equivariant_basis(irreps1: IrrepsSpec, irreps2: IrrepsSpec, irreps3: IrrepsSpec) -> list[BasisElement]:
    """One element per admissible path and channel triple; the length is the
    dimension of the space of equivariant bilinear maps."""
    out = []
    for c1, l1 in irreps1.blocks:
        for c2, l2 in irreps2.blocks:
            for c3, l3 in irreps3.blocks:
                if not so3.triangle(l1, l2, l3):
                    continue
                for u in range(c3):
                    for v in range(c1):
                        for w in range(c2):
                            out.append(BasisElement(so3.Path(l1, l2, l3), u, v, w))
    return out


def _offsets(spec: IrrepsSpec) -> dict[tuple[int, int], int]:
    return {(l, u): off for l, u, off in spec.slices()}


def equivariant_bilinear(irreps1, irreps2, irreps3, lam) -> np.ndarray:
    """Dense tensor ``sum_k lam_k T_k`` of shape (d3, d1, d2)."""
    basis = equivariant_basis(irreps1, irreps2, irreps3)
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (len(basis),):
        raise ArgumentError(f"expected {len(basis)} coefficients, got shape {lam.shape}")
    o1, o2, o3 = _offsets(irreps1), _offsets(irreps2), _offsets(irreps3)
    T = np.zeros((irreps3.total_dim, irreps1.total_dim, irreps2.total_dim))
    for coef, e in zip(lam, basis):
        l1, l2, l3 = e.path
        a, b, c = o3[(l3, e.u)], o1[(l1, e.v)], o2[(l2, e.w)]
        T[a:a + 2 * l3 + 1, b:b + 2 * l1 + 1, c:c + 2 * l2 + 1] += coef * so3.cg_block(l1, l2, l3)
    return T


def universality_factorize(irreps1: IrrepsSpec, irreps2: IrrepsSpec, irreps3: IrrepsSpec,
                           lam) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Factors (A, B, C) with ``Phi(x, y) = A (B^T x * C^T y)`` exactly, where
    ``Phi = sum_k lam_k T_k`` over :func:`equivariant_basis`.

    Each basis tensor is a zero-padded CG block.  It is written as a sum of
    rank-1 terms by slicing it along its two smallest modes and keeping the
    non-zero slices; ``lam_k`` scales the A columns of element ``k``.
    """
    basis = equivariant_basis(irreps1, irreps2, irreps3)
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (len(basis),):
        raise ArgumentError(f"expected {len(basis)} coefficients, got shape {lam.shape}")
    d1, d2, d3 = irreps1.total_dim, irreps2.total_dim, irreps3.total_dim
    o1, o2, o3 = _offsets(irreps1), _offsets(irreps2), _offsets(irreps3)
    cols_a, cols_b, cols_c = [], [], []
    for coef, e in zip(lam, basis):
        l1, l2, l3 = e.path
        blk = so3.cg_block(l1, l2, l3)
        n3, n1, n2 = blk.shape
        a0, b0, c0 = o3[(l3, e.u)], o1[(l1, e.v)], o2[(l2, e.w)]
        # slice along the two modes with the fewest index pairs
        sizes = {"ij": n1 * n2, "ki": n3 * n1, "kj": n3 * n2}
        mode = min(sizes, key=lambda k: (sizes[k], k != "ij"))
        pairs = {"ij": (n1, n2), "ki": (n3, n1), "kj": (n3, n2)}[mode]
        for p in range(pairs[0]):
            for q in range(pairs[1]):
                a, b, c = np.zeros(d3), np.zeros(d1), np.zeros(d2)
                if mode == "ij":
                    fiber = blk[:, p, q]
                    a[a0:a0 + n3], b[b0 + p], c[c0 + q] = fiber, 1.0, 1.0
                elif mode == "ki":
                    fiber = blk[p, q, :]
                    a[a0 + p], b[b0 + q], c[c0:c0 + n2] = 1.0, 1.0, fiber
                else:
                    fiber = blk[p, :, q]
                    a[a0 + p], b[b0:b0 + n1], c[c0 + q] = 1.0, fiber, 1.0
                if not fiber.any():
                    continue
                cols_a.append(coef * a)
                cols_b.append(b)
                cols_c.append(c)
    if not cols_a:
        return np.zeros((d3, 1)), np.zeros((d1, 1)), np.zeros((d2, 1))
    return np.array(cols_a).T, np.array(cols_b).T, np.array(cols_c).T


# --------------------------------------------------------------------------- #
# Timing
# --------------------------------------------------------------------------- #


def _resolution_ns() -> float:
    return max(time.get_clock_info("perf_counter").resolution * 1e9, 1.0)


def time_call(fn: Callable[[], object], reps: int = 5, warmup: int = 1, min_ns: float = 2e5) -> float:
    """Median nanoseconds per call.

    The inner loop doubles until one timed batch spans at least 100 clock
    ticks and ``min_ns``.
    """
    for _ in range(warmup):
        fn()
    floor = max(100 * _resolution_ns(), min_ns)
    inner = 1
    while True:
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        if time.perf_counter_ns() - t0 >= floor:
            break
        inner *= 2
    was = gc.isenabled()
    gc.disable()
    try:
        samples = []
        for _ in range(reps):
            t0 = time.perf_counter_ns()
            for _ in range(inner):
                fn()
            samples.append((time.perf_counter_ns() - t0) / inner)
    finally:
        if was:
            gc.enable()
    return float(np.median(samples))


# --------------------------------------------------------------------------- #
# Sweeps
# --------------------------------------------------------------------------- #


@dataclass
class ErrorReport:
    L: int
    schedule: str
    R: int
    status: str = "ok"
    fit: float = float("nan")
    approx_error: float = float("nan")
    equiv_error_mean: float = float("nan")
    equiv_error_max: float = float("nan")
    theorem1_bound: float = float("nan")
    proof_step_bound: float = float("nan")
    bound_violations: int = -1
    tail_bound_holds: int = -1
    skipped_samples: int = 0
    sample_count: int = 0
    rotation_count: int = 0
    iterations: int = 0
    seed: int = 0
    exact_time_ns: float = float("nan")
    approx_time_ns: float = float("nan")


CSV_COLUMNS = ["format_version"] + [f.name for f in fields(ErrorReport)]
TIMING_COLUMNS = ("exact_time_ns", "approx_time_ns")


@dataclass
class SweepOptions:
    samples: int = 1000
    rotations: int = 1000
    samples_per_rotation: int = 1
    C: float = 1.0
    seed: int = 42
    max_iters: int = 500
    tol: float = 1e-9
    restarts: int = 8
    warm_start: bool = True
    timing_reps: int = 5
    threads: int = 1


def fit_ladder(M: CGTensor, ranks: Iterable[int], opts: SweepOptions) -> dict[int, CPFactors | Exception]:
    """Fit each distinct rank in ascending order, warm-starting from the last
    successful fit so the Frobenius fit cannot increase with the rank.

    A rank whose fit raises maps to the exception instead of factors.
    """
    out: dict[int, CPFactors | Exception] = {}
    prev = None
    for R in sorted(set(ranks)):
        seed = int(np.random.SeedSequence([opts.seed, M.L, R]).generate_state(1)[0])
        try:
            f = cp_als(M.dense, R, max_iters=opts.max_iters, tol=opts.tol, restarts=opts.restarts,
                       seed=seed, init=prev if opts.warm_start else None)
        except (ArgumentError, NumericalError) as exc:
            out[R] = exc
            continue
        out[R] = prev = f
    return out


def _measure_cell(M: CGTensor, factors: CPFactors, rep: ErrorReport, opts: SweepOptions) -> None:
    seed = int(np.random.SeedSequence([opts.seed, M.L]).generate_state(1)[0])
    rep.fit = float(factors.fit)
    rep.iterations = int(factors.iterations)
    rep.approx_error, rep.skipped_samples = approximation_error_detail(M, factors, opts.samples, opts.C, seed)
    rep.sample_count = opts.samples
    es = equivariance_samples(factors, opts.rotations, opts.samples_per_rotation, opts.C, seed)
    rep.rotation_count = opts.rotations
    rep.equiv_error_mean, rep.equiv_error_max = es.mean, es.max
    tail, step = theorem1_bound(M, rep.R, opts.C)
    resid = frobenius_residual(M, factors)
    rep.theorem1_bound = tail
    rep.proof_step_bound = step(factors)
    pointwise = 2 * resid * es.x_norms * es.y_norms + BOUND_SLACK
    rep.bound_violations = int((es.eps > pointwise).sum())
    rep.tail_bound_holds = int(rep.equiv_error_max <= tail + BOUND_SLACK)
    x = np.ones(M.d) / math.sqrt(M.d)
    rep.exact_time_ns = time_call(lambda: exact_tp(M, x, x), reps=opts.timing_reps, min_ns=1e5)
    rep.approx_time_ns = time_call(lambda: apply_cp(factors, x, x), reps=opts.timing_reps, min_ns=1e5)


def _sweep_level(L: int, schedules: Sequence[RankSchedule], opts: SweepOptions) -> list[ErrorReport]:
    reports = [ErrorReport(L, s.label, s(L), seed=opts.seed) for s in schedules]
    try:
        M = build_cg_tensor(L)
    except ArgumentError as exc:
        for r in reports:
            r.status = f"failed: {exc}"
        return reports
    fitted = fit_ladder(M, [r.R for r in reports], opts)
    measured: dict[int, ErrorReport] = {}
    for n, rep in enumerate(reports):
        f = fitted[rep.R]
        if isinstance(f, Exception):
            rep.status = f"failed: {f}"
        elif rep.R in measured:
            reports[n] = replace(measured[rep.R], schedule=rep.schedule)
        else:
            try:
                _measure_cell(M, f, rep, opts)
                measured[rep.R] = rep
            except (ArgumentError, NumericalError) as exc:
                rep.status = f"failed: {exc}"
    return reports


def sweep(L_values: Iterable[int], schedules: Sequence[RankSchedule], opts: SweepOptions | None = None) -> list[ErrorReport]:
    """ErrorReport per (L, schedule), L-major in the given order.

    Ranks at one L are fitted in ascending order, each warm-started from the
    next smaller one; every L is independent of the others.
    """
    opts = opts or SweepOptions()
    L_values = list(L_values)
    schedules = [RankSchedule.parse(s) if isinstance(s, str) else s for s in schedules]
    if opts.threads > 1 and len(L_values) > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as pool:
            levels = list(pool.map(lambda L: _sweep_level(L, schedules, opts), L_values))
    else:
        levels = [_sweep_level(L, schedules, opts) for L in L_values]
    return [r for level in levels for r in level]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_reports_csv(reports: Sequence[ErrorReport], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        d = asdict(r)
        w.writerow([FORMAT_VERSION] + [_fmt(d[c]) for c in CSV_COLUMNS[1:]])


def reports_to_json(reports: Sequence[ErrorReport]) -> list[dict]:
    return [{"format_version": FORMAT_VERSION, **asdict(r)} for r in reports]


# --------------------------------------------------------------------------- #
# Runtime benchmark
# --------------------------------------------------------------------------- #


@dataclass
class BenchRow:
    L: int
    d: int
    R: int
    paths: int
    exact_ns: float
    approx_ns: float
    speedup: float
    dense_kernel_ns: float
    cp_kernel_ns: float
    batch: int


@dataclass
class BenchResult:
    rows: list[BenchRow]
    slopes: dict[str, float] = field(default_factory=dict)


BENCH_COLUMNS = ["format_version"] + [f.name for f in fields(BenchRow)] + [
    "slope_exact", "slope_approx", "slope_dense_kernel", "slope_cp_kernel"]


def loglog_slope(L_values: Sequence[int], times: Sequence[float], min_L: int = 2) -> float:
    """Least-squares slope of log(time) against log(L + 1) over L >= min_L."""
    pts = [(math.log(L + 1), math.log(t)) for L, t in zip(L_values, times) if L >= min_L and t > 0]
    if len(pts) < 2:
        return float("nan")
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


def benchmark_tp(L_values: Iterable[int], reps: int = 20, warmup: int = 10, float_width: int = 64,
                 batch: int = 32, seed: int = 42) -> BenchResult:
    """Time the path-wise exact product against the CP product at R = 7 L^2.

    ``exact_ns``/``approx_ns`` time :func:`exact_tp` and :func:`apply_cp` on
    one input pair; ``speedup`` is their ratio.  The ``*_kernel_ns`` columns
    time compiled loop kernels (dense Theta(d^3) contraction and the CP
    product) per pair over a batch, and their slopes track operation counts.
    CP factors are random: runtime does not depend on their values.
    """
    from threadpoolctl import threadpool_limits

    from . import kernels

    if reps < 3:
        raise ArgumentError("reps must be >= 3")
    if float_width not in (32, 64):
        raise ArgumentError("float width must be 32 or 64")
    dtype = np.float32 if float_width == 32 else np.float64
    rows = []
    with threadpool_limits(limits=1):
        for L in L_values:
            M = build_cg_tensor(L).astype(dtype)
            d = M.d
            R = SCHEDULES["quadratic7"](L) if L >= 1 else 1
            rng = _stream(seed, L, 3)
            f = CPFactors(*(rng.standard_normal((d, R)) for _ in range(3)))
            f = CPFactors(f.A.astype(dtype), f.B.astype(dtype), f.C.astype(dtype))
            x, y = (v.astype(dtype) for v in rng.standard_normal((2, d)))
            X, Y = (v.astype(dtype) for v in rng.standard_normal((2, batch, d)))
            Md = np.ascontiguousarray(M.dense.astype(dtype))
            Z = np.empty((batch, d), dtype=dtype)
            te = time_call(lambda: exact_tp(M, x, y), reps, warmup)
            ta = time_call(lambda: apply_cp(f, x, y), reps, warmup)
            td = time_call(lambda: kernels.dense_contract(Md, X, Y, Z), reps, warmup) / batch
            tc = time_call(lambda: kernels.cp_contract(f.A, f.B, f.C, X, Y, Z), reps, warmup) / batch
            rows.append(BenchRow(L, d, R, len(M.paths), te, ta, te / ta, td, tc, batch))
    Ls = [r.L for r in rows]
    slopes = {
        "slope_exact": loglog_slope(Ls, [r.exact_ns for r in rows]),
        "slope_approx": loglog_slope(Ls, [r.approx_ns for r in rows]),
        "slope_dense_kernel": loglog_slope(Ls, [r.dense_kernel_ns for r in rows]),
        "slope_cp_kernel": loglog_slope(Ls, [r.cp_kernel_ns for r in rows]),
    }
    return BenchResult(rows, slopes)


def write_bench_csv(result: BenchResult, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for r in result.rows:
        d = asdict(r)
        w.writerow([FORMAT_VERSION] + [_fmt(d[f.name]) for f in fields(BenchRow)]
                   + [_fmt(result.slopes[c]) for c in BENCH_COLUMNS[-4:]])
