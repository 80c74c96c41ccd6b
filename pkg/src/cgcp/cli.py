"""Command-line front end: ``fit``, ``verify``, ``sweep``, ``bench``, ``export-cg``.

Exit codes: 0 success, 1 invariant failure, 2 usage error, 3 numerical failure.
Every command writes only into ``--out`` and echoes its resolved config in
the JSON it emits.  ``--config file.json`` overrides flags key by key.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path as FsPath

import numpy as np

from . import analysis, so3
from .cgtp import CGTensor, PathBlock, build_cg_tensor, exact_tp
from .errors import ArgumentError, NumericalError
from .so3 import IrrepsSpec
from .tensor3 import Tensor3, cp_als, save_cpf

EXIT_OK, EXIT_INVARIANT, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3

CHECKS = ("cg_orthogonality", "wigner_orthogonality", "wigner_homomorphism",
          "exact_equivariance", "proof_step_bound", "universality")
CHECK_TOLERANCE = {
    "cg_orthogonality": 1e-12,
    "wigner_orthogonality": 1e-10,
    "wigner_homomorphism": 1e-10,
    "exact_equivariance": 1e-10,
    "proof_step_bound": analysis.BOUND_SLACK,
    "universality": 1e-10,
}


# --------------------------------------------------------------------------- #
# Argument handling
# --------------------------------------------------------------------------- #


def parse_L_range(value) -> list[int]:
    """``3``, ``1..4`` (inclusive), ``1,3,5`` or a JSON list of ints."""
    if isinstance(value, (list, tuple)):
        out = [int(v) for v in value]
    elif isinstance(value, int):
        out = [value]
    else:
        text = str(value).strip()
        try:
            if ".." in text:
                lo, hi = text.split("..")
                out = list(range(int(lo), int(hi) + 1))
            else:
                out = [int(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise ArgumentError(f"bad L range {value!r}; use N, A..B or A,B,C") from None
    if not out:
        raise ArgumentError(f"L range {value!r} is empty")
    if any(L < 0 for L in out):
        raise ArgumentError("L values must be non-negative")
    return out


def _add_common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default=out_default, help="output directory (created if missing)")
    p.add_argument("--config", default=None, help="JSON file whose keys override flags")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgcp", description="CP-approximate Clebsch-Gordan tensor products")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit CP factors of the CG tensor at (L, R)")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--R", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--restarts", type=int, default=8)
    _add_common(p, "cgcp-out")

    p = sub.add_parser("verify", help="run the invariant checks")
    p.add_argument("--L", type=int, default=3, help="maximum degree checked")
    p.add_argument("--check", action="append", choices=CHECKS, default=None,
                   help="restrict to the named check (repeatable)")
    p.add_argument("--rotations", type=int, default=20)
    p.add_argument("--corrupt-cg", action="store_true", help="flip the sign of one CG entry (fault injection)")
    _add_common(p, "cgcp-out")

    p = sub.add_parser("sweep", help="ErrorReport table over L and rank schedules")
    p.add_argument("--L", default="1..4")
    p.add_argument("--schedules", default="quartic,log2,linear7,quadratic7")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--rotations", type=int, default=1000)
    p.add_argument("--samples-per-rotation", type=int, default=1)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--no-warm-start", dest="warm_start", action="store_false")
    p.add_argument("--timing-reps", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    _add_common(p, "cgcp-out")

    p = sub.add_parser("bench", help="runtime of exact vs CP product (single-threaded)")
    p.add_argument("--L", default="1..6")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--float", dest="float_width", type=int, choices=(32, 64), default=64)
    p.add_argument("--batch", type=int, default=32)
    _add_common(p, "cgcp-out")

    p = sub.add_parser("export-cg", help="write the sparse CG text format")
    p.add_argument("--L", type=int, required=True)
    _add_common(p, "cgcp-out")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "config"}
    if args.config:
        try:
            with open(args.config) as fh:
                override = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ArgumentError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(override, dict):
            raise ArgumentError("config file must hold a JSON object")
        override.pop("format_version", None)
        if override.pop("command", cfg["command"]) != cfg["command"]:
            raise ArgumentError("config file is for a different command")
        unknown = set(override) - set(cfg)
        if unknown:
            raise ArgumentError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(override)
    return cfg


def _outdir(cfg) -> FsPath:
    d = FsPath(cfg["out"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def _emit(payload: dict, path: FsPath) -> None:
    text = json.dumps(_jsonable({"format_version": analysis.FORMAT_VERSION, **payload}), indent=2)
    path.write_text(text + "\n")
    print(text)


# --------------------------------------------------------------------------- #
# fit / export-cg
# --------------------------------------------------------------------------- #


def cmd_fit(cfg: dict) -> int:
    L, R = int(cfg["L"]), int(cfg["R"])
    M = build_cg_tensor(L)
    t0 = time.perf_counter()
    f = cp_als(M.dense, R, max_iters=cfg["max_iters"], tol=cfg["tol"], restarts=cfg["restarts"], seed=cfg["seed"])
    wall = time.perf_counter() - t0
    out = _outdir(cfg)
    cpf = out / f"cg_L{L}_R{R}.cpf"
    save_cpf(f, cpf)
    _emit({"config": cfg, "fit": f.fit, "iterations": f.iterations, "restarts": cfg["restarts"],
           "rank": f.rank, "wall_time_s": wall, "factors": cpf.name}, out / f"fit_L{L}_R{R}.json")
    return EXIT_OK


def cmd_export_cg(cfg: dict) -> int:
    L = int(cfg["L"])
    M = build_cg_tensor(L)
    out = _outdir(cfg)
    path = out / f"cg_L{L}.txt"
    with open(path, "w") as fh:
        M.write_text(fh)
    _emit({"config": cfg, "L": L, "d": M.d, "nnz": M.tensor.nnz, "paths": len(M.paths), "file": path.name},
          out / f"export_L{L}.json")
    return EXIT_OK


# --------------------------------------------------------------------------- #
# verify
# --------------------------------------------------------------------------- #


def corrupt_cg(M: CGTensor) -> CGTensor:
    """Copy of ``M`` with the sign of one entry of the first (1, 1, 1) path flipped."""
    if M.L < 1:
        raise ArgumentError("--corrupt-cg needs L >= 1")
    blocks = []
    done = False
    for pb in M.paths:
        blk = pb.block
        if not done and pb.path == so3.Path(1, 1, 1):
            blk = blk.copy()
            idx = tuple(np.argwhere(blk != 0)[0])
            blk[idx] = -blk[idx]
            done = True
        blocks.append(PathBlock(pb.path, pb.offsets, blk))
    coords, values = [], []
    for pb in blocks:
        nz = np.argwhere(pb.block != 0)
        coords.append(nz + np.array(pb.offsets))
        values.append(pb.block[tuple(nz.T)])
    T = Tensor3(M.tensor.dims, coords=np.concatenate(coords), values=np.concatenate(values))
    return CGTensor(M.L, T, tuple(blocks), M.clamp_output)


def _check_cg_orthogonality(tensors, rng, cfg):
    worst = 0.0
    for M in tensors.values():
        for pb in M.paths:
            B = pb.block.reshape(pb.block.shape[0], -1)
            worst = max(worst, float(np.abs(B @ B.T - np.eye(B.shape[0])).max()))
    return worst


def _check_wigner_orthogonality(tensors, rng, cfg):
    worst = 0.0
    for _ in range(cfg["rotations"]):
        R = so3.sample_rotation(rng)
        for l in range(cfg["L"] + 1):
            D = so3.wigner_d(l, R)
            worst = max(worst, float(np.linalg.norm(D.T @ D - np.eye(2 * l + 1))))
    return worst


def _check_wigner_homomorphism(tensors, rng, cfg):
    worst = 0.0
    for _ in range(cfg["rotations"]):
        R1, R2 = so3.sample_rotation(rng), so3.sample_rotation(rng)
        for l in range(cfg["L"] + 1):
            lhs = so3.wigner_d(l, R1 @ R2)
            worst = max(worst, float(np.linalg.norm(lhs - so3.wigner_d(l, R1) @ so3.wigner_d(l, R2))))
    return worst


def _check_exact_equivariance(tensors, rng, cfg):
    worst = 0.0
    for L, M in tensors.items():
        spec = IrrepsSpec.uniform(1, L)
        for _ in range(cfg["rotations"]):
            D = so3.wigner_block(spec, so3.sample_rotation(rng))
            x, y = rng.standard_normal((2, M.d))
            z = exact_tp(M, x, y)
            err = np.linalg.norm(exact_tp(M, D @ x, D @ y) - D @ z) / max(np.linalg.norm(z), 1e-300)
            worst = max(worst, float(err))
    return worst


def _check_proof_step_bound(tensors, rng, cfg):
    """Largest eps - 2 ||M - Mhat||_F ||x|| ||y|| over fitted R = 7 L^2 factors."""
    worst = -math.inf
    for L, M in tensors.items():
        if L < 1:
            continue
        seed = int(np.random.SeedSequence([cfg["seed"], L]).generate_state(1)[0])
        f = cp_als(M.dense, analysis.SCHEDULES["quadratic7"](L), restarts=2, seed=seed)
        es = analysis.equivariance_samples(f, cfg["rotations"], 1, 1.0, cfg["seed"])
        resid = analysis.frobenius_residual(M, f)
        worst = max(worst, float(np.max(es.eps - 2 * resid * es.x_norms * es.y_norms)))
    return worst


def _check_universality(tensors, rng, cfg):
    worst = 0.0
    for L in tensors:
        for mult in (1, 2):
            spec = IrrepsSpec.uniform(mult, L)
            n = len(analysis.equivariant_basis(spec, spec, spec))
            lam = rng.standard_normal(n)
            A, B, C = analysis.universality_factorize(spec, spec, spec, lam)
            T = analysis.equivariant_bilinear(spec, spec, spec, lam)
            X, Y = rng.standard_normal((2, 20, spec.total_dim))
            ref = np.einsum("kij,ni,nj->nk", T, X, Y)
            got = ((X @ B) * (Y @ C)) @ A.T
            worst = max(worst, float(np.linalg.norm(ref - got, axis=1).max()))
    return worst


_CHECK_FNS = {
    "cg_orthogonality": _check_cg_orthogonality,
    "wigner_orthogonality": _check_wigner_orthogonality,
    "wigner_homomorphism": _check_wigner_homomorphism,
    "exact_equivariance": _check_exact_equivariance,
    "proof_step_bound": _check_proof_step_bound,
    "universality": _check_universality,
}


def run_checks(cfg: dict) -> list[dict]:
    Lmax = int(cfg["L"])
    if not 0 <= Lmax <= 8:
        raise ArgumentError(f"L must be in [0, 8], got {Lmax}")
    if cfg["rotations"] < 1:
        raise ArgumentError("rotations must be >= 1")
    names = cfg["check"] or list(CHECKS)
    unknown = set(names) - set(CHECKS)
    if unknown:
        raise ArgumentError(f"unknown checks {sorted(unknown)}; choose from {list(CHECKS)}")
    tensors = {L: build_cg_tensor(L) for L in range(Lmax + 1)}
    if cfg["corrupt_cg"]:
        tensors = {L: corrupt_cg(M) if L >= 1 else M for L, M in tensors.items()}
    results = []
    for k, name in enumerate(CHECKS):
        if name not in names:
            continue
        rng = np.random.default_rng([cfg["seed"], k])
        value = _CHECK_FNS[name](tensors, rng, cfg)
        tol = CHECK_TOLERANCE[name]
        results.append({"name": name, "max_residual": value, "tolerance": tol,
                        "passed": bool(math.isfinite(value) and value <= tol)})
    return results


def cmd_verify(cfg: dict) -> int:
    results = run_checks(cfg)
    failed = [r["name"] for r in results if not r["passed"]]
    _emit({"config": cfg, "checks": results, "passed": not failed, "failed": failed}, _outdir(cfg) / "verify.json")
    for name in failed:
        print(f"invariant check failed: {name}", file=sys.stderr)
    return EXIT_INVARIANT if failed else EXIT_OK


# --------------------------------------------------------------------------- #
# sweep / bench
# --------------------------------------------------------------------------- #


def cmd_sweep(cfg: dict) -> int:
    L_values = parse_L_range(cfg["L"])
    schedules = [analysis.RankSchedule.parse(s) for s in str(cfg["schedules"]).split(",") if s.strip()]
    if not schedules:
        raise ArgumentError("no rank schedules given")
    opts = analysis.SweepOptions(
        samples=cfg["samples"], rotations=cfg["rotations"], samples_per_rotation=cfg["samples_per_rotation"],
        C=cfg["C"], seed=cfg["seed"], max_iters=cfg["max_iters"], tol=cfg["tol"], restarts=cfg["restarts"],
        warm_start=cfg["warm_start"], timing_reps=cfg["timing_reps"], threads=cfg["threads"])
    if opts.samples < 1 or opts.rotations < 1 or opts.C <= 0 or opts.threads < 1:
        raise ArgumentError("samples, rotations and threads must be >= 1 and C > 0")
    reports = analysis.sweep(L_values, schedules, opts)
    out = _outdir(cfg)
    with open(out / "sweep.csv", "w") as fh:
        analysis.write_reports_csv(reports, fh)
    _emit({"config": cfg, "options": asdict(opts), "rows": analysis.reports_to_json(reports)}, out / "sweep.json")
    failed = [r for r in reports if r.status != "ok"]
    for r in failed:
        print(f"cell L={r.L} {r.schedule}: {r.status}", file=sys.stderr)
    return EXIT_NUMERICAL if reports and len(failed) == len(reports) else EXIT_OK


def cmd_bench(cfg: dict) -> int:
    L_values = parse_L_range(cfg["L"])
    if any(L > 8 for L in L_values):
        raise ArgumentError("L values must be <= 8")
    if cfg["batch"] < 1:
        raise ArgumentError("batch must be >= 1")
    res = analysis.benchmark_tp(L_values, reps=cfg["reps"], warmup=cfg["warmup"],
                                float_width=cfg["float_width"], batch=cfg["batch"], seed=cfg["seed"])
    out = _outdir(cfg)
    with open(out / "bench.csv", "w") as fh:
        analysis.write_bench_csv(res, fh)
    _emit({"config": cfg, "rows": [asdict(r) for r in res.rows], "slopes": res.slopes}, out / "bench.json")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "verify": cmd_verify, "sweep": cmd_sweep, "bench": cmd_bench, "export-cg": cmd_export_cg}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg["command"]](cfg)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def entry() -> None:
    sys.exit(main())
