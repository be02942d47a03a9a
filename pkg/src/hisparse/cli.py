"""Command-line harness: certify, recover, phase-transition, convergence, estimate-cost.

Parameters come from a JSON config (``--config``) and ``--set key=value``
overrides (dotted keys reach into nested objects, values are parsed as JSON
when possible). Every JSON/CSV output embeds the normalized config and the
package version; thread count and output directory are left out so that
outputs are byte-identical across them.

Exit codes: 0 success/certified, 1 completed but not certified or recovery
failed, 2 invalid input or budget refusal.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .certify import (
    certify_kron_power,
    estimate_cert_cost,
    hirip_constant,
    rip_constant,
)
from .ensembles import EnsembleSpec, derive_seed, sample_matrix, sample_noise, sample_signal
from .errors import BudgetExceeded, HisparseError
from .hierarchy import DEFAULT_ENUMERATION_BUDGET, HierarchySpec, flatten
from .hihtp import HihtpOptions, check_guarantee, recover
from .linop import DenseOperator, KroneckerOperator, read_mat1, write_mat1

log = logging.getLogger("hisparse")

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2
DEFAULT_THRESHOLD = 1e-6

TRIAL_FIELDS = [
    "seed", "cell", "trial", "output_dim", "input_dim", "block_counts", "sparsities",
    "noise_sigma", "success", "rel_error", "iterations", "residual", "status", "elapsed_s",
]
GRID_FIELDS = ["M", "m", "s", "sigma", "trials", "successes", "mean_error", "mean_iters"]


class ConfigError(HisparseError, ValueError):
    pass


# ---------------------------------------------------------------- config helpers

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_override(config: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, value = item.split("=", 1)
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {part} is not an object")
    node[parts[-1]] = _parse_value(value)


def load_config(path, overrides) -> dict:
    config = {}
    if path:
        try:
            config = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(config, dict):
            raise ConfigError("config must be a JSON object")
    for item in overrides or []:
        _apply_override(config, item)
    return config


def _int(config, key, default=None, minimum=None):
    value = config.get(key, default)
    if value is None:
        raise ConfigError(f"missing required parameter {key!r}")
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}")
    return value


def _float(config, key, default=None, minimum=None):
    value = config.get(key, default)
    if value is None or isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}")
    return float(value)


def _int_list(config, key):
    value = config.get(key)
    if isinstance(value, int) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or not value or not all(
        isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in value
    ):
        raise ConfigError(f"{key} must be a positive integer or a non-empty list of them")
    return value


def _spec(config, key="spec") -> HierarchySpec:
    data = config.get(key)
    if not isinstance(data, dict):
        raise ConfigError(f"{key} must be an object with block_counts and sparsities")
    return HierarchySpec.from_dict(data)


def _matrix_source(src, default_seed: int) -> tuple[dict, np.ndarray]:
    """Resolve a matrix description to (normalized description, matrix)."""
    if not isinstance(src, dict):
        raise ConfigError(f"matrix source must be an object, got {src!r}")
    if "file" in src:
        return {"file": str(src["file"])}, read_mat1(src["file"])
    spec = EnsembleSpec(
        kind=src.get("kind", "gaussian"),
        rows=_int(src, "rows", minimum=1),
        cols=_int(src, "cols", minimum=1),
        seed=_int(src, "seed", default_seed, minimum=0),
        scale=src.get("scale"),
    )
    return spec.to_dict(), sample_matrix(spec)


def _options(config) -> HihtpOptions:
    data = config.get("options", {}) or {}
    return HihtpOptions(
        max_iterations=_int(data, "max_iterations", 500, minimum=1),
        residual_tolerance=_float(data, "residual_tolerance", 1e-10, minimum=0),
        support_stall_stop=bool(data.get("support_stall_stop", True)),
    )


def _options_dict(opts: HihtpOptions) -> dict:
    return {
        "max_iterations": opts.max_iterations,
        "residual_tolerance": opts.residual_tolerance,
        "support_stall_stop": opts.support_stall_stop,
    }


# ---------------------------------------------------------------- output helpers

def _envelope(command: str, config: dict, **payload) -> dict:
    return {"version": __version__, "command": command, "config": config, **payload}


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def _write_csv(path: Path, command: str, config: dict, fields, rows, extra_header=None) -> None:
    buf = io.StringIO()
    buf.write(f"# version: {__version__}\r\n")
    buf.write(f"# command: {command}\r\n")
    buf.write(f"# config: {json.dumps(config, sort_keys=True)}\r\n")
    for key, value in (extra_header or {}).items():
        buf.write(f"# {key}: {json.dumps(value, sort_keys=True)}\r\n")
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_fmt(row.get(f)) for f in fields])
    path.write_text(buf.getvalue(), newline="")


def read_csv(path) -> tuple[dict, list[dict]]:
    """Parse a CSV written by this harness into (header metadata, rows)."""
    meta, body = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# "):
                key, _, value = line[2:].rstrip("\r\n").partition(": ")
                meta[key] = value if key in ("version", "command") else json.loads(value)
            else:
                body.append(line)
    return meta, list(csv.DictReader(body))


# ---------------------------------------------------------------- commands

def cmd_certify(config: dict, ctx) -> int:
    mode = config.get("mode", "rip")
    target = _float(config, "target", 1.0)
    norm = {"mode": mode, "target": target, "seed": ctx.seed, "budget": ctx.budget}
    try:
        if mode == "rip":
            desc, a = _matrix_source(config.get("matrix"), derive_seed(ctx.seed, 0))
            s = _int(config, "s", minimum=1)
            kind = config.get("kind", "rip-squared")
            norm.update(matrix=desc, s=s, kind=kind)
            report = rip_constant(a, s, kind, budget=ctx.budget, threads=ctx.threads)
        elif mode == "hirip":
            spec = _spec(config)
            norm["spec"] = spec.to_dict()
            if "factors" in config:
                descs, mats = _factor_list(config["factors"], ctx.seed)
                norm["factors"] = descs
                op = KroneckerOperator(mats)
            else:
                desc, a = _matrix_source(config.get("matrix"), derive_seed(ctx.seed, 0))
                norm["matrix"] = desc
                op = DenseOperator(a)
            report = hirip_constant(op, spec, budget=ctx.budget, threads=ctx.threads)
        elif mode == "kron-power":
            desc, a = _matrix_source(config.get("matrix"), derive_seed(ctx.seed, 0))
            s = _int(config, "s", minimum=1)
            L = _int(config, "L", minimum=1)
            norm.update(matrix=desc, s=s, L=L)
            report = certify_kron_power(a, s, L, budget=ctx.budget, threads=ctx.threads)
        else:
            raise ConfigError(f"unknown certify mode {mode!r}")
    except BudgetExceeded as exc:
        print(f"refused: {exc}", file=sys.stderr)
        _print_cost_hint(config, mode, exc)
        return EXIT_INVALID

    certified = report.delta < target
    out = _envelope("certify", norm, report=report.to_json(), target=target, certified=certified)
    if mode == "kron-power":
        out["factor_delta"] = report.details["factor_delta"]
        out["composed_bound"] = report.delta
    _write_json(ctx.out / "certify_report.json", out)
    print(f"{report.kind} delta={report.delta:.12g} target={target} certified={certified}")
    return EXIT_OK if certified else EXIT_FAIL


def _print_cost_hint(config, mode, exc) -> None:
    try:
        if mode in ("rip", "kron-power"):
            src = config.get("matrix", {})
            n = src.get("cols") if "cols" in src else read_mat1(src["file"]).shape[1]
            est = estimate_cert_cost(n, int(config["s"]), int(config.get("L", 1)))
            print(json.dumps(est.to_dict(), sort_keys=True), file=sys.stderr)
        else:
            print(json.dumps({"support_count": exc.count, "budget": exc.budget}), file=sys.stderr)
    except Exception:  # the hint is best effort; the refusal itself already printed
        print(json.dumps({"support_count": exc.count, "budget": exc.budget}), file=sys.stderr)


def _factor_list(factors, seed):
    if not isinstance(factors, list) or not factors:
        raise ConfigError("factors must be a non-empty list of matrix sources")
    descs, mats = [], []
    for i, src in enumerate(factors):
        desc, a = _matrix_source(src, derive_seed(seed, i))
        descs.append(desc)
        mats.append(a)
    return descs, mats


def _build_operator(config, seed):
    op_cfg = config.get("operator")
    if not isinstance(op_cfg, dict):
        raise ConfigError("operator must be an object with 'factors' or 'matrix'")
    if "factors" in op_cfg:
        descs, mats = _factor_list(op_cfg["factors"], seed)
        return {"factors": descs}, KroneckerOperator(mats)
    desc, a = _matrix_source(op_cfg.get("matrix"), derive_seed(seed, 0))
    return {"matrix": desc}, DenseOperator(a)


def _signal(spec, signal_cfg, default_seed):
    magnitude = signal_cfg.get("magnitude", "gaussian")
    seed = _int(signal_cfg, "seed", default_seed, minimum=0)
    if magnitude == "zero":
        return {"magnitude": "zero"}, np.zeros(spec.ambient_dim())
    x, _ = sample_signal(spec, seed, magnitude)
    return {"magnitude": magnitude, "seed": seed}, x


def _run_trial(op, spec, x, noise, opts, threshold):
    start = time.perf_counter()
    y = op.apply(x) + noise
    result = recover(op, y, spec, opts, truth=x)
    xnorm = float(np.linalg.norm(x))
    err = float(np.linalg.norm(result.estimate - x))
    rel = err / xnorm if xnorm > 0 else err
    return {
        "success": rel < threshold,
        "rel_error": rel,
        "iterations": result.iterations_run,
        "residual": result.residual_trace[-1],
        "status": result.status,
        "elapsed_s": time.perf_counter() - start,
    }, result


def cmd_recover(config: dict, ctx) -> int:
    spec = _spec(config)
    op_desc, op = _build_operator(config, ctx.seed)
    opts = _options(config)
    threshold = _float(config, "success_threshold", DEFAULT_THRESHOLD, minimum=0)
    norm = {
        "spec": spec.to_dict(), "operator": op_desc, "options": _options_dict(opts),
        "success_threshold": threshold, "seed": ctx.seed,
    }
    if op.input_dim != spec.ambient_dim():
        raise ConfigError(f"operator input_dim {op.input_dim} != ambient dimension {spec.ambient_dim()}")

    if "y_file" in config:
        y = read_mat1(config["y_file"]).reshape(-1)
        norm["y_file"] = str(config["y_file"])
        if y.size != op.output_dim:
            raise ConfigError(f"y has {y.size} entries, operator output_dim is {op.output_dim}")
        start = time.perf_counter()
        result = recover(op, y, spec, opts)
        ynorm = float(np.linalg.norm(y))
        rel_res = result.residual_trace[-1] / ynorm if ynorm > 0 else result.residual_trace[-1]
        row = {
            "success": result.status != "max-iterations" and rel_res < threshold,
            "rel_error": None,
            "iterations": result.iterations_run,
            "residual": result.residual_trace[-1],
            "status": result.status,
            "elapsed_s": time.perf_counter() - start,
        }
        noise_sigma = None
    else:
        signal_desc, x = _signal(spec, config.get("signal", {}) or {}, derive_seed(ctx.seed, 100))
        noise_sigma = _float(config, "noise_sigma", 0.0, minimum=0)
        noise_seed = _int(config, "noise_seed", derive_seed(ctx.seed, 101), minimum=0)
        norm.update(signal=signal_desc, noise_sigma=noise_sigma, noise_seed=noise_seed)
        noise = sample_noise(op.output_dim, noise_sigma, noise_seed)
        row, result = _run_trial(op, spec, x, noise, opts, threshold)

    row.update(
        seed=ctx.seed, cell=0, trial=0, output_dim=op.output_dim, input_dim=op.input_dim,
        block_counts="x".join(map(str, spec.block_counts)),
        sparsities="x".join(map(str, spec.sparsities)), noise_sigma=noise_sigma,
    )
    write_mat1(ctx.out / "estimate.mat1", result.estimate.reshape(-1, 1))
    _write_json(ctx.out / "support.json", _envelope(
        "recover", norm,
        support=result.final_support.to_json(),
        flat_indices=list(flatten(result.final_support, spec)),
        status=result.status,
        iterations=result.iterations_run,
    ))
    _write_csv(ctx.out / "trial.csv", "recover", norm, TRIAL_FIELDS, [row],
               {"success_threshold": threshold})
    print(f"status={result.status} iterations={result.iterations_run} success={row['success']}")
    return EXIT_OK if row["success"] else EXIT_FAIL


def cmd_phase_transition(config: dict, ctx) -> int:
    N = _int(config, "N", minimum=1)
    n = _int(config, "n", minimum=1)
    grid = {k: _int_list(config, k) for k in ("M", "m", "s", "sigma")}
    trials = _int(config, "trials", 10, minimum=1)
    noise_sigma = _float(config, "noise_sigma", 0.0, minimum=0)
    kind = config.get("ensemble", "gaussian")
    threshold = _float(config, "success_threshold", DEFAULT_THRESHOLD, minimum=0)
    opts = _options(config)
    for s in grid["s"]:
        if s > N:
            raise ConfigError(f"s={s} exceeds N={N}")
    for sg in grid["sigma"]:
        if sg > n:
            raise ConfigError(f"sigma={sg} exceeds n={n}")
    norm = {
        "N": N, "n": n, **grid, "trials": trials, "noise_sigma": noise_sigma,
        "ensemble": kind, "success_threshold": threshold, "options": _options_dict(opts),
        "seed": ctx.seed,
    }
    cells = [
        (M, m, s, sg)
        for M in grid["M"] for m in grid["m"] for s in grid["s"] for sg in grid["sigma"]
    ]
    jobs = [(ci, t) for ci in range(len(cells)) for t in range(trials)]

    def run(job):
        ci, t = job
        M, m, s, sg = cells[ci]
        seed = derive_seed(ctx.seed, ci, t)
        spec = HierarchySpec((N, n), (s, sg))
        row = {
            "seed": seed, "cell": ci, "trial": t, "output_dim": M * m, "input_dim": N * n,
            "block_counts": f"{N}x{n}", "sparsities": f"{s}x{sg}", "noise_sigma": noise_sigma,
        }
        try:
            A = sample_matrix(EnsembleSpec(kind, M, N, derive_seed(seed, 0)))
            B = sample_matrix(EnsembleSpec(kind, m, n, derive_seed(seed, 1)))
            x, _ = sample_signal(spec, derive_seed(seed, 2))
            noise = sample_noise(M * m, noise_sigma, derive_seed(seed, 3))
            outcome, _ = _run_trial(KroneckerOperator([A, B]), spec, x, noise, opts, threshold)
            row.update(outcome)
        except HisparseError as exc:
            log.warning("trial %d of cell %d failed: %s", t, ci, exc)
            row.update(success=False, rel_error=math.nan, iterations=0, residual=math.nan,
                       status=f"error: {type(exc).__name__}", elapsed_s=0.0)
        return row

    if ctx.threads > 1:
        with ThreadPoolExecutor(max_workers=ctx.threads) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]

    grid_rows = []
    for ci, (M, m, s, sg) in enumerate(cells):
        mine = [r for r in rows if r["cell"] == ci]
        grid_rows.append({
            "M": M, "m": m, "s": s, "sigma": sg, "trials": len(mine),
            "successes": sum(bool(r["success"]) for r in mine),
            "mean_error": float(np.mean([r["rel_error"] for r in mine])),
            "mean_iters": float(np.mean([r["iterations"] for r in mine])),
        })
    header = {"success_threshold": threshold}
    _write_csv(ctx.out / "phase_transition.csv", "phase-transition", norm, GRID_FIELDS, grid_rows, header)
    _write_csv(ctx.out / "trials.csv", "phase-transition", norm, TRIAL_FIELDS, rows, header)
    for r in grid_rows:
        print(f"M={r['M']} m={r['m']} s={r['s']} sigma={r['sigma']}: {r['successes']}/{r['trials']}")
    return EXIT_OK


def _rho_pair(d: float) -> tuple[float | None, float | None]:
    if d >= 1.0:
        return None, None
    return 2.0 * d / (1.0 - d * d), math.sqrt(2.0 * d * d / (1.0 - d * d))


def cmd_convergence(config: dict, ctx) -> int:
    spec = _spec(config)
    if spec.levels != 2:
        raise ConfigError("convergence runs on two-level specs")
    descs, mats = _factor_list(config.get("factors"), ctx.seed)
    if len(mats) != 2:
        raise ConfigError("convergence needs exactly two factors A and B")
    A, B = mats
    op = KroneckerOperator(mats)
    if op.input_dim != spec.ambient_dim():
        raise ConfigError("factor column counts do not match the spec")
    (N, n), (s, sg) = spec.block_counts, spec.sparsities
    opts = _options(config)
    noise_sigma = _float(config, "noise_sigma", 0.0, minimum=0)
    noise_seed = _int(config, "noise_seed", derive_seed(ctx.seed, 101), minimum=0)
    signal_desc, x = _signal(spec, config.get("signal", {}) or {}, derive_seed(ctx.seed, 100))
    norm = {
        "spec": spec.to_dict(), "factors": descs, "options": _options_dict(opts),
        "signal": signal_desc, "noise_sigma": noise_sigma, "noise_seed": noise_seed,
        "seed": ctx.seed, "budget": ctx.budget,
    }

    big = HierarchySpec((N, n), (min(3 * s, N), min(2 * sg, n)))
    try:
        hi = hirip_constant(op, big, budget=ctx.budget, threads=ctx.threads)
        dA = rip_constant(A, big.sparsities[0], budget=ctx.budget, threads=ctx.threads).delta
        dB = rip_constant(B, big.sparsities[1], budget=ctx.budget, threads=ctx.threads).delta
    except BudgetExceeded as exc:
        print(f"refused: {exc}", file=sys.stderr)
        print(json.dumps({"support_count": exc.count, "budget": exc.budget}), file=sys.stderr)
        return EXIT_INVALID
    rho, rho_sqrt = _rho_pair(hi.delta)
    guarantee = check_guarantee(dA, dB).to_dict() if dA < 1 and dB < 1 else None

    noise = sample_noise(op.output_dim, noise_sigma, noise_seed)
    y = op.apply(x) + noise
    result = recover(op, y, spec, opts, truth=x)
    e0 = float(np.linalg.norm(x))
    errors = [e0] + result.error_trace
    residuals = [float(np.linalg.norm(y))] + result.residual_trace
    noise_norm = float(np.linalg.norm(noise))
    tau = errors[-1] / noise_norm if noise_norm > 0 else None

    rows = []
    for k, (err, res) in enumerate(zip(errors, residuals)):
        rows.append({
            "iteration": k, "error": err, "residual": res,
            "rho_bound": None if rho is None else rho**k * e0,
            "rho_sqrt_bound": None if rho_sqrt is None else rho_sqrt**k * e0,
        })
    summary = {
        "delta_3s_2sigma": hi.delta,
        "hirip_spec": big.to_dict(),
        "delta_A_3s": dA,
        "delta_B_2sigma": dB,
        "rho": rho,
        "rho_sqrt": rho_sqrt,
        "guarantee": guarantee,
        "noise_norm": noise_norm,
        "empirical_tau": tau,
        "status": result.status,
        "iterations": result.iterations_run,
    }
    _write_csv(ctx.out / "convergence.csv", "convergence", norm,
               ["iteration", "error", "residual", "rho_bound", "rho_sqrt_bound"], rows,
               {k: summary[k] for k in ("delta_3s_2sigma", "rho", "rho_sqrt", "empirical_tau")})
    _write_json(ctx.out / "convergence_summary.json", _envelope(
        "convergence", norm, summary=summary, certification=hi.to_json(include_timing=False)))
    print(f"delta_3s_2sigma={hi.delta:.6g} final_error={errors[-1]:.3g} iterations={result.iterations_run}")
    return EXIT_OK


def cmd_estimate_cost(config: dict, ctx) -> int:
    n = _int(config, "n", minimum=1)
    s = _int(config, "s", minimum=1)
    L = _int(config, "L", 1, minimum=1)
    m = config.get("m")
    est = estimate_cert_cost(n, s, L, m)
    norm = {"n": n, "s": s, "L": L, "m": n if m is None else m}
    _write_json(ctx.out / "cost_estimate.json", _envelope("estimate-cost", norm, estimate=est.to_dict()))
    print(json.dumps(est.to_dict(), sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "certify": cmd_certify,
    "recover": cmd_recover,
    "phase-transition": cmd_phase_transition,
    "convergence": cmd_convergence,
    "estimate-cost": cmd_estimate_cost,
}


class Context:
    def __init__(self, args):
        self.seed = args.seed
        self.threads = args.threads
        self.budget = args.budget
        self.out = Path(args.out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry (repeatable)")
    common.add_argument("--seed", type=int, default=0, help="base seed (u64)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--budget", type=int, default=DEFAULT_ENUMERATION_BUDGET,
                        help="maximum number of supports to enumerate")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hisparse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hisparse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads < 1 or args.seed < 0 or args.budget < 1:
        print("error: --threads and --budget must be positive, --seed nonnegative", file=sys.stderr)
        return EXIT_INVALID
    try:
        config = load_config(args.config, args.set)
        ctx = Context(args)
        ctx.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](copy.deepcopy(config), ctx)
    except HisparseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
