"""Command-line driver: opmix {fit, predict, simulate, benchmark, logdet}.

Exit codes: 0 success, 1 hard error, 2 finished with warnings (optimizer did
not converge).
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from .fast_apply import solve_grid
from .grid import make_grid
from .io import fmt, read_table, write_table
from .logdet import QuadratureSpec, logdet_approx, logdet_closed_brownian
from .mixed_model import VarianceParams, gls_fit, reml_optimize
from .operator import OperatorSpec, factorize
from .simulate import SimulationSpec, simulate

log = logging.getLogger("opmix")

EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2

_num = {"type": "number"}
CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "operator": {
            "type": "object",
            "properties": {
                "k": {"type": "integer", "minimum": 1},
                "penalties": {"type": "array", "minItems": 1,
                              "items": {"type": "array", "items": _num, "minItems": 2}},
                "bc_a": {"type": "array", "items": {"type": "string"}},
                "bc_b": {"type": "array", "items": {"type": "string"}},
                "brownian": {"enum": ["motion", "bridge"]},
                "lambda": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "optimizer": {
            "type": "object",
            "properties": {
                "max_iter": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "G_structure": {"enum": ["full", "diagonal", "identity"]},
                "init": {
                    "type": "object",
                    "properties": {
                        "G": {"oneOf": [_num, {"type": "array", "items": {"type": "array", "items": _num}}]},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "quadrature": {
            "type": "object",
            "properties": {"nodes": {"type": "integer", "minimum": 2}, "split": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "emit_derivatives": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "interval": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "simulate": {
            "type": "object",
            "properties": {
                "n": {"type": "integer", "minimum": 2},
                "m": {"type": "integer", "minimum": 1},
                "kernel": {"enum": ["motion", "bridge", "generic"]},
                "lambda": {"type": "number", "exclusiveMinimum": 0},
                "sigma2": {"type": "number", "minimum": 0},
                "x_var": {"type": "number", "minimum": 0},
                "fixed": {"type": "array", "items": {"enum": ["intercept", "time"]}},
                "beta": {"type": "array", "items": _num},
                "random": {"type": "array", "items": {"enum": ["sample_intercept", "sample_slope"]}},
                "random_var": {"type": "array", "items": {"type": "number", "minimum": 0}},
            },
            "required": ["n", "m"],
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


class CliError(Exception):
    pass


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise CliError(f"invalid config: {exc.message}") from exc
    return cfg


def operator_from_config(cfg: dict) -> OperatorSpec:
    oc = cfg.get("operator", {"brownian": "motion", "lambda": 1.0})
    if "penalties" in oc:
        if "brownian" in oc:
            raise CliError("give either penalties or brownian, not both")
        op = OperatorSpec.from_strings([tuple(p) for p in oc["penalties"]],
                                       list(oc.get("bc_a", [])) + list(oc.get("bc_b", [])))
        if "k" in oc and oc["k"] != op.k:
            raise CliError(f"k={oc['k']} does not match penalties of order {op.k}")
        for text, end in [(s, "a") for s in oc.get("bc_a", [])] + [(s, "b") for s in oc.get("bc_b", [])]:
            if f"({end})" not in text:
                raise CliError(f"condition {text!r} listed under bc_{end}")
        return op
    return OperatorSpec.brownian(oc.get("lambda", 1.0), oc.get("brownian", "motion"))


def quad_from_config(cfg: dict) -> QuadratureSpec:
    return QuadratureSpec(**cfg.get("quadrature", {}))


def _init_G(cfg: dict, q: int) -> np.ndarray:
    g = cfg.get("optimizer", {}).get("init", {}).get("G", 1.0)
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        return float(g) * np.eye(q)
    if g.shape != (q, q):
        raise CliError(f"init G must be {q} x {q}")
    return g


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(type(obj))


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, default=_jsonable) + "\n")


def _oracle_summary(table, vp, fit, quad) -> dict:
    from .oracle import dense_for_operator, oracle_fit

    dense = dense_for_operator(vp.op, table.data.grid)
    ref = oracle_fit(table.data, vp, dense)
    return dict(
        fit=ref,
        max_abs_diff=dict(
            beta_hat=float(np.max(np.abs(fit.beta_hat - ref.beta_hat), initial=0.0)),
            u_blup=float(np.max(np.abs(fit.u_blup - ref.u_blup), initial=0.0)),
            x_blup=float(np.max(np.abs(fit.x_blup - ref.x_blup))),
            neg2_relik=float(abs(fit.neg2_relik - ref.neg2_relik)),
        ),
    )


def _write_predictions(path: Path, table, fit, orders, oracle_fit=None):
    data = table.data
    header = ["sample_id", "time", "x_blup"] + [f"x_blup_d{mu}" for mu in orders] + ["residual"]
    if oracle_fit is not None:
        header.append("oracle_x_blup")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for j, sid in enumerate(table.sample_ids):
            for i, t in enumerate(data.grid.points):
                row = [sid, fmt(t), fmt(fit.x_blup[i, j])]
                row += [fmt(fit.x_blup_deriv[mu][i, j]) for mu in orders]
                row.append(fmt(fit.residuals[i, j]))
                if oracle_fit is not None:
                    row.append(fmt(oracle_fit.x_blup[i, j]))
                w.writerow(row)


def _fit_payload(table, vp, fit, scales, converged, n_evals, trace, oracle) -> dict:
    return dict(
        fixed_names=table.fixed_names,
        random_names=table.random_names,
        beta_hat=fit.beta_hat,
        C_beta=fit.C_beta,
        u_blup=fit.u_blup,
        sigma2=vp.sigma2,
        G=vp.G,
        penalty_scales=scales,
        operator=dict(penalties=[list(p) for p in vp.op.penalties], bc=vp.op.bc_strings()),
        neg2_relik=fit.neg2_relik,
        converged=converged,
        n_evals=n_evals,
        trace=[dict(theta=th, neg2_relik=val if np.isfinite(val) else None) for th, val in trace],
        oracle=None if oracle is None else oracle["max_abs_diff"],
    )


def _interval(args, cfg):
    if getattr(args, "interval", None):
        return tuple(args.interval)
    if "interval" in cfg:
        return tuple(cfg["interval"])
    return None


def run_fit(args) -> int:
    cfg = load_config(args.config)
    table = read_table(args.data, _interval(args, cfg))
    data = table.data
    op = operator_from_config(cfg)
    quad = quad_from_config(cfg)
    orders = sorted(set(cfg.get("emit_derivatives", [])))
    opt = cfg.get("optimizer", {})
    init = VarianceParams(1.0, _init_G(cfg, data.q), op)
    res = reml_optimize(data, init, dict(max_evals=opt.get("max_iter", 200), tol=opt.get("tol", 1e-6),
                                         step=opt.get("step", 0.5), quad=quad,
                                         g_structure=opt.get("G_structure", "full")))
    fit = gls_fit(data, res.params, orders=orders, quad=quad)
    oracle = _oracle_summary(table, res.params, fit, quad) if args.oracle else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "fit.json", _fit_payload(table, res.params, fit, res.scales, res.converged,
                                               res.n_evals, res.trace, oracle))
    _write_predictions(out / "predictions.csv", table, fit, orders, None if oracle is None else oracle["fit"])
    if oracle is not None:
        log.info("oracle max discrepancies: %s", oracle["max_abs_diff"])
    if not res.converged:
        log.warning("optimizer did not converge after %d evaluations", res.n_evals)
        return EXIT_WARN
    return EXIT_OK


def run_predict(args) -> int:
    cfg = load_config(args.config)
    table = read_table(args.data, _interval(args, cfg))
    try:
        saved = json.loads(Path(args.fit).read_text())
        op = OperatorSpec.from_strings([tuple(p) for p in saved["operator"]["penalties"]], saved["operator"]["bc"])
        vp = VarianceParams(saved["sigma2"], np.asarray(saved["G"], dtype=float).reshape(table.data.q, table.data.q), op)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot use fit file {args.fit}: {exc}") from exc
    orders = sorted(set(cfg.get("emit_derivatives", [])))
    fit = gls_fit(table.data, vp, orders=orders, quad=quad_from_config(cfg))
    oracle = _oracle_summary(table, vp, fit, None) if args.oracle else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_predictions(out / "predictions.csv", table, fit, orders, None if oracle is None else oracle["fit"])
    return EXIT_OK


def run_simulate(args) -> int:
    cfg = load_config(args.config)
    sc = dict(cfg.get("simulate", {}))
    if "n" not in sc:
        raise CliError("config needs a 'simulate' block with n and m")
    a, b = _interval(args, cfg) or (0.0, 1.0)
    grid = make_grid(a, b, sc.pop("n"))
    op = operator_from_config(cfg) if sc.get("kernel") == "generic" else None
    spec = SimulationSpec(
        m=sc["m"], kernel=sc.get("kernel", "motion"), lam=sc.get("lambda", 1.0), sigma2=sc.get("sigma2", 1.0),
        x_var=sc.get("x_var"), fixed=tuple(sc.get("fixed", ())), beta=tuple(sc.get("beta", ())),
        random=tuple(sc.get("random", ())), random_var=tuple(sc.get("random_var", ())), op=op,
    )
    data, truth = simulate(grid, spec, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table(out, data, truth["fixed_names"], truth["random_names"])
    _write_json(out.with_suffix(".truth.json"), dict(
        seed=args.seed, interval=[a, b], n=grid.n, m=spec.m, kernel=spec.kernel, lam=spec.lam,
        sigma2=spec.sigma2, beta=truth["beta"], u=truth["u"], G=truth["G"],
    ))
    return EXIT_OK


def _slope(ns, secs) -> float:
    return float(np.polyfit(np.log(ns), np.log(secs), 1)[0])


def _best_time(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_benchmark(args) -> int:
    cfg = load_config(args.config)
    op = operator_from_config(cfg)
    quad = quad_from_config(cfg)
    sizes = [int(s) for s in args.sizes]
    rng = np.random.default_rng(0)
    rows = []
    for n in sizes:
        grid = make_grid(0.0, 1.0, n)
        fac = factorize(op, 1.0, grid.mesh, grid.a, grid.b)
        z = rng.standard_normal(n)
        rows.append(("solve_grid", n, _best_time(lambda: solve_grid(fac, grid, z), args.repeats)))
        rows.append(("logdet_approx", n, _best_time(lambda: logdet_approx(op, grid, quad), args.repeats)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["routine", "n", "seconds"])
        for name, n, sec in rows:
            w.writerow([name, n, fmt(sec)])
    slopes = {}
    for name in ("solve_grid", "logdet_approx"):
        sel = [(n, s) for r, n, s in rows if r == name]
        if len(sel) >= 2:
            slopes[name] = _slope([n for n, _ in sel], [s for _, s in sel])
    _write_json(out.with_suffix(".slopes.json"), slopes)
    print(json.dumps(slopes))
    return EXIT_OK


def run_logdet(args) -> int:
    cfg = load_config(args.config)
    op = operator_from_config(cfg)
    a, b = _interval(args, cfg) or (0.0, 1.0)
    grid = make_grid(a, b, args.n)
    val = logdet_approx(op, grid, quad_from_config(cfg))
    payload = {"n": args.n, "interval": [a, b], "logdet_approx": val}
    oc = cfg.get("operator", {})
    if "brownian" in oc or "operator" not in cfg:
        payload["closed_form"] = logdet_closed_brownian(oc.get("brownian", "motion"), oc.get("lambda", 1.0), a, b, args.n)
    if args.oracle:
        from .oracle import dense_for_operator

        payload["dense_logdet"] = dense_for_operator(op, grid).logdet_A0()
    print(json.dumps(payload))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opmix", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="JSON configuration")
        p.add_argument("--interval", nargs=2, type=float, metavar=("A", "B"))
        if data:
            p.add_argument("--data", required=True, help="long-format CSV")

    p = sub.add_parser("fit", help="REML fit with BLUPs")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--oracle", action="store_true", help="cross-check against the dense solution")
    p.set_defaults(func=run_fit)

    p = sub.add_parser("predict", help="BLUPs at saved variance parameters")
    common(p)
    p.add_argument("--fit", required=True, help="fit.json from a previous fit")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--oracle", action="store_true")
    p.set_defaults(func=run_predict)

    p = sub.add_parser("simulate", help="draw a synthetic data set")
    common(p, data=False)
    p.add_argument("--out", required=True, help="CSV path; truth goes to <out>.truth.json")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=run_simulate)

    p = sub.add_parser("benchmark", help="time solve_grid and logdet_approx")
    common(p, data=False)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--sizes", nargs="+", default=["1000", "10000", "100000", "1000000"])
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=run_benchmark)

    p = sub.add_parser("logdet", help="approximate log det(I + R0)")
    common(p, data=False)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--oracle", action="store_true", help="also compute the dense log-determinant")
    p.set_defaults(func=run_logdet)
    return parser


def _thread_limit():
    raw = os.environ.get("OPMIX_THREADS")
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"OPMIX_THREADS must be an integer, got {raw!r}") from None
    return threadpool_limits(limits=max(n, 1))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except (CliError, ValueError, ArithmeticError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
