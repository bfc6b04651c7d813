"""Command-line front door: solve problems, run benchmark suites, evaluate
convergence certificates, and render figures from the emitted CSV files."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as _bench
from . import diagnostics as _diag
from .core import (DivergedError, KKTPoint, Metric, OracleFailure,
                   load_problem)
from .solvers import AlgParams, StopRule, Trace, run

EX_OK = 0
EX_FAIL = 1
EX_MAXITER = 2
EX_DIVERGED = 3
EX_USAGE = 64
EX_DATAERR = 65
EX_CANTCREAT = 73
EX_IOERR = 74


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EX_USAGE)


def _parse_gen(spec: str):
    """Generator mini-language: gen:family,key=val,...  e.g.
    gen:bp,m=60,n=100,seed=7 or gen:l1l2,m=300,n=600,beta=0.5."""
    body = spec[len("gen:"):]
    parts = body.split(",")
    family = parts[0]
    kv = {}
    for item in parts[1:]:
        if "=" not in item:
            raise ValueError(f"bad generator field {item!r}")
        key, val = item.split("=", 1)
        kv[key] = val
    m = int(kv.pop("m"))
    n = int(kv.pop("n"))
    seed = int(kv.pop("seed", "0"))
    if family in ("bp", "basis_pursuit"):
        sparsity = float(kv.pop("sparsity", "0.1"))
        _reject_extras(kv)
        return _bench.gen_basis_pursuit(m, n, seed, sparsity)
    if family == "nlcqp":
        ref = kv.pop("ref", "1") not in ("0", "false")
        _reject_extras(kv)
        return _bench.gen_nlcqp(m, n, seed, with_reference=ref)
    if family == "l1l2":
        beta = float(kv.pop("beta", "0.5"))
        noise = float(kv.pop("noise", "1e-4"))
        _reject_extras(kv)
        return _bench.gen_l1l2(m, n, seed, beta, noise)
    raise ValueError(f"unknown generator family {family!r}")


def _reject_extras(kv: dict):
    if kv:
        raise ValueError(f"unknown generator keys {sorted(kv)}")


def _load_problem_arg(spec: str):
    if spec.startswith("gen:"):
        return _parse_gen(spec)
    return load_problem(spec)


def _parse_metric(text: str) -> Metric | None:
    if text in (None, "auto"):
        return None
    if text == "zero":
        return Metric.zeros()
    return Metric.scaled(float(text))


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def cmd_solve(args) -> int:
    try:
        p = _load_problem_arg(args.problem)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: cannot load problem: {exc}", file=sys.stderr)
        return EX_USAGE

    stop_mode = args.stop
    if stop_mode == "auto":
        if args.tol is None:
            stop_mode = "none"
        elif p.reference is not None and p.reference.x_star is not None:
            stop_mode = "res-rel"
        else:
            stop_mode = "feas"
    if stop_mode == "none":
        stop = StopRule("max_iter_only")
    elif args.tol is None:
        print("error: --tol required for the chosen stop rule", file=sys.stderr)
        return EX_USAGE
    else:
        stop = StopRule("feas_tol" if stop_mode == "feas" else "res_plus_rel",
                        args.tol)

    try:
        params = AlgParams(
            alpha=args.alpha, s=args.s, metric=_parse_metric(args.metric),
            eps_schedule=(None if args.inner_tol is None
                          else (lambda k, v=args.inner_tol: v)),
            max_outer=args.max_iter, stop=stop,
            inner_max_iter=args.inner_max,
            certificate_mode=not args.no_certificate_mode)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EX_USAGE

    out = Path(args.out)
    code = EX_OK
    try:
        trace = run(p, args.algorithm, params)
    except DivergedError as exc:
        trace = exc.trace if exc.trace is not None else Trace()
        trace.summary = {"exit_reason": "diverged", "iterations": len(trace),
                         "converged": False}
        code = EX_DIVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EX_USAGE
    trace.to_csv(out)
    if args.plot and len(trace):
        from .report import plot_trace
        plot_trace(out)
    summary = dict(trace.summary)
    summary["trace"] = str(out)
    summary["algorithm"] = args.algorithm
    print(json.dumps(summary))
    if code == EX_OK and trace.summary.get("exit_reason") != "converged":
        code = EX_MAXITER
    return code


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def cmd_bench(args) -> int:
    try:
        if args.preset:
            beta = args.beta if args.beta is not None else None
            cfgs = [_bench.preset_config(args.preset, args.out, args.subtol,
                                         beta, args.seed)]
        else:
            with open(args.config) as fh:
                raw = json.load(fh)
            raw_list = raw if isinstance(raw, list) else [raw]
            cfgs = []
            for i, obj in enumerate(raw_list):
                obj.setdefault("out_dir", args.out)
                if len(raw_list) > 1:
                    obj["out_dir"] = str(Path(args.out) / f"cfg_{i:03d}")
                if args.subtol is not None:
                    obj["subtol"] = args.subtol
                cfgs.append(_bench.ExperimentConfig.from_dict(obj))
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EX_DATAERR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EX_IOERR

    for cfg in cfgs:
        marker = Path(cfg.out_dir) / "summary.csv"
        if marker.exists() and not args.force:
            print(f"error: {marker} exists; pass --force to overwrite",
                  file=sys.stderr)
            return EX_CANTCREAT

    try:
        for cfg in cfgs:
            report = _bench.run_experiment(cfg)
            if args.plot:
                from .report import plot_summary, plot_trace
                for tp in report["traces"]:
                    try:
                        plot_trace(tp)
                    except ValueError:
                        pass  # empty/diverged traces have nothing to draw
                plot_summary(Path(cfg.out_dir) / "summary.csv")
            failed = [r for r in report["rows"] if r.get("error")]
            print(json.dumps({
                "out_dir": str(cfg.out_dir),
                "rows": len(report["rows"]),
                "failed_rows": len(failed),
            }))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EX_IOERR
    return EX_OK


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------

def _certify_reference(p, args):
    ref = p.reference
    if args.oracle or ref is None:
        ref = _bench.compute_reference_oracle(p, force=args.oracle)
    return ref


def cmd_certify(args) -> int:
    try:
        trace = Trace.from_csv(args.trace)
    except (ValueError, OSError) as exc:
        print(f"error: cannot read trace: {exc}", file=sys.stderr)
        return EX_DATAERR
    if len(trace) == 0:
        print("error: insufficient data: trace has no records", file=sys.stderr)
        return EX_DATAERR
    try:
        p = _load_problem_arg(args.problem)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: cannot load problem: {exc}", file=sys.stderr)
        return EX_USAGE

    alpha = args.alpha if args.alpha is not None else trace.meta.get("alpha")
    s = args.s if args.s is not None else trace.meta.get("s")
    if alpha is None or s is None:
        print("error: alpha and s not in trace metadata; pass --alpha/--s",
              file=sys.stderr)
        return EX_DATAERR

    try:
        ref = _certify_reference(p, args)
    except OracleFailure as exc:
        print(f"error: oracle failed: {exc}", file=sys.stderr)
        return EX_FAIL
    kkt = None
    if ref is not None and ref.lambda_star is not None:
        kkt = KKTPoint(ref.x_star, ref.lambda_star)

    # Reconstruct initial energy / objective gaps when the solve ran
    # without a reference but one is available now.
    if kkt is not None and "E1" not in trace.meta and "x1" in trace.meta:
        x1 = np.asarray(trace.meta["x1"], float)
        lam1 = np.asarray(trace.meta["lambda1"], float)
        M0 = Metric.from_dict(trace.meta["metric0"])
        from .core import seminorm_sq
        trace.meta["E1"] = 0.5 * seminorm_sq(M0, x1 - ref.x_star) \
            + 0.5 * float(np.linalg.norm(lam1 - ref.lambda_star) ** 2)
    F_star = ref.F_star if ref is not None else None
    if F_star is not None:
        for rec in trace.records:
            if rec.obj_gap is None and rec.objective is not None:
                rec.obj_gap = rec.objective - F_star

    certs = []
    certs.append(_diag.energy_monotone_certificate(trace, margin=args.energy_margin))
    E1 = trace.meta.get("E1")
    if E1 is None:
        certs.append(_diag._unavailable("feasibility_bound", args.margin,
                                        "no initial energy available"))
        certs.append(_diag._unavailable("objective_bound", args.margin,
                                        "no initial energy available"))
    else:
        const = E1
        if trace.meta.get("algorithm") == "iilppd" and p.L_g > 0:
            eps_norms = trace.column("eps_norm")
            tail = 0.0
            if trace.meta.get("eps_schedule") == "cubic" and "eps0" in trace.meta:
                tail = _diag.cubic_schedule_tail(trace.meta["eps0"], len(trace))
            const = _diag.rate_constant_inexact(E1, alpha, s, p.L_g, eps_norms,
                                                tail)
        certs.append(_diag.feasibility_certificate(trace, const, alpha, s,
                                                   args.margin))
        if kkt is not None:
            certs.append(_diag.objective_certificate(trace, const, alpha, s,
                                                     kkt, args.margin))
        else:
            certs.append(_diag._unavailable("objective_bound", args.margin,
                                            "no multiplier available"))
    certs.append(_diag.square_summability(trace, alpha, margin=args.margin))
    certs.append(_diag.rate_slope_certificate(
        trace, k_min=args.window[0], k_max=args.window[1],
        threshold=args.slope_threshold))

    payload = [c.to_dict() for c in certs]
    text = json.dumps(payload, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    failed = [c for c in certs if c.passed is False]
    return EX_FAIL if failed else EX_OK


# ---------------------------------------------------------------------------
# plot
# ---------------------------------------------------------------------------

def cmd_plot(args) -> int:
    from .report import plot_summary, plot_trace
    wrote = []
    try:
        for tp in args.trace or []:
            wrote.append(plot_trace(tp, args.out if len(args.trace or []) == 1 else None))
        if args.summary:
            wrote.append(plot_summary(args.summary,
                                      args.out if not args.trace else None))
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EX_DATAERR
    if not wrote:
        print("error: nothing to plot; pass --trace and/or --summary",
              file=sys.stderr)
        return EX_USAGE
    print(json.dumps({"figures": wrote}))
    return EX_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    ap = _Parser(prog="ipd", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="solve one problem and write a trace CSV")
    sp.add_argument("--problem", required=True,
                    help="problem JSON file or gen:family,m=..,n=..,seed=..")
    sp.add_argument("--algorithm", required=True,
                    choices=["ippd", "iilppd", "alm", "prox-alm", "lin-alm", "aalm"])
    sp.add_argument("--alpha", type=float, default=3.0)
    sp.add_argument("--s", type=float, default=1.0)
    sp.add_argument("--metric", default="auto",
                    help="auto | zero | C (scaled identity)")
    sp.add_argument("--max-iter", type=int, default=500)
    sp.add_argument("--tol", type=float, default=None)
    sp.add_argument("--stop", choices=["auto", "feas", "res-rel", "none"],
                    default="auto")
    sp.add_argument("--inner-tol", type=float, default=None,
                    help="fixed inner residual target (default: 1/k^3 schedule)")
    sp.add_argument("--inner-max", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0, help="seed for gen: problems")
    sp.add_argument("--out", default="trace.csv")
    sp.add_argument("--no-certificate-mode", action="store_true")
    sp.add_argument("--plot", action="store_true",
                    help="also render a convergence PNG next to the trace")
    sp.set_defaults(func=cmd_solve)

    bp = sub.add_parser("bench", help="run an experiment suite")
    group = bp.add_mutually_exclusive_group(required=True)
    group.add_argument("--config", help="ExperimentConfig JSON (object or list)")
    group.add_argument("--preset",
                       choices=["nlcqp-paper", "bp-paper", "l1l2-paper"])
    bp.add_argument("--subtol", type=float, default=None)
    bp.add_argument("--beta", type=float, default=None)
    bp.add_argument("--seed", type=int, default=0)
    bp.add_argument("--out", default="bench_out")
    bp.add_argument("--force", action="store_true")
    bp.add_argument("--plot", action="store_true",
                    help="render PNG figures alongside the CSV reports")
    bp.set_defaults(func=cmd_bench)

    cp = sub.add_parser("certify", help="evaluate convergence certificates")
    cp.add_argument("--trace", required=True)
    cp.add_argument("--problem", required=True)
    cp.add_argument("--oracle", action="store_true",
                    help="compute a fresh oracle reference")
    cp.add_argument("--alpha", type=float, default=None)
    cp.add_argument("--s", type=float, default=None)
    cp.add_argument("--margin", type=float, default=1e-6)
    cp.add_argument("--energy-margin", type=float, default=1e-8)
    cp.add_argument("--slope-threshold", type=float, default=-1.5)
    cp.add_argument("--window", type=int, nargs=2, default=(10, 500),
                    metavar=("KMIN", "KMAX"))
    cp.add_argument("--out", default=None)
    cp.set_defaults(func=cmd_certify)

    pp = sub.add_parser("plot", help="render figures from CSV outputs")
    pp.add_argument("--trace", nargs="*", default=None)
    pp.add_argument("--summary", default=None)
    pp.add_argument("--out", default=None)
    pp.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EX_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
