"""Command-line entry point: ``coopsynth <subcommand> --config <path|name>``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import ConfigError, load
from .dist import synth_dist
from .lumped import oracle_grid, synth_lumped
from .sstools import block_diag_compose, close_lft, hinf_norm
from .graph import eval_adjacency

log = logging.getLogger("coopsynth")

SUBCOMMANDS = {
    "synth-lumped": "lumped",
    "synth-dist": "distributed",
    "oracle": "oracle",
    "verify": "verify",
    "bench": "bench",
}

# wall-clock figures quoted for the four-agent example; kept as metadata only
REFERENCE_SECONDS = {"lumped": 16.8125, "distributed": 18.3750}


@dataclass
class RunReport:
    mode: str
    results: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    failed: bool = False
    error: str = None

    def to_dict(self):
        return {"mode": self.mode, "failed": self.failed, "error": self.error,
                "results": self.results, "timings": self.timings}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    return obj


def write_trace(path, result):
    n = len(np.atleast_1d(result.trace[0].theta)) if result.trace else 0
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        names = ["alpha"] if n == 1 else [f"alpha{k + 1}" for k in range(n)]
        wr.writerow(["iter", *names, "gamma", "status", "ms"])
        for e in result.trace:
            wr.writerow([e.iteration, *np.atleast_1d(e.theta).tolist(), e.gamma, e.status,
                         f"{e.ms:.3f}"])


def write_curve(path, curve):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["alpha", "gamma"])
        wr.writerows(curve.tolist())


def _synth_report(cfg, method, out, dump):
    param = cfg.parameterization()
    agents = cfg.stacked_agents(param.N)
    st = cfg.synthesis_settings(dump)
    t0 = time.perf_counter()
    if method == "lumped":
        res = synth_lumped(block_diag_compose(agents), param, cfg.theta_init, st)
    else:
        res = synth_dist(agents, param, cfg.theta_init, st)
    total = (time.perf_counter() - t0) * 1e3
    write_trace(os.path.join(out, "trace.csv"), res)
    S = block_diag_compose(agents)
    cl = close_lft(S, eval_adjacency(param, res.theta_star))
    d = res.to_dict()
    d["hinf_at_theta_star"] = hinf_norm(cl)
    d["reference_seconds"] = REFERENCE_SECONDS[method]
    return RunReport(mode=method, results=d,
                     timings={"assembly_ms": res.assembly_ms, "solve_ms": res.solve_ms,
                              "total_ms": total}), res


def _oracle_report(cfg, out):
    param = cfg.parameterization()
    S = block_diag_compose(cfg.stacked_agents(param.N))
    t0 = time.perf_counter()
    best, gbest, curve = oracle_grid(S, param, cfg.oracle_resolution)
    write_curve(os.path.join(out, "curve.csv"), curve)
    return RunReport(mode="oracle",
                     results={"alpha_best": best.tolist(), "gamma_best": gbest,
                              "points": len(curve), "resolution": cfg.oracle_resolution},
                     timings={"total_ms": (time.perf_counter() - t0) * 1e3})


def _verify_report(cfg, out, dump):
    from .verify import audit_suite

    param = cfg.parameterization()
    agents = cfg.stacked_agents(param.N)
    S = block_diag_compose(agents)
    st = cfg.synthesis_settings(dump)
    t0 = time.perf_counter()
    lumped = synth_lumped(S, param, cfg.theta_init, st)
    dist = synth_dist(agents, param, cfg.theta_init, st)
    v = cfg.verify
    summary = audit_suite(S, agents, param, lumped, dist, trials=v.trials, T=v.T, dt=v.dt,
                          seed=cfg.seed, alpha_samples=v.alpha_samples,
                          neutrality_trials=v.neutrality_trials, settings=st,
                          trajectory_csv=os.path.join(out, "trajectory.csv"))
    summary["lumped"] = lumped.to_dict()
    summary["distributed"] = dist.to_dict()
    return RunReport(mode="verify", results=summary,
                     timings={"total_ms": (time.perf_counter() - t0) * 1e3})


def loglog_slope(ns, values):
    ns, values = np.asarray(ns, dtype=float), np.asarray(values, dtype=float)
    ok = np.isfinite(values) & (values > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(ns[ok]), np.log(values[ok]), 1)[0])


def predicted_unknowns(method, N, n_x, n_w=1):
    """Leading-order variable growth laws of the two formulations."""
    if method == "lumped":
        return (n_x * N) ** 2
    return n_x ** 2 * N + n_w * N * (N + 1)


def bench(cfg, out=None, dump=None):
    """Per-N synthesis timings on the benchmark topology family."""
    template = cfg.agent_models()[0]
    st = cfg.synthesis_settings(dump)
    rows = []
    plan = [("lumped", n) for n in cfg.bench.lumped] + \
           [("distributed", n) for n in cfg.bench.distributed]
    for method, N in plan:
        param = cfg.parameterization(N)
        agents = [template] * N
        row = {"N": N, "method": method, "unknowns": "", "assembly_ms": "", "solve_ms": "",
               "gamma": "", "status": "ok"}
        try:
            if method == "lumped":
                res = synth_lumped(block_diag_compose(agents), param, cfg.theta_init, st)
            else:
                res = synth_dist(agents, param, cfg.theta_init, st)
            row.update(unknowns=res.unknowns, assembly_ms=res.assembly_ms,
                       solve_ms=res.solve_ms, gamma=res.gamma_star)
        except Exception as exc:   # recorded per N; the sweep continues
            log.warning("bench %s N=%d failed: %s", method, N, exc)
            row["status"] = f"failed: {exc}"
        log.info("bench %s N=%d %s", method, N, row)
        rows.append(row)
    if out:
        with open(os.path.join(out, "bench.csv"), "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
            wr.writeheader()
            wr.writerows(rows)
    fits = {}
    for method in ("lumped", "distributed"):
        sel = [r for r in rows if r["method"] == method and r["status"] == "ok"]
        ns = [r["N"] for r in sel]
        times = [r["solve_ms"] for r in sel]
        fits[method] = {
            "N": ns,
            "solve_ms": times,
            "unknowns": [r["unknowns"] for r in sel],
            "time_slope": loglog_slope(ns, times),
            "unknowns_slope": loglog_slope(ns, [r["unknowns"] for r in sel]),
            "predicted_law": "(n_x N)^2" if method == "lumped" else "n_x^2 N + n_w N (N+1)",
            "predicted_slope": loglog_slope(
                ns, [predicted_unknowns(method, n, template.n_x, template.n_w) for n in ns]),
            "monotone": bool(np.all(np.diff(times) > 0)) if len(times) > 1 else True,
        }
    return rows, fits


def run(cfg, out=None, dump_sdp=False):
    """Dispatch on ``cfg.mode``; writes CSV files and ``summary.json`` into ``out``."""
    out = out or cfg.output
    os.makedirs(out, exist_ok=True)
    dump = os.path.join(out, "sdp") if dump_sdp else None
    t0 = time.perf_counter()
    try:
        if cfg.mode in ("lumped", "distributed"):
            report, _ = _synth_report(cfg, cfg.mode, out, dump)
        elif cfg.mode == "oracle":
            report = _oracle_report(cfg, out)
        elif cfg.mode == "verify":
            report = _verify_report(cfg, out, dump)
        else:
            rows, fits = bench(cfg, out, dump)
            report = RunReport(mode="bench", results={"rows": rows, "fits": fits},
                               timings={"total_ms": (time.perf_counter() - t0) * 1e3})
            report.failed = any(r["status"] != "ok" for r in rows)
    except (ValueError, np.linalg.LinAlgError) as exc:
        report = RunReport(mode=cfg.mode, failed=True, error=str(exc))
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(_jsonable(report.to_dict()), fh, indent=2)
    return report


def build_parser():
    p = argparse.ArgumentParser(prog="coopsynth", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML file or bundled config name")
        s.add_argument("--out", help="output directory (default: config 'output')")
        s.add_argument("--seed", type=int, help="seed for randomized audits")
        s.add_argument("--tol-gamma", type=float)
        s.add_argument("--max-iter", type=int)
        s.add_argument("--debug-dump-sdp", action="store_true",
                       help="write every SDP solved as SDPA .dat-s under <out>/sdp")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    cfg.mode = SUBCOMMANDS[args.command]
    if args.seed is not None:
        cfg.seed = args.seed
    if args.tol_gamma is not None:
        cfg.solver.tol_gamma = args.tol_gamma
    if args.max_iter is not None:
        cfg.solver.max_iter = args.max_iter
    report = run(cfg, args.out, args.debug_dump_sdp)
    out = args.out or cfg.output
    if report.failed:
        print(f"{cfg.mode} failed: {report.error or 'see summary.json'}", file=sys.stderr)
        return 1
    r = report.results
    if cfg.mode in ("lumped", "distributed"):
        print(f"{cfg.mode}: theta*={r['theta_star']} gamma*={r['gamma_star']:.6f} "
              f"unknowns={r['unknowns']} iterations={r['iterations']}")
    elif cfg.mode == "oracle":
        print(f"oracle: alpha_best={r['alpha_best']} gamma_best={r['gamma_best']:.6f} "
              f"points={r['points']}")
    elif cfg.mode == "bench":
        for m, f in r["fits"].items():
            print(f"{m}: N={f['N']} time slope={f['time_slope']:.2f} "
                  f"unknowns slope={f['unknowns_slope']:.2f} "
                  f"predicted {f['predicted_law']} slope={f['predicted_slope']:.2f}")
    else:
        print(json.dumps(_jsonable({k: v for k, v in r.items()
                                    if k in ("dissipation", "theorem1", "structure")}), indent=2))
    print(f"outputs written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
