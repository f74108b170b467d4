"""Command-line entry point: ``jqlab <command> ...``.

Exit codes: 0 success or all checks passed, 1 usage error, 2 failed
checks, 3 runtime error. Output directories default to ``$JQLAB_OUT``
(or ``./jqlab-out``); an existing non-empty directory is never written
into unless ``--on-collision overwrite`` is given.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import shutil
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import dynamics as dyn
from .errors import ConfigError, DomainError, JQError
from .io import default_out_dir, write_csv

EXIT_OK, EXIT_USAGE, EXIT_FAILED, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# run bookkeeping
# --------------------------------------------------------------------------

def _canonical(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(config: dict) -> str:
    return hashlib.sha256(_canonical(config).encode()).hexdigest()[:12]


def run_id(config: dict) -> str:
    """Content hash of the configuration and the library version."""
    return hashlib.sha256((_canonical(config) + "|" + __version__).encode()).hexdigest()[:12]


@dataclass
class RunRecord:
    run_id: str
    config: dict
    outputs: list = field(default_factory=list)
    duration: float = 0.0
    status: str = "running"
    extra: dict = field(default_factory=dict)

    @property
    def comment(self) -> str:
        return f"run_id={self.run_id} config_hash={config_hash(self.config)}"

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "record.json"
        data = asdict(self)
        data["outputs"] = [str(p) for p in self.outputs]
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return path


def prepare_out(requested: str | None, default_name: str, policy: str) -> Path:
    """Resolve an output directory under the collision ``policy``.

    ``suffix`` picks the first free ``name-N``; ``error`` refuses;
    ``overwrite`` empties the directory first.
    """
    path = Path(requested) if requested else default_out_dir() / default_name
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        if policy == "error":
            raise UsageError(f"output directory {path} exists and is not empty")
        if policy == "overwrite":
            if path.is_dir():
                shutil.rmtree(path)
            else:
                path.unlink()
        else:
            n = 1
            while True:
                cand = path.with_name(f"{path.name}-{n}")
                if not cand.exists() or (cand.is_dir() and not any(cand.iterdir())):
                    path = cand
                    break
                n += 1
    path.mkdir(parents=True, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# argument helpers
# --------------------------------------------------------------------------

def float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    return vals


def int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def q_grid(text: str) -> list[float]:
    """``start:stop:step`` with ``stop`` included."""
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("q grid must look like start:stop:step") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("q grid needs step > 0 and stop >= start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 12) for k in range(n)]


def decades(text: str) -> list[float]:
    """``a:b`` -> ``10**-a, ..., 10**-b``."""
    try:
        a, b = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("decades must look like 2:7") from None
    if b < a:
        raise argparse.ArgumentTypeError("decades must be increasing")
    return [10.0 ** -k for k in range(a, b + 1)]


def _fmt_q(q: float) -> str:
    return format(q, "g").replace(".", "p")


# --------------------------------------------------------------------------
# escort
# --------------------------------------------------------------------------

def cmd_escort(args) -> int:
    from .acceptance import simplex_oracle
    from .qcore import check_simplex, escort_minimizer

    try:
        alpha = check_simplex(args.alpha)
    except DomainError as exc:
        raise UsageError(f"bad --alpha: {exc}") from None
    qs = args.q_grid if args.q_grid is not None else [args.q]
    header = ["q"] + [f"theta_{j + 1}" for j in range(alpha.size)] + ["oracle_gap", "max_ratio", "sharper_than_next"]
    rows, prev = [], None
    for q in qs:
        theta = escort_minimizer(alpha, q)
        if q == 0.0:
            gap = math.nan
        else:
            gap = float(np.max(np.abs(theta - simplex_oracle(alpha, q))))
        lo = float(theta.min())
        ratio = float(theta.max() / lo) if lo > 0 else math.inf
        rows.append([q, *theta, gap, ratio, ""])
        if prev is not None:
            rows[-2][-1] = int(prev >= ratio)
        prev = ratio
    print(",".join(header))
    for r in rows:
        print(",".join(_cell(v) for v in r))
    if 0.0 in qs:
        print("# q=0 returns the vertex at argmax(alpha); ties go to the lowest index")
    if len(qs) > 1:
        ratios = [r[-2] for r in rows]
        mono = all(a >= b for a, b in zip(ratios, ratios[1:]))
        print(f"# monotone sharpening as q decreases: {'yes' if mono else 'no'}")
    if args.out:
        cfg = {"command": "escort", "alpha": list(alpha), "q": qs}
        rec = RunRecord(run_id(cfg), cfg)
        write_csv(args.out, header, rows, comment=rec.comment)
    return EXIT_OK


def _cell(v) -> str:
    from .io import fmt

    if isinstance(v, float):
        return format(v, ".10g") if math.isfinite(v) else fmt(v)
    return fmt(v)


# --------------------------------------------------------------------------
# dynamics
# --------------------------------------------------------------------------

SWEEP_HEADER = ("q", "p0", "eps", "T", "status", "slope", "r2")
TRACE_HEADER = ("t", "p", "pdot_predicted", "pdot_measured")


def _dynamics_escape(args, out: Path, rec: RunRecord):
    rows, plots = [], {}
    for q in args.q:
        times, statuses = [], []
        for p0 in args.p0:
            tr = dyn.integrate_sigmoid_flow(q, p0, args.delta, args.budget)
            rec.outputs.append(write_csv(out / f"trace_escape_q{_fmt_q(q)}_p0-{p0:.0e}.csv", TRACE_HEADER, tr.rows(), rec.comment))
            T = tr.crossing_time
            times.append(T)
            statuses.append(tr.status if T is not None else "no-crossing")
        slope = r2 = math.nan
        if all(T is not None for T in times) and len(args.p0) >= 4:
            try:
                slope, r2 = dyn.fit_escape_exponent(q, args.p0, times)
            except DomainError:
                pass
        for p0, T, st in zip(args.p0, times, statuses):
            rows.append((q, p0, math.nan, math.nan if T is None else T, st, slope, r2))
        plots[q] = [(math.log(1.0 / p0), math.log(T) if (T and q < 1) else (T if T else math.nan))
                    for p0, T in zip(args.p0, times)]
    for q, series in plots.items():
        ylab = "T" if q == 1.0 else "log_T"
        rec.outputs.append(write_csv(out / f"plot_escape_q{_fmt_q(q)}.csv", ("log_inv_p0", ylab), series, rec.comment))
    return rows


def _dynamics_noise(args, out: Path, rec: RunRecord):
    rows, plots = [], {}
    for q in args.q:
        star = dyn.noise_equilibrium(q, args.eps)
        eta = args.eta if args.eta is not None else (star / 10.0 if q > 0 else 0.5)
        grid = args.ptilde0 if args.ptilde0 is not None else (
            [eta * 10.0 ** -k for k in range(3, 8)] if q > 0 else [1e-3 * 10.0 ** -k for k in range(0, 5)]
        )
        times, statuses = [], []
        for pt0 in grid:
            tr = dyn.integrate_noise_flow(q, args.eps, pt0, eta, args.budget)
            rec.outputs.append(write_csv(out / f"trace_noise_q{_fmt_q(q)}_p0-{pt0:.2e}.csv", TRACE_HEADER, tr.rows(), rec.comment))
            T = tr.crossing_time
            times.append(T)
            statuses.append(tr.status if T is not None else "no-crossing")
        slope = r2 = math.nan
        if q > 0 and all(T is not None for T in times) and len(grid) >= 4:
            x = np.log(1.0 / np.asarray(grid))
            y = np.asarray(times) if q == 1.0 else np.log(times)
            slope, r2 = dyn._linfit(x, y)
        for pt0, T, st in zip(grid, times, statuses):
            rows.append((q, pt0, args.eps, math.nan if T is None else T, st, slope, r2))
        plots[q] = [(math.log(1.0 / p), math.nan if T is None else T) for p, T in zip(grid, times)]
    for q, series in plots.items():
        rec.outputs.append(write_csv(out / f"plot_noise_q{_fmt_q(q)}.csv", ("log_inv_ptilde0", "T"), series, rec.comment))
    return rows


def _dynamics_near_opt(args, out: Path, rec: RunRecord):
    rows = []
    for e0 in args.eps0:
        r = dyn.near_optimality_ratio(args.q[0], args.q2, e0, args.eps1)
        rows.append((args.q[0], args.q2, e0, args.eps1, r))
    rec.outputs.append(write_csv(out / "plot_near_opt.csv", ("eps0", "ratio"), [(r[2], r[4]) for r in rows], rec.comment))
    return rows


def cmd_dynamics(args) -> int:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "out", "on_collision")}
    cfg["command"] = "dynamics"
    rec = RunRecord(run_id(cfg), cfg)
    t0 = time.perf_counter()
    out = prepare_out(args.out, f"dynamics-{args.kind}-{rec.run_id}", args.on_collision)
    try:
        if args.kind == "escape":
            rows = _dynamics_escape(args, out, rec)
            rec.outputs.append(write_csv(out / "sweep.csv", SWEEP_HEADER, rows, rec.comment))
        elif args.kind == "noise":
            rows = _dynamics_noise(args, out, rec)
            rec.outputs.append(write_csv(out / "sweep.csv", SWEEP_HEADER, rows, rec.comment))
        else:
            rows = _dynamics_near_opt(args, out, rec)
            rec.outputs.append(write_csv(out / "near_opt.csv", ("q", "q2", "eps0", "eps1", "ratio"), rows, rec.comment))
    except DomainError as exc:
        raise UsageError(str(exc)) from None
    rec.status = "completed"
    rec.duration = time.perf_counter() - t0
    rec.write(out)
    print(f"wrote {len(rec.outputs)} files to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# bias
# --------------------------------------------------------------------------

def cmd_bias(args) -> int:
    from . import lab
    from .acceptance import estimator_model
    from .models import Example, load_model

    if args.model:
        model = load_model(args.model)
        if args.target is None:
            raise UsageError("--target is required with --model")
        ex = Example(args.x, tuple(args.target))
    else:
        model, ex = estimator_model()
    if not args.M:
        raise UsageError("--M needs at least one value")
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "out", "on_collision")}
    cfg["command"] = "bias"
    rec = RunRecord(run_id(cfg), cfg)
    t0 = time.perf_counter()
    out = prepare_out(args.out, f"bias-{rec.run_id}", args.on_collision)
    lines, failures, reports = [], [], []
    for M in args.M:
        rep = lab.measure_bias_variance(model, ex, args.estimator, args.q, M, args.R, args.seed + M)
        reports.append(rep)
        rec.outputs.append(write_csv(out / f"report_{args.estimator}_M{M}.csv", lab.REPORT_HEADER, rep.rows(), rec.comment))
        if not rep.flags["degenerate_fraction_ok"]:
            failures.append(f"degenerate pools at M={M}: {rep.n_degenerate}/{rep.R}")
        if args.q == 0.0 and args.estimator in ("plugin", "rloo"):
            ok = rep.flags["bias_ci_contains_zero"]
            lines.append(f"bias: {'PASS' if ok else 'FAIL'} (CI contains 0) at M={M}")
            if not ok:
                failures.append(f"bias CI excludes 0 at M={M}")
    M0 = args.M[0]
    pr = lab.compare_estimators(model, ex, args.q, M0, args.K or M0, args.R, args.seed)
    for key, label in (
        ("tower_identity", "tower (resampling mean equals plug-in)"),
        ("rloo_mean_matches_plugin", "rloo mean equals plug-in"),
        ("paft_mean_matches_plugin", "resampled mean equals plug-in"),
    ):
        ok = pr.flags[key]
        lines.append(f"{label}: {'PASS' if ok else 'FAIL'}")
        if not ok:
            failures.append(label)
    lines.append(f"variance ordering fraction: {pr.var_order_fraction:.4f}")
    if args.q > 0.0 and len(args.M) >= 2 and args.estimator == "plugin":
        fit = lab.fit_bias_law(reports)
        ok = fit.matches(3.0)
        lines.append(f"bias-law leading coefficient: {'PASS' if ok else 'FAIL'} (max |z| = {np.max(np.abs(fit.z_scores())):.3f})")
        if not ok:
            failures.append("bias-law leading coefficient")
        rec.outputs.append(write_csv(
            out / "bias_law.csv", ("coord", "a_fit", "a_predicted", "a_se"),
            [(j, fit.a[j], fit.predicted_a[j], fit.a_se[j]) for j in range(fit.a.size)], rec.comment,
        ))
        rec.outputs.append(write_csv(
            out / "plot_bias_vs_M.csv", ("M", "max_abs_bias"),
            [(r.M, float(np.max(np.abs(r.bias)))) for r in reports], rec.comment,
        ))
    summary = {"lines": lines, "failures": failures, "reports": [r.summary() for r in reports]}
    lab.write_summary_json(summary, out / "summary.json")
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    rec.status = "failed" if failures else "passed"
    rec.duration = time.perf_counter() - t0
    rec.write(out)
    for line in lines:
        print(line)
    if failures:
        print("failed: " + "; ".join(failures), file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


# --------------------------------------------------------------------------
# train / qsweep
# --------------------------------------------------------------------------

def _task_for(cfg, task_opts: dict):
    from .trainer import make_cold_task, make_noisy_task, make_warm_task

    seed = int(task_opts.get("seed", cfg.seed))
    try:
        if cfg.scenario == "cold":
            return make_cold_task(float(task_opts.get("p0", 1e-3)), seed, int(task_opts.get("n_examples", 32)))
        if cfg.scenario == "warm":
            return make_warm_task(float(task_opts.get("p0", 0.3)), seed, int(task_opts.get("n_examples", 32)))
        return make_noisy_task(float(task_opts.get("eps", 0.2)), seed, copies=int(task_opts.get("copies", 10)))
    except DomainError as exc:
        raise UsageError(f"task: {exc}") from None


def cmd_train(args) -> int:
    from .models import save_model
    from .trainer import COMPLETED, contamination, load_config, train

    cfg, task_opts, _ = load_config(args.config)
    full = {"command": "train", "config": cfg.as_dict(), "task": task_opts}
    rec = RunRecord(run_id(full), full)
    t0 = time.perf_counter()
    task = _task_for(cfg, task_opts)
    out = prepare_out(args.out, f"train-{rec.run_id}", args.on_collision)
    (out / "config.yaml").write_text(Path(args.config).read_text(encoding="utf-8"), encoding="utf-8")
    trace, model = train(cfg, task)
    rec.outputs.append(trace.write_csv(out / "metrics.csv", comment=rec.comment))
    rec.outputs.append(write_csv(
        out / "plot_mean_marginal.csv", ("step", "mean_marginal"), [(r[0], r[4]) for r in trace.rows], rec.comment,
    ))
    save_model(model, out / "model.json")
    save_model(task.model, out / "model_init.json")
    rec.outputs += [out / "config.yaml", out / "model.json", out / "model_init.json"]
    rec.status = trace.status
    rec.extra = {"escape_step": trace.escape_step, "steps_run": trace.steps_run,
                 "degenerate_pools": trace.n_degenerate, "task_tau": task.tau}
    if cfg.scenario == "noisy":
        rec.extra["contamination"] = contamination(model, task.dataset)
    rec.duration = time.perf_counter() - t0
    rec.write(out)
    print(f"run {rec.run_id}: {trace.status}, escape step {trace.escape_step}, output {out}")
    return EXIT_OK if trace.status == COMPLETED else EXIT_RUNTIME


def cmd_qsweep(args) -> int:
    from .trainer import SWEEP_HEADER as QS_HEADER
    from .trainer import load_config, qsweep

    cfg, task_opts, sweep = load_config(args.config, allow_sweep=True)
    qs = sweep.get("q")
    seeds = sweep.get("seeds", [cfg.seed])
    if not isinstance(qs, list) or len(qs) < 2:
        raise UsageError("sweep.q must list at least two q values")
    if not isinstance(seeds, list) or not seeds:
        raise UsageError("sweep.seeds must be a non-empty list")
    budget = sweep.get("budget_factor")
    full = {"command": "qsweep", "config": cfg.as_dict(), "task": task_opts, "sweep": sweep}
    rec = RunRecord(run_id(full), full)
    t0 = time.perf_counter()
    task = _task_for(cfg, task_opts)
    out = prepare_out(args.out, f"qsweep-{rec.run_id}", args.on_collision)
    res = qsweep(cfg, [float(q) for q in qs], [int(s) for s in seeds], task,
                 factor=int(budget) if budget is not None else 10)
    rec.outputs.append(write_csv(out / "sweep.csv", QS_HEADER, res.table(), rec.comment))
    rec.outputs.append(write_csv(out / "plot_escape_vs_q.csv", ("q", "escape_fraction"),
                                 list(res.escape_by_q().items()), rec.comment))
    errors = [r for r in res.rows if str(r[2]).startswith("error")]
    rec.status = "completed" if not errors else "partial"
    rec.extra = {"budget": res.budget, "q1_escape_steps": res.calibration_steps, "monotone": res.monotone()}
    rec.duration = time.perf_counter() - t0
    rec.write(out)
    for q, frac in res.escape_by_q().items():
        print(f"q={q:g}: escaped in {frac:.0%} of seeds")
    print(f"budget {res.budget} steps; monotone: {'yes' if res.monotone() else 'no'}; output {out}")
    return EXIT_RUNTIME if len(errors) == len(res.rows) else EXIT_OK


# --------------------------------------------------------------------------
# selftest
# --------------------------------------------------------------------------

def cmd_selftest(args) -> int:
    from .acceptance import CRITERIA, run_criterion, write_results

    wanted = args.only or sorted(CRITERIA)
    bad = [n for n in wanted if n not in CRITERIA]
    if bad:
        raise UsageError(f"unknown criteria: {bad}")
    cfg = {"command": "selftest", "seed": args.seed, "criteria": wanted}
    rec = RunRecord(run_id(cfg), cfg)
    t0 = time.perf_counter()
    out = prepare_out(args.out, f"selftest-{rec.run_id}", args.on_collision)
    results = []
    for n in wanted:
        res = run_criterion(n, args.seed)
        results.append(res)
        print(res.line + f"  [{res.seconds:.1f}s]", flush=True)
        for note in res.notes:
            print(f"    {note}")
    rec.outputs = write_results(results, out, rec.comment)
    rec.status = "passed" if all(r.passed for r in results) else "failed"
    rec.duration = time.perf_counter() - t0
    rec.write(out)
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed in {rec.duration:.1f}s; output {out}")
    return EXIT_OK if n_pass == len(results) else EXIT_FAILED


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="jqlab", description="q-log loss laboratory: oracles, flows, estimators and toy training.")
    p.add_argument("--version", action="version", version=f"jqlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def outputs(sp):
        sp.add_argument("--out", help="output directory (default: $JQLAB_OUT/<command>-<run id>)")
        sp.add_argument("--on-collision", choices=("suffix", "error", "overwrite"), default="suffix",
                        help="what to do when the output directory exists and is not empty")

    sp = sub.add_parser("escort", help="escort minimizer table with oracle gaps")
    sp.add_argument("--alpha", type=float_list, required=True, help="data distribution, e.g. 0.8,0.2")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--q", type=float, default=1.0, help="single commitment value (default 1)")
    g.add_argument("--q-grid", type=q_grid, help="start:stop:step, stop included")
    sp.add_argument("--out", help="optional CSV file for the table")
    sp.set_defaults(func=cmd_escort)

    sp = sub.add_parser("dynamics", help="escape, noise-fitting and near-optimality sweeps")
    sp.add_argument("kind", choices=("escape", "noise", "near-opt"), help="which flow to sweep")
    sp.add_argument("--q", type=float_list, default=[0.0, 0.25, 0.5, 0.75, 1.0], help="comma-separated q values")
    sp.add_argument("--p0", type=decades, default=decades("2:7"), help="escape starts as decades a:b (10^-a..10^-b)")
    sp.add_argument("--delta", type=float, default=0.5, help="escape level")
    sp.add_argument("--budget", type=float, default=1e15, help="time horizon")
    sp.add_argument("--eps", type=float, default=0.1, help="noise rate")
    sp.add_argument("--eta", type=float, help="contamination level (default: equilibrium / 10)")
    sp.add_argument("--ptilde0", type=float_list, help="starting contaminations")
    sp.add_argument("--q2", type=float, default=1.0, help="comparison q for near-opt")
    sp.add_argument("--eps0", type=float_list, default=[1e-1, 1e-2, 1e-3, 1e-4], help="near-opt start gaps")
    sp.add_argument("--eps1", type=float, default=1e-6, help="near-opt end gap")
    outputs(sp)
    sp.set_defaults(func=cmd_dynamics)

    sp = sub.add_parser("bias", help="empirical bias and variance reports")
    sp.add_argument("--model", help="model JSON file (default: built-in four-latent model)")
    sp.add_argument("--x", type=int, default=0, help="input id for --model")
    sp.add_argument("--target", type=int_list, help="target tokens for --model")
    sp.add_argument("--estimator", choices=("plugin", "rloo", "paft"), default="plugin", help="estimator to report")
    sp.add_argument("--q", type=float, default=0.0, help="commitment value in [0, 1]")
    sp.add_argument("--M", type=int_list, default=[16], help="comma-separated pool sizes")
    sp.add_argument("--K", type=int, help="resampling draws (default M)")
    sp.add_argument("--R", type=int, default=10_000, help="replicates per pool size")
    sp.add_argument("--seed", type=int, default=0, help="master seed")
    outputs(sp)
    sp.set_defaults(func=cmd_bias)

    sp = sub.add_parser("train", help="train on a toy task from a config file")
    sp.add_argument("config", help="YAML file with dotted keys")
    outputs(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("qsweep", help="escape-vs-q sweep from a config file with sweep.q and sweep.seeds")
    sp.add_argument("config", help="YAML file with dotted keys, including sweep.q and sweep.seeds")
    outputs(sp)
    sp.set_defaults(func=cmd_qsweep)

    sp = sub.add_parser("selftest", help="run the acceptance criteria")
    sp.add_argument("--seed", type=int, default=0, help="master seed")
    sp.add_argument("--only", type=int_list, help="comma-separated criterion numbers")
    outputs(sp)
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"jqlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (JQError, ArithmeticError, OSError, ValueError) as exc:
        print(f"jqlab: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
