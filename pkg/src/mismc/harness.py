"""Experiment plans, the MSE-vs-cost benchmark and the command-line interface."""

from __future__ import annotations

import argparse
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericalFailure
from .kalman_oracle import posterior_quadrature, read_truth_table, truth_table, write_truth_table
from .mi_estimator import (
    EstimateRecord,
    allocate_n,
    fit_rates,
    group_by_alpha,
    read_records,
    write_records,
)
from .multi_index import MultiIndex, apply_dod, as_index, dod_expand, tensor_index_set
from .particle_filter import pf_init, pf_step, write_diagnostics
from .pmcmc import LogRandomWalk, mi_pmcmc_estimate, run_pmmh
from .seeding import seed_stream
from .smc2 import run_smc2
from .spde_model import (
    CoupledKernel,
    GammaPrior,
    ModelConfig,
    load_config,
    read_key_values,
    read_observations,
    simulate_data,
    single_level,
    write_observations,
)

METHODS = ("pmcmc", "mi_pmcmc", "smc2", "mi_smc2")
_METHOD_CODE = {m: i for i, m in enumerate(METHODS)}


def parse_index(text: str) -> MultiIndex:
    """'4:2' or '4,2' -> (4, 2)."""
    try:
        return as_index(int(t) for t in text.replace(",", ":").split(":"))
    except ValueError as exc:
        raise ConfigError(f"bad multi-index {text!r}") from exc


def format_index(alpha: Sequence[int]) -> str:
    return ":".join(str(a) for a in alpha)


@dataclass
class ExperimentPlan:
    method: str
    alpha_star: MultiIndex
    epsilon: float | None = None
    n_alpha: int | None = None  # fixed N_alpha for every index, overrides epsilon
    replicates: int = 1
    report_times: tuple[int, ...] = ()  # empty means n_obs
    seed: int = 0
    n_inner: int = 500
    proposal_scale: float = 1.0
    c: float = 1.0
    n_min: int = 50
    truth_alpha: MultiIndex | None = None  # defaults to alpha_star
    burn_in: float = 0.1

    def __post_init__(self):
        self.alpha_star = as_index(self.alpha_star)
        self.report_times = tuple(int(n) for n in self.report_times)
        if self.truth_alpha is not None:
            self.truth_alpha = as_index(self.truth_alpha)
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.n_alpha is None and (self.epsilon is None or self.epsilon <= 0):
            raise ConfigError("give a positive epsilon or n_alpha")
        if self.n_alpha is not None and self.n_alpha < 1:
            raise ConfigError("n_alpha must be >= 1")
        if self.n_inner < 1 or self.n_min < 1:
            raise ConfigError("n_inner and n_min must be >= 1")

    @property
    def multi_index(self) -> bool:
        return self.method.startswith("mi_")

    @property
    def index_set(self) -> list[MultiIndex]:
        return tensor_index_set(self.alpha_star) if self.multi_index else [self.alpha_star]

    def allocation(self) -> dict[MultiIndex, int]:
        if self.n_alpha is not None:
            return {a: self.n_alpha for a in self.index_set}
        if self.multi_index:
            return allocate_n(self.epsilon, self.index_set, self.c, self.n_min)
        return {self.alpha_star: max(self.n_min, math.ceil(self.c * self.epsilon**-2))}

    def times(self, n_obs: int) -> tuple[int, ...]:
        times = self.report_times or (n_obs,)
        if any(n < 1 or n > n_obs for n in times):
            raise ConfigError(f"report times must lie in 1..{n_obs}")
        return tuple(sorted(set(times)))


def epsilon_schedule(alpha_star: Sequence[int], eps0: float) -> float:
    """eps0 2^{-(alpha_x + alpha_t)/3}.

    With N = eps^-2 samples of cost 2^{alpha_x + alpha_t}, a single-level
    sweep along this schedule costs eps^-5; on the diagonal alpha_x = 2 alpha_t
    it halves eps per time level, the K = M^2 balance.
    """
    return eps0 * 2.0 ** (-sum(alpha_star) / 3.0)


def sweep_plans(
    methods: Sequence[str],
    alpha_stars: Sequence[Sequence[int]],
    eps0: float,
    replicates: int,
    seed: int = 0,
    **kwargs,
) -> list[ExperimentPlan]:
    """One plan per (method, alpha_star) with epsilon from :func:`epsilon_schedule`."""
    return [
        ExperimentPlan(
            method=m, alpha_star=as_index(a), epsilon=epsilon_schedule(a, eps0),
            replicates=replicates, seed=seed, **kwargs,
        )
        for m in methods
        for a in alpha_stars
    ]


_PLAN_LISTS = {"report_times"}
_PLAN_INDICES = {"alpha_star", "truth_alpha"}


def plan_from_mapping(values: dict[str, str]) -> ExperimentPlan:
    types = {f.name: f.type for f in fields(ExperimentPlan)}
    kwargs: dict = {}
    try:
        for key, value in values.items():
            if key not in types:
                raise ConfigError(f"unknown plan key {key!r}")
            if key in _PLAN_INDICES:
                kwargs[key] = parse_index(value)
            elif key in _PLAN_LISTS:
                kwargs[key] = tuple(int(v) for v in value.split(",") if v.strip())
            elif key == "method":
                kwargs[key] = value
            elif key in ("epsilon", "proposal_scale", "c", "burn_in"):
                kwargs[key] = float(value)
            else:
                kwargs[key] = int(value)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if "method" not in kwargs or "alpha_star" not in kwargs:
        raise ConfigError("plan needs method and alpha_star")
    return ExperimentPlan(**kwargs)


def load_plan(path: str | Path) -> ExperimentPlan:
    return plan_from_mapping(read_key_values(path))


@dataclass(frozen=True)
class BenchmarkRow:
    method: str
    alpha_star: MultiIndex
    alpha: MultiIndex | None  # None for the combined estimate
    n: int
    replicate: int
    estimate: float
    truth: float
    sq_error: float
    cost: float
    n_alpha: int
    wall_seconds: float = 0.0


BENCHMARK_HEADER = "method,alpha_star,alpha,n,replicate,n_alpha,estimate,truth,sq_error,cost_units"


def write_rows(rows: Sequence[BenchmarkRow], path: str | Path) -> None:
    """Benchmark CSV plus a ``.timing.csv`` sidecar holding wall-clock seconds.

    Wall time is kept out of the main file so that it is bytewise
    reproducible for a given seed.
    """
    lines = [BENCHMARK_HEADER]
    timing = ["method,alpha_star,alpha,n,replicate,wall_seconds"]
    for r in rows:
        a = "all" if r.alpha is None else format_index(r.alpha)
        key = f"{r.method},{format_index(r.alpha_star)},{a},{r.n},{r.replicate}"
        lines.append(f"{key},{r.n_alpha},{r.estimate!r},{r.truth!r},{r.sq_error!r},{r.cost!r}")
        timing.append(f"{key},{r.wall_seconds:.3f}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    path.with_suffix(".timing.csv").write_text("\n".join(timing) + "\n")


def read_rows(path: str | Path) -> list[BenchmarkRow]:
    rows = []
    for ln in Path(path).read_text().splitlines()[1:]:
        if not ln.strip():
            continue
        m, star, a, n, rep, na, est, tr, se, cost = ln.split(",")
        rows.append(
            BenchmarkRow(
                m, parse_index(star), None if a == "all" else parse_index(a),
                int(n), int(rep), float(est), float(tr), float(se), float(cost), int(na),
            )
        )
    return rows


@dataclass(frozen=True)
class _Task:
    method: str
    alpha: MultiIndex
    replicate: int
    n_alpha: int
    times: tuple[int, ...]


def _run_task(task: _Task, plan: ExperimentPlan, config: ModelConfig, y: np.ndarray):
    """One (index, replicate) unit of work: {n: (estimate, cost)} and wall seconds."""
    start = time.perf_counter()
    expansion = dod_expand(task.alpha) if plan.multi_index else single_level(task.alpha)
    kernel = CoupledKernel(expansion, config)
    prior = GammaPrior.from_config(config)
    rng = seed_stream(plan.seed, (_METHOD_CODE[plan.method], *task.alpha, task.replicate))
    out = {}
    if task.method in ("smc2", "mi_smc2"):
        res = run_smc2(
            y[: max(task.times)], kernel, plan.n_inner, task.n_alpha, rng, prior,
            report_times=task.times, proposal_scale=plan.proposal_scale,
        )
        out = {n: (res.estimates[n], res.cost_at[n]) for n in task.times}
    else:
        for n in task.times:
            trace = run_pmmh(y[:n], kernel, plan.n_inner, task.n_alpha, rng, prior, LogRandomWalk(plan.proposal_scale))
            out[n] = (mi_pmcmc_estimate(trace, expansion, burn_in=plan.burn_in), trace.cost)
    return out, time.perf_counter() - start


def _star(args):
    return _run_task(*args)


def run_plan(
    plan: ExperimentPlan,
    config: ModelConfig,
    y: np.ndarray | None = None,
    threads: int = 1,
    truths: dict[int, dict[MultiIndex, float]] | None = None,
) -> list[BenchmarkRow]:
    """Execute every (index, replicate) task of ``plan`` and reduce in a fixed order.

    Rows for multi-index methods hold one row per index (compared with the
    exact DOD of the quadrature truth) followed by the combined row
    (compared with the quadrature posterior mean at ``truth_alpha``).
    ``truths`` maps n to a precomputed truth table covering the needed indices.
    """
    if y is None:
        y = simulate_data(config)
    y = np.asarray(y, dtype=float)
    times = plan.times(len(y))
    alloc = plan.allocation()
    truth_alpha = plan.truth_alpha or plan.alpha_star
    needed = sorted(set(plan.index_set) | {truth_alpha} | {t for a in plan.index_set for t in dod_expand(a).terms})
    truths = dict(truths or {})
    for n in times:
        have = truths.get(n, {})
        if not all(a in have for a in needed):
            truths[n] = {**have, **truth_table(y[:n], [a for a in needed if a not in have], config)}

    tasks = [_Task(plan.method, a, r, alloc[a], times) for r in range(plan.replicates) for a in plan.index_set]
    args = [(t, plan, config, y) for t in tasks]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_star, args))
    else:
        results = [_star(a) for a in args]

    rows: list[BenchmarkRow] = []
    by_rep: dict[int, list] = {}
    for task, res in zip(tasks, results):
        by_rep.setdefault(task.replicate, []).append((task, res))
    for rep in range(plan.replicates):
        for n in times:
            total, cost, wall = 0.0, 0.0, 0.0
            for task, (out, secs) in by_rep[rep]:
                est, c = out[n]
                total += est
                cost += c
                wall += secs
                if plan.multi_index:
                    truth = apply_dod(dod_expand(task.alpha), truths[n])
                    rows.append(BenchmarkRow(plan.method, plan.alpha_star, task.alpha, n, rep, est, truth, (est - truth) ** 2, c, task.n_alpha, secs))
            truth = truths[n][truth_alpha]
            n_tot = sum(task.n_alpha for task, _ in by_rep[rep])
            rows.append(BenchmarkRow(plan.method, plan.alpha_star, None, n, rep, total, truth, (total - truth) ** 2, cost, n_tot, wall))
    return rows


@dataclass(frozen=True)
class CostPoint:
    method: str
    alpha_star: MultiIndex
    n: int
    mean_cost: float
    rmse: float
    replicates: int


def cost_points(rows: Sequence[BenchmarkRow]) -> list[CostPoint]:
    """Mean cost and RMSE of the combined estimate per (method, alpha_star, n)."""
    groups: dict[tuple, list[BenchmarkRow]] = {}
    for r in rows:
        if r.alpha is None:
            groups.setdefault((r.method, r.alpha_star, r.n), []).append(r)
    return [
        CostPoint(m, a, n, float(np.mean([r.cost for r in g])), float(math.sqrt(np.mean([r.sq_error for r in g]))), len(g))
        for (m, a, n), g in sorted(groups.items())
    ]


def cost_slope(costs: Sequence[float], rmses: Sequence[float]) -> float:
    """Least-squares slope of log2(cost) against log2(RMSE)."""
    if len(costs) < 3:
        raise ValueError("need at least 3 (cost, RMSE) points")
    x, y = np.log2(np.asarray(rmses, float)), np.log2(np.asarray(costs, float))
    return float(np.polyfit(x, y, 1)[0])


def fit_cost_slope(rows: Sequence[BenchmarkRow], n: int | None = None) -> dict[str, float]:
    """Per-method cost-vs-RMSE slope over the alpha_star sweep (at report time ``n``)."""
    pts = cost_points(rows)
    if n is None:
        n = max(p.n for p in pts)
    out = {}
    for method in sorted({p.method for p in pts}):
        sel = [p for p in pts if p.method == method and p.n == n]
        out[method] = cost_slope([p.mean_cost for p in sel], [p.rmse for p in sel])
    return out


# ---- command line ----------------------------------------------------------


def _load(args) -> tuple[ModelConfig, np.ndarray | None]:
    config = load_config(args.config) if args.config else ModelConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    y = None
    if getattr(args, "data", None):
        if not Path(args.data).exists():
            raise ConfigError(f"data file {args.data} not found")
        y = read_observations(args.data)
    return config, y


def _data(config: ModelConfig, y):
    return simulate_data(config) if y is None else y


def cmd_simulate_data(args) -> None:
    config, _ = _load(args)
    write_observations(simulate_data(config), args.out)


def cmd_truth(args) -> None:
    config, y = _load(args)
    y = _data(config, y)
    n = args.n or len(y)
    table = truth_table(y[:n], tensor_index_set(parse_index(args.index)), config)
    write_truth_table(table, args.out)


def cmd_run_pf(args) -> None:
    config, y = _load(args)
    y = _data(config, y)
    alpha = parse_index(args.alpha)
    kernel = CoupledKernel(dod_expand(alpha) if args.coupled else single_level(alpha), config)
    rng = seed_stream(config.seed, (1,))
    system = pf_init(args.sigma if args.sigma is not None else config.sigma, kernel, args.n_particles, rng, record=True)
    for yp in y:
        system = pf_step(system, yp, rng)
    write_diagnostics(system, args.out)
    print(f"log_Z {float(system.log_Z[0])!r} cost_units {system.cost!r}")


def cmd_run_pmcmc(args) -> None:
    config, y = _load(args)
    y = _data(config, y)
    alpha = parse_index(args.alpha)
    expansion = dod_expand(alpha) if args.coupled else single_level(alpha)
    kernel = CoupledKernel(expansion, config)
    rng = seed_stream(config.seed, (2,))
    trace = run_pmmh(y, kernel, args.n_particles, args.iterations, rng, GammaPrior.from_config(config), args.scale)
    trace.write_csv(args.out)
    print(f"estimate {mi_pmcmc_estimate(trace, expansion)!r} acceptance {trace.accepted[1:].mean():.3f}")


def cmd_run_smc2(args) -> None:
    config, y = _load(args)
    y = _data(config, y)
    alpha = parse_index(args.alpha)
    kernel = CoupledKernel(dod_expand(alpha) if args.coupled else single_level(alpha), config)
    rng = seed_stream(config.seed, (3,))
    n_inner = args.n_inner or config.n_inner
    res = run_smc2(y, kernel, n_inner, args.n_outer, rng, GammaPrior.from_config(config), proposal_scale=args.scale)
    res.system.write_diagnostics(args.out)
    print(f"estimate {float(res.estimates[len(y)])!r} cost_units {res.cost!r}")


def _plan_from_args(args, method: str) -> ExperimentPlan:
    return ExperimentPlan(
        method=method,
        alpha_star=parse_index(args.alpha_star),
        epsilon=args.epsilon,
        n_alpha=args.n_alpha,
        replicates=args.replicates,
        seed=args.seed or 0,
        n_inner=args.n_inner,
        proposal_scale=args.scale,
        c=args.c,
        n_min=args.n_min,
    )


def cmd_run_mi(args) -> None:
    config, y = _load(args)
    y = _data(config, y)
    plan = _plan_from_args(args, "mi_" + args.method)
    rows = run_plan(plan, config, y, threads=args.threads)
    records = [
        EstimateRecord(r.alpha, r.estimate, r.n_alpha, r.cost, plan.seed, r.replicate, r.n)
        for r in rows
        if r.alpha is not None
    ]
    write_records(records, args.out)
    for r in rows:
        if r.alpha is None:
            print(f"replicate {r.replicate} estimate {r.estimate!r} truth {r.truth!r}")


def cmd_fit_rates(args) -> None:
    records = read_records(args.records)
    truths = None
    if args.truth:
        table = read_truth_table(args.truth)
        truths = {a: apply_dod(dod_expand(a), table) for a in group_by_alpha(records)}
    fit = fit_rates(records, truths, hold=args.hold)
    lines = ["axis,beta,beta_se,w,w_se,gamma,gamma_se"]
    for i, name in enumerate(("x", "t")[: len(fit.beta)]):
        lines.append(f"{name},{fit.beta[i]!r},{fit.beta_se[i]!r},{fit.w[i]!r},{fit.w_se[i]!r},{fit.gamma[i]!r},{fit.gamma_se[i]!r}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_benchmark(args) -> None:
    config, y = _load(args)
    y = _data(config, y)
    rows = []
    for path in args.plan:
        plan = load_plan(path)
        if args.seed is not None:
            plan.seed = args.seed
        rows += run_plan(plan, config, y, threads=args.threads)
    write_rows(rows, args.out)
    for p in cost_points(rows):
        print(f"{p.method} {format_index(p.alpha_star)} n={p.n} cost={p.mean_cost:.4g} rmse={p.rmse:.4g}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mismc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="flat key=value model config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True)
        p.add_argument("--threads", type=int, default=1)
        p.set_defaults(func=func)
        return p

    def data_arg(p):
        p.add_argument("--data", help="observations CSV (simulated from the config when absent)")

    add("simulate-data", cmd_simulate_data, "simulate observations from the config")

    p = add("truth", cmd_truth, "quadrature posterior means over a tensor index set")
    data_arg(p)
    p.add_argument("--index", default="2:2", help="largest index of the tensor set, e.g. 2:2")
    p.add_argument("--n", type=int, help="use the first n observations")

    for name, func, help in (
        ("run-pf", cmd_run_pf, "one particle filter at fixed sigma"),
        ("run-pmcmc", cmd_run_pmcmc, "one PMMH chain"),
        ("run-smc2", cmd_run_smc2, "one SMC^2 run"),
    ):
        p = add(name, func, help)
        data_arg(p)
        p.add_argument("--alpha", default="0:0")
        p.add_argument("--coupled", action="store_true", help="run the coupled DOD system at alpha")
        if name == "run-pf":
            p.add_argument("--sigma", type=float)
            p.add_argument("--n-particles", type=int, default=500)
        elif name == "run-pmcmc":
            p.add_argument("--n-particles", type=int, default=100)
            p.add_argument("--iterations", type=int, default=1000)
            p.add_argument("--scale", type=float, default=1.0)
        else:
            p.add_argument("--n-inner", type=int)
            p.add_argument("--n-outer", type=int, default=100)
            p.add_argument("--scale", type=float, default=1.0)

    p = add("run-mi", cmd_run_mi, "multi-index estimate over a tensor index set")
    data_arg(p)
    p.add_argument("--method", choices=("smc2", "pmcmc"), default="smc2")
    p.add_argument("--alpha-star", default="2:1")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--n-alpha", type=int)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--n-inner", type=int, default=100)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--n-min", type=int, default=50)

    p = add("fit-rates", cmd_fit_rates, "fit decay and cost exponents from a records CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--truth", help="truth table CSV; exact DOD values for the bias exponent")
    p.add_argument("--hold", choices=("max", "min"), default="max", help="level of the other axis along each fit line")

    p = add("benchmark", cmd_benchmark, "run experiment plans and write MSE-vs-cost rows")
    data_arg(p)
    p.add_argument("--plan", nargs="+", required=True, help="plan files (key=value)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError) as exc:
        # ConfigError is a ValueError; bad inputs and missing files land here too
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
