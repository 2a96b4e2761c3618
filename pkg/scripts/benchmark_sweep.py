"""MSE-versus-cost sweep over alpha* for a single-level and a multi-index method.

Epsilon follows eps0 2^{-(alpha_x + alpha_t)/3}; single-level runs use
N = eps^-2 samples, multi-index runs the allocation
N_alpha ~ eps^-2 m_x 2^{-alpha_x - 1.5 alpha_t}.  Rows go to a CSV (wall
time in the ``.timing.csv`` sidecar) and the fitted log-cost/log-RMSE slopes
are printed.  The defaults are the desk-scale acceptance sweep.

    python scripts/benchmark_sweep.py --out results/benchmark.csv
    python scripts/benchmark_sweep.py --family pmcmc --reps 20 --out results/pmcmc.csv
"""

import argparse

from mismc.harness import cost_points, fit_cost_slope, format_index, parse_index, run_plan, sweep_plans, write_rows
from mismc.kalman_oracle import truth_table
from mismc.multi_index import tensor_index_set
from mismc.spde_model import ModelConfig, load_config, simulate_data


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config")
    ap.add_argument("--family", choices=("smc2", "pmcmc"), default="smc2")
    ap.add_argument("--stars", nargs="+", default=["2:1", "3:1", "4:2"])
    ap.add_argument("--eps0", type=float, default=0.5)
    ap.add_argument("--reps", type=int, nargs=2, default=[256, 128], metavar=("SINGLE", "MI"))
    ap.add_argument("--n-inner", type=int, default=16)
    ap.add_argument("--n-min", type=int, default=4)
    ap.add_argument("--report-times", default="", help="comma list, e.g. 50,65,80,100 (default n_obs)")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else ModelConfig()
    y = simulate_data(cfg)
    stars = [parse_index(s) for s in args.stars]
    times = tuple(int(t) for t in args.report_times.split(",") if t.strip())
    finest = max(stars)
    truths = {n: truth_table(y[:n], tensor_index_set(finest), cfg) for n in (times or (len(y),))}
    rows = []
    for method, reps in zip((args.family, "mi_" + args.family), args.reps):
        for plan in sweep_plans([method], stars, args.eps0, reps, seed=args.seed, n_inner=args.n_inner,
                                n_min=args.n_min, report_times=times):
            rows += run_plan(plan, cfg, y, threads=args.threads, truths=truths)
            print(f"done {method} {format_index(plan.alpha_star)}", flush=True)
    write_rows(rows, args.out)
    for p in cost_points(rows):
        print(f"{p.method:8s} {format_index(p.alpha_star)} n={p.n} cost={p.mean_cost:.4g} rmse={p.rmse:.4g} reps={p.replicates}")
    for n in sorted({p.n for p in cost_points(rows)}):
        print(f"n={n} slopes:", {m: round(s, 2) for m, s in fit_cost_slope(rows, n).items()})


if __name__ == "__main__":
    main()
