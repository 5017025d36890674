"""Command line entry point: ``shiftbai {run, diag, list-policies}``.

Exit codes: 0 on success, 1 on a configuration error, 2 on a runtime error.
"""

import argparse
import json
import sys

import numpy as np

from . import diagnostics
from .errors import ConfigError
from .harness import default_jobs, load_config, run_experiment, write_csv, write_paired_csv
from .policies import POLICY_KINDS, select_best, select_best_sample_mean
from .ols import fit_ols


def _json(args, name):
    text = getattr(args, name)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc}", key=name) from None


def _cmd_run(args):
    config = load_config(args.config)
    series = run_experiment(config, n_jobs=args.jobs)
    write_csv(series, args.out)
    if args.paired_out:
        write_paired_csv(series, args.paired_out)
    print(f"wrote {len(config.policies) * len(config.budgets)} rows to {args.out}")


def _cmd_moments(args):
    counts = np.asarray(_json(args, "counts"), dtype=float)
    report = diagnostics.estimator_moments(
        counts, _json(args, "mu"), _json(args, "shifts"), args.sigma, args.reps, args.seed
    )
    diagnostics.write_rows(args.out, report.HEADER, report.rows())
    print(f"max |bias|/SE {report.bias_in_se.max():.3g}, "
          f"max relative covariance error {report.max_rel_error:.3g}")


def _cmd_consistency(args):
    report = diagnostics.consistency_probe(args.sizes, args.reps, args.seed)
    diagnostics.write_rows(args.out, report.HEADER, report.rows())
    for row in report.rows():
        print(f"N={row['N']}: var(mu1)={row['var_mu1']:.4g} var(mu1-mu2)={row['var_diff']:.4g}")


def _cmd_conjecture(args):
    report = diagnostics.covariance_conjecture_probe(
        n_environments=args.environments, reps=args.reps, seed=args.seed
    )
    diagnostics.write_rows(args.out, report.HEADER, report.rows())
    print(f"{len(report.pairs)} pairs, reference value {report.conjectured:.4g}")


def _cmd_bias(args):
    counts, shifts = _json(args, "counts"), _json(args, "shifts")
    means = np.asarray(_json(args, "means"), dtype=float)
    stats = diagnostics.noiseless_stats(counts, means, shifts)
    rows = []
    K = stats.n_arms
    sample = stats.sample_means()
    for a in range(K):
        for b in range(a + 1, K):
            rows.append({
                "arm_a": a,
                "arm_b": b,
                "bias_term": diagnostics.bias_decomposition(stats, shifts, a, b),
                "sample_mean_diff": float(sample[a] - sample[b]),
                "true_diff": float(means[a] - means[b]),
                "seed": args.seed,
            })
    diagnostics.write_rows(args.out, diagnostics.BIAS_HEADER, rows)
    rng = np.random.default_rng(args.seed)
    print(f"sample-mean pick {select_best_sample_mean(stats, rng)}, true best {int(np.argmax(means))}", end="")
    if stats.is_connected():
        print(f", least-squares pick {select_best(fit_ols(stats), rng)}")
    else:
        print()


def build_parser():
    parser = argparse.ArgumentParser(prog="shiftbai", description="Fixed-budget best-arm identification under environment shifts.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config and write PICS/EOC per policy and budget")
    run.add_argument("--config", required=True, help="JSON experiment config")
    run.add_argument("--out", required=True, help="output CSV")
    run.add_argument("--jobs", type=int, default=1, help=f"worker processes (this machine has {default_jobs()})")
    run.add_argument("--paired-out", help="optional CSV of paired policy differences")
    run.set_defaults(func=_cmd_run)

    diag = sub.add_parser("diag", help="statistical diagnostics")
    modes = diag.add_subparsers(dest="mode", required=True)

    m = modes.add_parser("moments", help="Monte Carlo moments of the estimator on a fixed design")
    m.add_argument("--counts", default="[[2,2],[2,2]]", help="JSON")
    m.add_argument("--mu", default="[0.0,0.5]", help="JSON")
    m.add_argument("--shifts", default="[0.0,10.0]", help="JSON")
    m.add_argument("--sigma", type=float, default=1.0)
    m.add_argument("--reps", type=int, default=100_000)
    m.set_defaults(func=_cmd_moments)

    c = modes.add_parser("consistency", help="estimator spread versus sample size under round-robin")
    c.add_argument("--sizes", type=int, nargs="+", default=[500, 1000, 2000, 4000])
    c.add_argument("--reps", type=int, default=10_000)
    c.set_defaults(func=_cmd_consistency)

    q = modes.add_parser("conjecture", help="shift-estimator covariances on a long design")
    q.add_argument("--environments", type=int, default=40)
    q.add_argument("--reps", type=int, default=10_000)
    q.set_defaults(func=_cmd_conjecture)

    b = modes.add_parser("bias", help="shift bias of noiseless sample means")
    b.add_argument("--counts", default="[[1,3],[1,1]]", help="JSON")
    b.add_argument("--means", default="[0.0,0.5]", help="JSON")
    b.add_argument("--shifts", default="[0.0,10.0]", help="JSON")
    b.set_defaults(func=_cmd_bias)

    for p in (m, c, q, b):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output CSV")

    lp = sub.add_parser("list-policies", help="print the available policy kinds")
    lp.set_defaults(func=lambda args: print("\n".join(POLICY_KINDS)))
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
