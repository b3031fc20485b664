"""Command-line driver: ``simulate``, ``replay``, ``gibbs-diagnose`` and ``compare``.

Flags mirror :class:`~activemc.config.ExperimentConfig`; keys in a JSON file
passed with ``--config`` override the flags.  On failure a JSON error record is
written to stderr and the exit code is nonzero.
"""

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import POLICIES, ExperimentConfig
from .gibbs import (IMPUTATIONS, SIGMA2_SHAPES, entry_uncertainty, posterior_mean,
                    run_all_ranks, write_checkpoint)
from .harness import (final_errors, ground_truth, load_csv_dataset, read_trace,
                      run_policy_comparison, summarize, write_results)
from .maxent import uniform_picks
from .nuclear import complete_nuclear_norm
from .smg import ObservationSet


def _csv_floats(text):
    return tuple(float(x) for x in text.split(","))


def _csv_strings(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _add_config_flags(p):
    g = p.add_argument_group("experiment")
    g.add_argument("--config", type=Path, help="JSON config; its keys override flags")
    g.add_argument("--m1", type=int)
    g.add_argument("--m2", type=int)
    g.add_argument("--true-rank", type=int)
    g.add_argument("--sigma2", type=float)
    g.add_argument("--eta2", type=float)
    g.add_argument("--alpha-eta2", type=float)
    g.add_argument("--beta-eta2", type=float)
    g.add_argument("--alpha-sigma2", type=float)
    g.add_argument("--beta-sigma2", type=float)
    g.add_argument("--rank-prior", type=_csv_floats, help="comma list over ranks 1..r_max")
    g.add_argument("--n-ini", type=int)
    g.add_argument("--n-seq", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--T", type=int, dest="T", help="retained draws per rank")
    g.add_argument("--burn-in", type=int)
    g.add_argument("--thin", type=int)
    g.add_argument("--imputation", choices=IMPUTATIONS)
    g.add_argument("--sigma2-shape", choices=SIGMA2_SHAPES)
    g.add_argument("--policies", type=_csv_strings, help=f"comma list from {', '.join(POLICIES)}")
    g.add_argument("--replications", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--dataset", type=str)
    g.add_argument("--keep-fraction", type=float)
    g.add_argument("--lam", type=float)
    g.add_argument("--design-draws", type=int)
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--jobs", type=int, default=1, help="parallel replications")


_PRIOR_KEYS = ("alpha_eta2", "beta_eta2", "alpha_sigma2", "beta_sigma2", "rank_prior")
_CHAIN_KEYS = ("T", "burn_in", "thin", "imputation", "sigma2_shape")
_TOP_KEYS = ("m1", "m2", "true_rank", "sigma2", "eta2", "n_ini", "n_seq", "batch_size",
             "policies", "replications", "seed", "dataset", "keep_fraction", "lam",
             "design_draws")


def build_config(args, **defaults):
    """Defaults, then command-line flags, then the ``--config`` file."""
    base = {**_default_dict(), **defaults}
    for k in _TOP_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            base[k] = v
    for k in _PRIOR_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            base["priors"][k] = v
    for k in _CHAIN_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            base["chain"][k] = v
    if getattr(args, "config", None) is not None:
        with open(args.config) as fh:
            override = json.load(fh)
        for k, v in override.items():
            if k in ("priors", "chain") and isinstance(v, dict):
                base[k].update(v)
            else:
                base[k] = v
    return ExperimentConfig.from_dict(base)


def _default_dict():
    d = ExperimentConfig().to_dict()
    d["priors"] = dict(d["priors"])
    d["chain"] = dict(d["chain"])
    return d


def _run_comparison(cfg, out, jobs):
    rows, timing = run_policy_comparison(cfg, n_jobs=jobs, return_timing=True)
    summary = summarize(rows)
    write_results(rows, summary, out, cfg, timing)
    finals = {k: {"mean": float(v.mean()), "q25": float(np.quantile(v, 0.25)),
                  "q75": float(np.quantile(v, 0.75))} for k, v in final_errors(rows).items()}
    return {"status": "ok", "out": str(out), "final_error": finals}


def cmd_simulate(args):
    cfg = build_config(args)
    if cfg.dataset is not None:
        raise ValueError("simulate draws synthetic data; use 'replay' for --dataset")
    return _run_comparison(cfg, args.out, args.jobs)


def cmd_replay(args):
    dataset = args.dataset
    if args.config is not None:
        with open(args.config) as fh:
            dataset = json.load(fh).get("dataset", dataset)
    if dataset is None:
        raise ValueError("replay needs --dataset (CSV with header row,col,value)")
    ds = load_csv_dataset(dataset)
    extra = {"dataset": dataset}
    if args.m1 is None:
        extra["m1"] = ds.shape[0]
    if args.m2 is None:
        extra["m2"] = ds.shape[1]
    if args.n_ini is None:
        extra["n_ini"] = max(extra.get("m1", args.m1), extra.get("m2", args.m2))
    cfg = build_config(args, **extra)
    return _run_comparison(cfg, args.out, args.jobs)


def cmd_gibbs_diagnose(args):
    """Chains for every rank on ``n_ini`` uniform observations of replication 0."""
    cfg = build_config(args, n_seq=0, policies=("uniform",))
    ds = load_csv_dataset(cfg.dataset, cfg.lam) if cfg.dataset else None
    x = ground_truth(cfg, 0, ds)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0, 3]))
    idx = uniform_picks(x.shape, np.empty((0, 2)), cfg.n_ini, rng)
    vals = x[idx[:, 0], idx[:, 1]] + np.sqrt(cfg.eta2) * rng.standard_normal(len(idx))
    obs = ObservationSet(idx, vals, cfg.eta2, x.shape)
    ch = cfg.chain
    draws = run_all_ranks(obs, cfg.priors, ch.T, ch.burn_in, ch.thin, seed=cfg.seed,
                          imputation=ch.imputation, sigma2_shape=ch.sigma2_shape)
    out = Path(args.out)
    write_checkpoint(draws, out / "chains", x.shape)
    pm = posterior_mean(draws)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        nn = complete_nuclear_norm(obs, lam=cfg.lam).x_hat
    targets = obs.complement()
    ci = entry_uncertainty(draws, targets, 0.95, rng)
    truth = x[targets[:, 0], targets[:, 1]]
    split = {}
    for r in draws.ranks:
        s = draws.chains[r].sigma2
        a, b = s[: len(s) // 2], s[len(s) // 2:]
        split[str(r)] = {"first_half_mean": float(a.mean()), "second_half_mean": float(b.mean())}
    report = {
        "status": "ok",
        "n_observed": int(obs.n),
        "rank_weights": {str(r): float(w) for r, w in zip(draws.ranks, draws.rank_weights)},
        "map_rank": int(draws.map_rank),
        "acceptance": {str(r): draws.chains[r].acceptance for r in draws.ranks},
        "sigma2_split_half": split,
        "posterior_mean_error": float(np.linalg.norm(pm - x)),
        "nuclear_norm_error": float(np.linalg.norm(nn - x)),
        "interval_coverage_95": float(np.mean((ci[:, 1] <= truth) & (truth <= ci[:, 2]))),
        "checkpoint": str(out / "chains"),
    }
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "diagnostics.json", "w") as fh:
        json.dump(report, fh, indent=2)
    with open(out / "config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    return report


def cmd_compare(args):
    """Merge ``trace.csv`` files from result directories and rank policies by final error."""
    rows = []
    for d in args.results:
        rows.extend(read_trace(Path(d) / "trace.csv"))
    if not rows:
        raise ValueError("no trace rows found in the given result directories")
    summary = summarize(rows)
    finals = final_errors(rows)
    table = {k: {"mean": float(v.mean()), "q25": float(np.quantile(v, 0.25)),
                 "q75": float(np.quantile(v, 0.75)), "n": int(len(v))} for k, v in finals.items()}
    ranking = sorted(table, key=lambda k: table[k]["mean"])
    out = Path(args.out)
    write_results(rows, summary, out, {"compared": [str(d) for d in args.results]})
    return {"status": "ok", "final_error": table, "ranking": ranking, "out": str(out)}


def make_parser():
    p = argparse.ArgumentParser(prog="activemc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="policy comparison on synthetic SMG matrices")
    _add_config_flags(s)
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("replay", help="policy comparison on a ratings CSV")
    _add_config_flags(s)
    s.set_defaults(func=cmd_replay)
    s = sub.add_parser("gibbs-diagnose", help="run chains for every rank and report diagnostics")
    _add_config_flags(s)
    s.set_defaults(func=cmd_gibbs_diagnose)
    s = sub.add_parser("compare", help="merge result directories and rank policies")
    s.add_argument("results", nargs="+", type=Path)
    s.add_argument("--out", type=Path, default=Path("comparison"))
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except Exception as exc:
        record = {"status": "error", "command": args.command,
                  "error_type": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
