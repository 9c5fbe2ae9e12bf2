"""Command-line experiment runner.

Subcommands: gen, train, eval, sweep, bench, rv-select.  Flags mirror the
ExperimentConfig field names.  Exit codes: 0 on full success, 1 on manifest
or argument errors, 2 on partial failure (summary still written).

Run outputs land in ``<out>/runs/<config-hash>/`` as manifest.json,
model.bin, log.csv and report.json.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import datasets, evaluation, experiments, training
from .errors import LinalignError


def _add_config_flags(p, require_seed=True):
    p.add_argument("--latent-dim", type=int, default=2)
    p.add_argument("--la-weight", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=3e-3)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--seed", type=int, required=require_seed)
    p.add_argument("--cov-reg", type=float, default=1e-6)
    p.add_argument("--grad-clip", type=float, default=1.0)
    p.add_argument("--la-solver", choices=["exact", "entropic"], default="exact")
    p.add_argument("--la-epsilon", type=float, default=None)


def _config_from(args, seed=None):
    return training.ExperimentConfig(
        latent_dim=args.latent_dim,
        la_weight=args.la_weight,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        seed=args.seed if seed is None else seed,
        cov_reg=args.cov_reg,
        grad_clip=args.grad_clip,
        la_solver=args.la_solver,
        la_epsilon=args.la_epsilon,
    )


def _load_features(path, fmt):
    data = datasets.load_dataset(path, format=fmt, labels=False)
    return np.asarray(data, dtype=float)


def cmd_gen(args):
    src, tgt, params = datasets.gen_synthetic(
        args.task, seed=args.seed, n=args.n, d=args.d, target_dim=args.target_dim
    )
    os.makedirs(args.out, exist_ok=True)
    if args.task == "large_n":
        datasets.save_csv(os.path.join(args.out, "source.csv"), src)
        datasets.save_csv(os.path.join(args.out, "target.csv"), tgt)
    else:
        datasets.save_csv(
            os.path.join(args.out, "source.csv"), src.features, labels=src.labels
        )
        datasets.save_csv(
            os.path.join(args.out, "target.csv"), tgt.features, labels=tgt.labels
        )
    manifest = {
        "task": args.task,
        "seed": args.seed,
        "params": {
            k: (v.item() if isinstance(v, np.generic) else v)
            for k, v in params.items()
            if np.isscalar(v) or isinstance(v, np.generic)
        },
    }
    with open(os.path.join(args.out, "gen_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(f"wrote {args.task} datasets to {args.out}")
    return 0


def _run_dir(out, chash):
    path = os.path.join(out, "runs", chash)
    os.makedirs(path, exist_ok=True)
    return path


def cmd_train(args):
    cfg = _config_from(args)
    xs = _load_features(args.source, args.format)
    xt = _load_features(args.target, args.format)
    chash = experiments.config_hash(cfg.to_dict())
    manifest = experiments.RunManifest(
        experiment="train",
        config=cfg.to_dict(),
        seeds=(cfg.seed,),
        dataset_paths={"source": args.source, "target": args.target},
        output_dir=args.out,
        input_hash=experiments.content_hash([args.source, args.target]),
    )
    run_dir = _run_dir(args.out, chash)
    model = training.init_model(xs.shape[1], xt.shape[1], cfg)
    model, log = training.train(model, xs, xt)
    training.save_model(model, os.path.join(run_dir, "model.bin"))
    training.write_log_csv(log, os.path.join(run_dir, "log.csv"))
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        fh.write(manifest.to_json())
    rec, w2 = experiments._final_losses(model, xs, xt)
    report = {"config_hash": chash, "final_rec_loss": rec, "w2_after_map": w2}
    with open(os.path.join(run_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(f"trained model in {run_dir} (rec={rec:.4f}, post-map W2={w2:.4f})")
    return 0


def cmd_eval(args):
    if args.task:
        cfg = _config_from(args)
        rows, reports, errors = experiments.run_da_experiment(
            args.task,
            seeds=args.seeds,
            config=cfg,
            n=args.n,
            target_dim=args.target_dim,
        )
        os.makedirs(args.out, exist_ok=True)
        experiments.write_rows_csv(
            rows, experiments.DA_FIELDS, os.path.join(args.out, "da_results.csv")
        )
        for (method, seed), report in reports.items():
            name = f"report_{method}_seed{seed}.json"
            with open(os.path.join(args.out, name), "w") as fh:
                if isinstance(report, dict):
                    json.dump(report, fh, indent=2, sort_keys=True)
                else:
                    fh.write(report.to_json())
        for key, msg in errors.items():
            print(f"FAILED {key}: {msg}", file=sys.stderr)
        print(f"wrote {len(rows)} result rows to {args.out}/da_results.csv")
        return 2 if errors else 0
    # Evaluate a saved model against labeled CSV datasets.
    model = training.load_model(args.model)
    src = datasets.load_dataset(args.source, format=args.format, labels=True)
    tgt = datasets.load_dataset(args.target, format=args.format, labels=True)
    report = evaluation.evaluate_transfer(model, src, tgt, k=args.knn_k)
    print(report.to_json())
    return 0


def cmd_sweep(args):
    cfg = _config_from(args, seed=args.seeds[0])
    rows = experiments.run_lambda_sweep(
        args.la_weights, args.seeds, cfg, n=args.n
    )
    os.makedirs(args.out, exist_ok=True)
    experiments.write_rows_csv(
        rows, experiments.SWEEP_FIELDS, os.path.join(args.out, "lambda_sweep.csv")
    )
    failures = [r for r in rows if r["error"]]
    print(f"wrote {len(rows)} sweep rows to {args.out}/lambda_sweep.csv")
    return 2 if failures else 0


def cmd_bench(args):
    rows = experiments.run_timing_bench(
        sorted(args.n_list),
        d=args.d,
        methods=tuple(args.methods),
        seed=args.seed,
        reps=args.reps,
        emd_time_budget=args.emd_time_budget,
    )
    os.makedirs(args.out, exist_ok=True)
    experiments.write_rows_csv(
        rows, experiments.BENCH_FIELDS, os.path.join(args.out, "timing.csv")
    )
    for row in rows:
        secs = "infeasible" if row["seconds"] is None else f"{row['seconds']:.4f}s"
        print(f"{row['method']:>12s}  n={row['n']:<8d}  {secs}")
    return 0


def cmd_rv_select(args):
    src, tgt, _ = datasets.gen_synthetic("nonlinear_da", seed=args.seed, n=args.n)
    base = _config_from(args)
    grid = [
        training.ExperimentConfig(
            **{**base.to_dict(), "la_weight": float(lam)}
        )
        for lam in args.la_weights
    ]
    best, rows = experiments.rv_select(grid, src, tgt.features, args.seeds)
    os.makedirs(args.out, exist_ok=True)
    experiments.write_rows_csv(
        rows, experiments.RV_FIELDS, os.path.join(args.out, "rv_scores.csv")
    )
    print(f"selected la_weight={best.la_weight} (scores in {args.out}/rv_scores.csv)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="linalign")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("task", choices=["toy3d", "gauss_affine", "nonlinear_da", "large_n"])
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--target-dim", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train coupled autoencoders on two feature files")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--format", choices=["csv", "f64-binary"], default="csv")
    p.add_argument("--out", default=".")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate transfer accuracy")
    p.add_argument("--task", default=None, help="synthetic task to run end to end")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--target-dim", type=int, default=None)
    p.add_argument("--model", help="saved model.bin (file-based evaluation)")
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--format", choices=["csv", "f64-binary"], default="csv")
    p.add_argument("--knn-k", type=int, default=3)
    p.add_argument("--out", default=".")
    _add_config_flags(p, require_seed=False)
    p.set_defaults(func=cmd_eval, seed=0)

    p = sub.add_parser("sweep", help="alignability-weight sweep on nonlinear_da")
    p.add_argument("--la-weights", type=float, nargs="+", required=True)
    p.add_argument("--seeds", type=int, nargs="+", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--out", default=".")
    _add_config_flags(p, require_seed=False)
    p.set_defaults(func=cmd_sweep, seed=0)

    p = sub.add_parser("bench", help="timing benchmark for transport computation")
    p.add_argument("--n-list", type=int, nargs="+", required=True)
    p.add_argument("--d", type=int, default=128)
    p.add_argument(
        "--methods", nargs="+", default=["laot_map", "exact_emd"],
        choices=["laot_map", "exact_emd", "entropic"],
    )
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--emd-time-budget", type=float, default=None)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("rv-select", help="reverse-validation grid selection")
    p.add_argument("--la-weights", type=float, nargs="+", required=True)
    p.add_argument("--seeds", type=int, nargs="+", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--out", default=".")
    _add_config_flags(p, require_seed=False)
    p.set_defaults(func=cmd_rv_select, seed=0)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (LinalignError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
