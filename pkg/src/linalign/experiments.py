"""Experiment harness: hashing, manifests, sweeps, timing, DA runs.

Everything here is deterministic given the manifest: seeds are explicit,
generators are seeded, and result rows carry the config hash so no emitted
number is orphaned from its configuration.
"""

import csv
import hashlib
import json
import time
from dataclasses import dataclass, replace

import numpy as np

from . import datasets, discrete, evaluation, gaussian, training
from .errors import InvalidInput, LinalignError


def config_hash(obj):
    """Short content hash of a JSON-serializable configuration."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def content_hash(paths):
    """Combined content hash of input files (git-style, order-independent)."""
    h = hashlib.sha256()
    for path in sorted(paths):
        with open(path, "rb") as fh:
            h.update(hashlib.sha256(fh.read()).digest())
    return h.hexdigest()[:12]


@dataclass(frozen=True)
class RunManifest:
    experiment: str
    config: dict
    seeds: tuple
    dataset_paths: dict
    output_dir: str
    input_hash: str = ""

    @property
    def hash(self):
        return config_hash(
            {
                "experiment": self.experiment,
                "config": self.config,
                "seeds": list(self.seeds),
                "inputs": self.input_hash,
            }
        )

    def to_json(self):
        return json.dumps(
            {
                "experiment": self.experiment,
                "config": self.config,
                "seeds": list(self.seeds),
                "dataset_paths": self.dataset_paths,
                "output_dir": self.output_dir,
                "input_hash": self.input_hash,
                "hash": self.hash,
            },
            indent=2,
            sort_keys=True,
        )

    @staticmethod
    def from_json(text):
        d = json.loads(text)
        return RunManifest(
            experiment=d["experiment"],
            config=d["config"],
            seeds=tuple(d["seeds"]),
            dataset_paths=d.get("dataset_paths", {}),
            output_dir=d["output_dir"],
            input_hash=d.get("input_hash", ""),
        )


def write_rows_csv(rows, fields, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in fields})


def _final_losses(model, xs, xt):
    """Full-data reconstruction loss and post-map empirical W2."""
    rec = training.reconstruction_loss(model, xs, xt)
    zs = training.encode(model, xs, "source")
    zt = training.encode(model, xt, "target")
    pushed = gaussian.apply_map(model.fitted_map, zs)
    w2 = discrete.w2_empirical(pushed, zt)
    return rec, w2


def run_lambda_sweep(la_weights, seeds, base_config, n=1000):
    """Train one model per (alignability weight, seed) on nonlinear_da.

    Returns plot-ready rows with final losses and the post-map empirical W2.
    Failures are recorded per cell; the sweep continues.
    """
    rows = []
    for lam in la_weights:
        for seed in seeds:
            cfg = replace(base_config, la_weight=float(lam), seed=int(seed))
            row = {
                "la_weight": float(lam),
                "seed": int(seed),
                "config_hash": config_hash(cfg.to_dict()),
            }
            try:
                src, tgt, _ = datasets.gen_synthetic("nonlinear_da", seed=seed, n=n)
                model = training.init_model(
                    src.features.shape[1], tgt.features.shape[1], cfg
                )
                model, _ = training.train(model, src.features, tgt.features)
                rec, w2 = _final_losses(model, src.features, tgt.features)
                row.update(
                    final_la_loss=w2, final_rec_loss=rec, w2_after_map=w2, error=""
                )
            except LinalignError as exc:
                row.update(
                    final_la_loss=None,
                    final_rec_loss=None,
                    w2_after_map=None,
                    error=str(exc),
                )
            rows.append(row)
    return rows


SWEEP_FIELDS = [
    "la_weight", "seed", "final_la_loss", "final_rec_loss",
    "w2_after_map", "config_hash", "error",
]


def _time_laot_map(xs, xt, latent_dim):
    # Work on the first latent_dim coordinates so the measured pipeline is
    # stats + fit + apply at the embedding dimension.
    k = min(latent_dim, xs.shape[1])
    t0 = time.perf_counter()
    s = gaussian.estimate_stats(xs[:, :k])
    t = gaussian.estimate_stats(xt[:, :k])
    amap = gaussian.fit_linear_monge(s, t)
    gaussian.apply_map(amap, xs[:, :k])
    return time.perf_counter() - t0


def _time_exact_emd(xs, xt):
    t0 = time.perf_counter()
    cost = discrete.cost_matrix(xs, xt)
    discrete.exact_emd(discrete.PointCloud(xs), discrete.PointCloud(xt), cost)
    return time.perf_counter() - t0


def _time_entropic(xs, xt):
    t0 = time.perf_counter()
    cost = discrete.cost_matrix(xs, xt)
    eps = 0.05 * float(cost.mean())
    discrete.sinkhorn(
        discrete.PointCloud(xs), discrete.PointCloud(xt), cost, epsilon=eps
    )
    return time.perf_counter() - t0


def run_timing_bench(
    n_list, d=128, methods=("laot_map", "exact_emd"), seed=0,
    reps=3, latent_dim=128, emd_time_budget=None,
):
    """Median wall-clock over ``reps`` repetitions per (method, n).

    ``emd_time_budget`` (seconds) marks exact_emd rows infeasible instead of
    running them when the extrapolated cost exceeds the budget.
    """
    if list(n_list) != sorted(n_list):
        raise InvalidInput("n values must be sorted ascending")
    timers = {
        "laot_map": lambda xs, xt: _time_laot_map(xs, xt, latent_dim),
        "exact_emd": _time_exact_emd,
        "entropic": _time_entropic,
    }
    rows = []
    last_emd = {}
    for n in n_list:
        xs, xt, _ = datasets.gen_synthetic("large_n", seed=seed, n=n, d=d)
        for method in methods:
            if method not in timers:
                raise InvalidInput(f"unknown timing method {method!r}")
            if method == "exact_emd" and emd_time_budget is not None and last_emd:
                prev_n, prev_t = max(last_emd.items())
                projected = prev_t * (n / prev_n) ** 3
                if projected > emd_time_budget:
                    rows.append(
                        {"method": method, "n": n, "seconds": None,
                         "reps": 0, "status": "infeasible"}
                    )
                    continue
            times = [timers[method](xs, xt) for _ in range(reps)]
            med = float(np.median(times))
            status = "ok"
            if (
                method == "exact_emd"
                and emd_time_budget is not None
                and med > emd_time_budget
            ):
                status = "infeasible"
            if method == "exact_emd":
                last_emd[n] = med
            rows.append(
                {"method": method, "n": n, "seconds": med,
                 "reps": reps, "status": status}
            )
    return rows


BENCH_FIELDS = ["method", "n", "seconds", "reps", "status"]


def _eval_rows(task, method, seed, report, chash):
    return {
        "task": task,
        "method": method,
        "seed": seed,
        "accuracy": report.accuracy,
        "runtime_seconds": report.runtime_seconds,
        "config_hash": chash,
    }


def run_da_experiment(
    task, seeds, config, n=1000, target_dim=None,
    methods=("latent_affine", "ot_gauss", "emd_barycentric", "invariant"),
    knn_k=evaluation.DEFAULT_KNN_K, with_bound_diag=True,
):
    """Run the trained method and the baselines on one task across seeds.

    Returns ``(rows, reports, errors)``: aggregate CSV rows, per-run
    :class:`EvalReport` objects keyed by (method, seed), and per-cell error
    strings.  Heterogeneous pairs are supported through ``target_dim``.
    """
    rows, reports, errors = [], {}, {}
    for seed in seeds:
        cfg = replace(config, seed=int(seed))
        chash = config_hash(cfg.to_dict())
        src, tgt, _ = datasets.gen_synthetic(task, seed=seed, n=n, target_dim=target_dim)
        heterogeneous = src.features.shape[1] != tgt.features.shape[1]
        for method in methods:
            try:
                if method == "latent_affine":
                    model = training.init_model(
                        src.features.shape[1], tgt.features.shape[1], cfg
                    )
                    model, _ = training.train(model, src.features, tgt.features)
                    report = evaluation.evaluate_transfer(model, src, tgt, k=knn_k)
                    if with_bound_diag:
                        train_set = evaluation.LabeledDataset(
                            features=training.transfer(model, src.features),
                            labels=src.labels,
                        )
                        classify = lambda z: evaluation.knn_predict(train_set, z, knn_k)
                        bound, lhs, breakdown = evaluation.worst_case_bound_diag(
                            model, src, tgt, classify, k=knn_k, seed=seed
                        )
                        reports[("bound_diag", seed)] = {
                            "bound": bound, "lhs": lhs, **breakdown
                        }
                elif method == "invariant":
                    model = training.init_model(
                        src.features.shape[1], tgt.features.shape[1], cfg
                    )
                    model, _ = training.invariant_baseline_train(
                        model, src.features, tgt.features
                    )
                    report = evaluation.evaluate_transfer(model, src, tgt, k=knn_k)
                    report = replace(report, method_tag="invariant")
                elif method == "ot_gauss":
                    if heterogeneous:
                        continue
                    report = evaluation.ot_gauss_baseline(src, tgt, k=knn_k)
                elif method == "emd_barycentric":
                    if heterogeneous:
                        continue
                    report = evaluation.emd_barycentric_baseline(src, tgt, k=knn_k)
                else:
                    raise InvalidInput(f"unknown method {method!r}")
                reports[(method, seed)] = report
                rows.append(_eval_rows(task, method, seed, report, chash))
            except LinalignError as exc:
                errors[(method, seed)] = str(exc)
    return rows, reports, errors


DA_FIELDS = ["task", "method", "seed", "accuracy", "runtime_seconds", "config_hash"]


def rv_select(grid, source, target_features, seeds):
    """Reverse-validation grid selection.

    ``grid`` is a list of :class:`training.ExperimentConfig`; the winner is
    the config with the highest median RV score over the seeds.  Returns
    ``(best_config, rows)``.
    """
    rows = []
    medians = []
    for cfg in grid:
        scores = []
        for seed in seeds:
            run_cfg = replace(cfg, seed=int(seed))
            score, meta = evaluation.reverse_validation_score(
                training.init_model, source, target_features, run_cfg
            )
            scores.append(score)
            rows.append(
                {
                    "config_hash": config_hash(cfg.to_dict()),
                    "la_weight": cfg.la_weight,
                    "latent_dim": cfg.latent_dim,
                    "seed": int(seed),
                    "rv_score": score,
                    "pseudo_label_collapse": meta["pseudo_label_collapse"],
                }
            )
        medians.append(float(np.median(scores)))
    best = grid[int(np.argmax(medians))]
    return best, rows


RV_FIELDS = [
    "config_hash", "la_weight", "latent_dim", "seed", "rv_score",
    "pseudo_label_collapse",
]
