"""Acceptance suite: ten end-to-end criteria at their stated tolerances.

Each criterion prints the measured quantities, so a verbose run doubles as
an acceptance report.  The five full nonlinear_da trainings are shared
between the lambda-trend, accuracy-margin, and bound-diagnostic criteria
through module-scoped fixtures; the bound diagnostic piggybacks on the
accuracy runs and adds no training of its own.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from linalign import datasets, discrete, evaluation, experiments, gaussian, training

from conftest import random_spd
from test_discrete import brute_force_uniform
from test_nn import finite_diff_grads
from linalign import nn

SEEDS = tuple(range(5))


def post_map_w2(model, xs, xt):
    zs = training.encode(model, xs, "source")
    zt = training.encode(model, xt, "target")
    return discrete.w2_empirical(gaussian.apply_map(model.fitted_map, zs), zt)


def train_full(task, seed, la_weight, n=1000, gen_seed=None):
    cfg = training.ExperimentConfig(seed=seed, la_weight=la_weight)
    src, tgt, _ = datasets.gen_synthetic(
        task, seed=seed if gen_seed is None else gen_seed, n=n
    )
    model = training.init_model(src.features.shape[1], tgt.features.shape[1], cfg)
    model, _ = training.train(model, src.features, tgt.features)
    return src, tgt, model


@pytest.fixture(scope="module")
def aligned_runs():
    """One fully trained la_weight=1 model per seed on nonlinear_da."""
    t0 = time.perf_counter()
    runs = [(seed, *train_full("nonlinear_da", seed, la_weight=1.0)) for seed in SEEDS]
    return {"runs": runs, "elapsed": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def unaligned_w2s():
    """Post-map embedding W2 of la_weight=0 models, per seed."""
    t0 = time.perf_counter()
    w2s = []
    for seed in SEEDS:
        src, tgt, model = train_full("nonlinear_da", seed, la_weight=0.0)
        w2s.append(post_map_w2(model, src.features, tgt.features))
    return {"w2s": w2s, "elapsed": time.perf_counter() - t0}


class TestCriterion1GaussianExactness:
    def test_hand_derived_values_and_map(self):
        t0 = time.perf_counter()
        s1 = gaussian.GaussianStats(np.array([0.0]), np.array([[1.0]]), n=100)
        t1 = gaussian.GaussianStats(np.array([3.0]), np.array([[4.0]]), n=100)
        v10 = gaussian.bures_wasserstein_sq(s1, t1)
        assert v10 == pytest.approx(10.0, abs=1e-8)

        s2 = gaussian.GaussianStats(np.zeros(2), np.diag([4.0, 1.0]), n=100)
        t2 = gaussian.GaussianStats(
            np.array([3.0, 0.0]), np.diag([1.0, 4.0]), n=100
        )
        v11 = gaussian.bures_wasserstein_sq(s2, t2)
        assert v11 == pytest.approx(11.0, abs=1e-8)

        m = gaussian.fit_linear_monge(
            gaussian.GaussianStats(np.zeros(2), np.diag([4.0, 1.0]), n=100),
            gaussian.GaussianStats(np.zeros(2), np.diag([1.0, 4.0]), n=100),
            cov_reg=0.0,
        )
        assert np.abs(m.a - np.diag([0.5, 2.0])).max() < 1e-8
        assert np.abs(m.b).max() < 1e-8
        elapsed = time.perf_counter() - t0
        assert elapsed < 1.0
        print(
            f"criterion 1: W2^2 values {v10:.12f}, {v11:.12f}; "
            f"diag map recovered; {elapsed:.3f}s"
        )


class TestCriterion2Pushforward:
    def test_fifty_random_spd_pairs(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(2)
        worst_rel, worst_bw = 0.0, 0.0
        for _ in range(50):
            d = int(rng.integers(2, 17))
            s = gaussian.GaussianStats(
                rng.standard_normal(d), random_spd(rng, d), n=100
            )
            t = gaussian.GaussianStats(
                rng.standard_normal(d), random_spd(rng, d), n=100
            )
            m = gaussian.fit_linear_monge(s, t, cov_reg=0.0)
            pushed_cov = m.a @ s.cov @ m.a.T
            rel = np.linalg.norm(pushed_cov - t.cov) / np.linalg.norm(t.cov)
            pushed = gaussian.GaussianStats(m.a @ s.mean + m.b, pushed_cov, n=100)
            bw = gaussian.bures_wasserstein_sq(pushed, t)
            worst_rel, worst_bw = max(worst_rel, rel), max(worst_bw, bw)
        elapsed = time.perf_counter() - t0
        assert worst_rel < 1e-6
        assert worst_bw < 1e-8
        assert elapsed < 5.0
        print(
            f"criterion 2: worst covariance residual {worst_rel:.2e}, "
            f"worst post-map BW^2 {worst_bw:.2e}; {elapsed:.3f}s"
        )


class TestCriterion3OracleEmd:
    def test_hundred_brute_force_instances(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(2, 7))
            xs = rng.standard_normal((n, 2))
            xt = rng.standard_normal((n, 2))
            cost = discrete.cost_matrix(xs, xt)
            got = discrete.exact_emd(
                discrete.PointCloud(xs), discrete.PointCloud(xt), cost
            ).cost
            worst = max(worst, abs(got - brute_force_uniform(cost)))
        elapsed = time.perf_counter() - t0
        assert worst < 1e-8
        assert elapsed < 10.0
        print(f"criterion 3: worst EMD deviation {worst:.2e}; {elapsed:.3f}s")


class TestCriterion4GradientIntegrity:
    def test_network_and_alignment_gradients(self):
        t0 = time.perf_counter()
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            # Network gradients against central finite differences.
            p = nn.init_params([3, 4, 2], seed=seed)
            x = rng.standard_normal((6, 3))
            target = rng.standard_normal((6, 2))
            out, cache = nn.forward(p, x)
            grads, _ = nn.backward(p, cache, 2.0 * (out - target))
            ref = finite_diff_grads(
                p, x, lambda o: float(np.sum((o - target) ** 2))
            )
            for (gw, gb), (rw, rb) in zip(grads, ref):
                worst = max(
                    worst,
                    np.abs(gw - rw).max() / max(np.abs(rw).max(), 1e-8),
                    np.abs(gb - rb).max() / max(np.abs(rb).max(), 1e-8),
                )
            # Frozen-map alignment-loss directional derivative.
            zs = rng.standard_normal((16, 4))
            zt = rng.standard_normal((16, 4))
            _, amap, coupling = training.alignment_loss(zs, zt)

            def frozen_cost(a, b):
                c = discrete.cost_matrix(gaussian.apply_map(amap, a), b)
                return float(np.sum(coupling.plan * c))

            gzs, gzt = training.alignment_grads(zs, zt, amap, coupling)
            ds, dt = rng.standard_normal(zs.shape), rng.standard_normal(zt.shape)
            h = 1e-6
            fd = (
                frozen_cost(zs + h * ds, zt + h * dt)
                - frozen_cost(zs - h * ds, zt - h * dt)
            ) / (2 * h)
            analytic = float(np.sum(gzs * ds) + np.sum(gzt * dt))
            worst = max(worst, abs(fd - analytic) / max(abs(fd), 1e-8))
        elapsed = time.perf_counter() - t0
        assert worst < 1e-4
        assert elapsed < 30.0
        print(
            f"criterion 4: worst gradient relative error {worst:.2e} "
            f"over 10 seeds; {elapsed:.3f}s"
        )


class TestCriterion5LambdaTrend:
    def test_alignment_weight_shrinks_w2(self, aligned_runs, unaligned_w2s):
        t0 = time.perf_counter()
        w2_on = [
            post_map_w2(model, src.features, tgt.features)
            for _, src, tgt, model in aligned_runs["runs"]
        ]
        med_on = float(np.median(w2_on))
        med_off = float(np.median(unaligned_w2s["w2s"]))
        elapsed = time.perf_counter() - t0 + unaligned_w2s["elapsed"]
        assert med_on < med_off
        assert elapsed < 300.0
        print(
            f"criterion 5: median post-map W2 {med_on:.4f} (weight 1) vs "
            f"{med_off:.4f} (weight 0); {elapsed:.1f}s"
        )


class TestCriterion6AccuracyMargin:
    def test_beats_raw_affine_baseline_by_5_points(self, aligned_runs):
        t0 = time.perf_counter()
        ours, base = [], []
        for _, src, tgt, model in aligned_runs["runs"]:
            ours.append(evaluation.evaluate_transfer(model, src, tgt).accuracy)
            base.append(evaluation.ot_gauss_baseline(src, tgt).accuracy)
        med_ours = float(np.median(ours))
        med_base = float(np.median(base))
        elapsed = time.perf_counter() - t0 + aligned_runs["elapsed"]
        assert med_ours - med_base >= 0.05
        assert elapsed < 600.0
        print(
            f"criterion 6: median accuracy {med_ours:.3f} vs raw affine "
            f"baseline {med_base:.3f} (margin {med_ours - med_base:+.3f}); "
            f"{elapsed:.1f}s"
        )


class TestCriterion7ComplexityOrdering:
    def test_timing_ratios(self):
        rows = experiments.run_timing_bench(
            [1000, 10000], d=128, methods=("laot_map", "exact_emd"),
            seed=0, reps=3,
        )
        secs = {(r["method"], r["n"]): r["seconds"] for r in rows}
        assert all(r["reps"] >= 3 for r in rows)
        emd_over_ours = secs[("exact_emd", 10000)] / secs[("laot_map", 10000)]
        scaling = secs[("laot_map", 10000)] / secs[("laot_map", 1000)]
        assert emd_over_ours >= 50.0
        assert scaling <= 15.0
        print(
            f"criterion 7: exact EMD / affine-map time {emd_over_ours:.0f}x "
            f"at n=10000; affine-map 10000/1000 scaling {scaling:.2f}x"
        )


class TestCriterion8MapRecoveryRate:
    def test_error_halves_from_1000_to_4000(self):
        t0 = time.perf_counter()
        errs = {1000: [], 4000: []}
        for n, seed in ((n, s) for n in errs for s in SEEDS):
            src, tgt, params = datasets.gen_synthetic(
                "gauss_affine", seed=seed, n=n
            )
            fit = gaussian.fit_linear_monge(
                gaussian.estimate_stats(src.features),
                gaussian.estimate_stats(tgt.features),
            )
            errs[n].append(np.linalg.norm(fit.a - params["a0"]))
        med_small = float(np.median(errs[1000]))
        med_large = float(np.median(errs[4000]))
        elapsed = time.perf_counter() - t0
        assert med_large <= 0.5 * med_small
        assert elapsed < 120.0
        print(
            f"criterion 8: median map error {med_small:.4f} at n=1000, "
            f"{med_large:.4f} at n=4000; {elapsed:.1f}s"
        )


class TestCriterion9BoundDiagnostic:
    def test_bound_holds_on_every_run(self, aligned_runs):
        slacks = []
        for seed, src, tgt, model in aligned_runs["runs"]:
            train_set = evaluation.LabeledDataset(
                features=training.transfer(model, src.features),
                labels=src.labels,
            )
            bound, lhs, breakdown = evaluation.worst_case_bound_diag(
                model, src, tgt,
                lambda z: evaluation.knn_predict(
                    train_set, z, evaluation.DEFAULT_KNN_K
                ),
                seed=seed,
            )
            assert lhs <= bound, f"seed {seed}: lhs {lhs} exceeds bound {bound}"
            slacks.append(breakdown["slack"])
        print(
            "criterion 9: bound holds on all runs; slack per seed "
            + ", ".join(f"{s:.3f}" for s in slacks)
        )


class TestCriterion10ReverseValidation:
    def test_selected_config_near_grid_best(self):
        t0 = time.perf_counter()
        src, tgt, _ = datasets.gen_synthetic("nonlinear_da", seed=11, n=1000)
        grid = [
            training.ExperimentConfig(la_weight=lam) for lam in (0.0, 0.3, 1.0)
        ]
        best, _ = experiments.rv_select(grid, src, tgt.features, seeds=SEEDS)
        # Oracle: true target accuracy of every grid config over the same
        # seeds, which reverse validation never sees.
        true_median = {}
        for cfg in grid:
            accs = []
            for seed in SEEDS:
                run_cfg = replace(cfg, seed=seed)
                model = training.init_model(
                    src.features.shape[1], tgt.features.shape[1], run_cfg
                )
                model, _ = training.train(model, src.features, tgt.features)
                accs.append(
                    evaluation.evaluate_transfer(model, src, tgt).accuracy
                )
            true_median[cfg.la_weight] = float(np.median(accs))
        selected = true_median[best.la_weight]
        top = max(true_median.values())
        elapsed = time.perf_counter() - t0
        assert top - selected <= 0.03
        assert elapsed < 1200.0
        print(
            f"criterion 10: selected la_weight={best.la_weight} with true "
            f"accuracy {selected:.3f}, grid best {top:.3f}; {elapsed:.1f}s"
        )
