"""Downstream domain-adaptation evaluation.

kNN transfer accuracy, reverse-validation model selection, the raw-feature
affine-map and barycentric-OT baselines, and the worst-case risk-bound
diagnostic.
"""

import json
import time
from dataclasses import dataclass

import numpy as np

from . import discrete, gaussian, training
from .errors import InvalidInput

DEFAULT_KNN_K = 3
#: Labeled target points per class in the semi-supervised protocol.
SEMI_SUPERVISED_PER_CLASS = 3


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with integer class labels.

    ``labeled_mask`` marks the (few) labeled target points in the
    semi-supervised setting; absent means fully labeled.
    """

    features: np.ndarray
    labels: np.ndarray
    labeled_mask: np.ndarray = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise InvalidInput(
                f"inconsistent shapes: features {x.shape}, labels {y.shape}"
            )
        if y.size and y.min() < 0:
            raise InvalidInput("labels must be nonnegative class ids")
        if self.labeled_mask is not None:
            mask = np.asarray(self.labeled_mask, dtype=bool)
            if mask.shape != (x.shape[0],):
                raise InvalidInput("labeled_mask length must match the sample count")
            object.__setattr__(self, "labeled_mask", mask)

    @property
    def size(self):
        return self.features.shape[0]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    per_class_accuracy: np.ndarray
    method_tag: str
    runtime_seconds: float

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "per_class_accuracy": np.asarray(self.per_class_accuracy).tolist(),
            "method_tag": self.method_tag,
            "runtime_seconds": self.runtime_seconds,
        }

    def to_json(self):
        return json.dumps(self.to_dict())


class GuardedArray(np.ndarray):
    """Array that raises on any element access; used to prove labels are unread."""

    def __array_finalize__(self, obj):
        pass

    def __getitem__(self, item):
        raise RuntimeError("guarded array was read")

    def __array_ufunc__(self, *args, **kwargs):
        raise RuntimeError("guarded array was read")


def guard_labels(labels):
    return np.asarray(labels).view(GuardedArray)


def knn_predict(train, query, k):
    """Majority-vote kNN with deterministic tie-breaking.

    Ties are broken by the smallest cumulative distance among tied classes,
    then by the smallest class id.
    """
    if train.size == 0:
        raise InvalidInput("empty training set")
    if not 1 <= k <= train.size:
        raise InvalidInput(f"k={k} out of range for {train.size} training points")
    query = np.asarray(query, dtype=float)
    d2 = discrete.cost_matrix(query, train.features)
    nearest = np.argpartition(d2, k - 1, axis=1)[:, :k]
    n_classes = train.n_classes
    preds = np.empty(query.shape[0], dtype=int)
    for i in range(query.shape[0]):
        idx = nearest[i]
        votes = np.bincount(train.labels[idx], minlength=n_classes)
        top = votes.max()
        tied = np.flatnonzero(votes == top)
        if tied.size == 1:
            preds[i] = tied[0]
            continue
        cum = np.full(n_classes, np.inf)
        for c in tied:
            cum[c] = d2[i, idx[train.labels[idx] == c]].sum()
        best = cum[tied].min()
        preds[i] = tied[np.flatnonzero(cum[tied] == best)[0]]
    return preds


def score_report(true_labels, predicted, method_tag, runtime_seconds):
    """Accuracy and per-class accuracy for a prediction vector."""
    true_labels = np.asarray(true_labels, dtype=int)
    n_classes = int(true_labels.max()) + 1
    per_class = np.zeros(n_classes)
    for c in range(n_classes):
        mask = true_labels == c
        per_class[c] = float(np.mean(predicted[mask] == c)) if mask.any() else 0.0
    return EvalReport(
        accuracy=float(np.mean(predicted == true_labels)),
        per_class_accuracy=per_class,
        method_tag=method_tag,
        runtime_seconds=runtime_seconds,
    )


def evaluate_transfer(model, source, target, k=DEFAULT_KNN_K):
    """Classify encoded target points with kNN fit on the mapped source.

    When the target carries a labeled subset mask, those points' embeddings
    join the kNN training set (semi-supervised protocol).
    """
    t0 = time.perf_counter()
    train_x = training.transfer(model, source.features)
    train_y = source.labels
    target_emb = training.encode(model, target.features, "target")
    if target.labeled_mask is not None and target.labeled_mask.any():
        train_x = np.vstack([train_x, target_emb[target.labeled_mask]])
        train_y = np.concatenate([train_y, target.labels[target.labeled_mask]])
    preds = knn_predict(
        LabeledDataset(features=train_x, labels=train_y), target_emb, k
    )
    return score_report(
        target.labels, preds, "latent_affine_transfer", time.perf_counter() - t0
    )


def ot_gauss_baseline(source, target, k=DEFAULT_KNN_K):
    """Affine OT map fitted on raw features: the no-embedding ablation."""
    if source.features.shape[1] != target.features.shape[1]:
        raise InvalidInput("raw-feature baseline needs homogeneous domains")
    t0 = time.perf_counter()
    amap = gaussian.fit_linear_monge(
        gaussian.estimate_stats(source.features),
        gaussian.estimate_stats(target.features),
    )
    mapped = gaussian.apply_map(amap, source.features)
    preds = knn_predict(
        LabeledDataset(features=mapped, labels=source.labels), target.features, k
    )
    return score_report(target.labels, preds, "ot_gauss_raw", time.perf_counter() - t0)


def emd_barycentric_baseline(source, target, k=DEFAULT_KNN_K):
    """Exact OT plan on raw features, barycentric projection, kNN."""
    if source.features.shape[1] != target.features.shape[1]:
        raise InvalidInput("raw-feature baseline needs homogeneous domains")
    t0 = time.perf_counter()
    cost = discrete.cost_matrix(source.features, target.features)
    coupling = discrete.exact_emd(
        discrete.PointCloud(source.features),
        discrete.PointCloud(target.features),
        cost,
    )
    mapped = discrete.barycentric_map(coupling, target.features)
    preds = knn_predict(
        LabeledDataset(features=mapped, labels=source.labels), target.features, k
    )
    return score_report(
        target.labels, preds, "emd_barycentric", time.perf_counter() - t0
    )


def _split_indices(n, frac, rng):
    perm = rng.permutation(n)
    cut = int(round(n * frac))
    return perm[:cut], perm[cut:]


def reverse_validation_score(model_factory, source, target_features, config, k=DEFAULT_KNN_K):
    """Label-free model selection score via reverse validation.

    Train source->target on 80% of the source, pseudo-label the target,
    train a reverse model target->source on the pseudo-labeled target, and
    score its transfer on the held-out 20% of the labeled source.  Returns
    ``(score, metadata)``; no target labels are consumed.

    ``model_factory(input_dim_s, input_dim_t, config)`` must return a fresh
    untrained model (normally :func:`training.init_model`).
    """
    target_features = np.asarray(target_features, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 777]))
    train_idx, held_idx = _split_indices(source.size, 0.8, rng)
    src_train = LabeledDataset(
        features=source.features[train_idx], labels=source.labels[train_idx]
    )
    src_held = LabeledDataset(
        features=source.features[held_idx], labels=source.labels[held_idx]
    )

    fwd = model_factory(src_train.features.shape[1], target_features.shape[1], config)
    fwd, _ = training.train(fwd, src_train.features, target_features)
    pseudo = knn_predict(
        LabeledDataset(
            features=training.transfer(fwd, src_train.features),
            labels=src_train.labels,
        ),
        training.encode(fwd, target_features, "target"),
        k,
    )
    collapsed = np.unique(pseudo).size == 1

    rev = model_factory(target_features.shape[1], src_train.features.shape[1], config)
    rev, _ = training.train(rev, target_features, src_train.features)
    held_preds = knn_predict(
        LabeledDataset(features=training.transfer(rev, target_features), labels=pseudo),
        training.encode(rev, src_held.features, "target"),
        k,
    )
    score = float(np.mean(held_preds == src_held.labels))
    return score, {"pseudo_label_collapse": collapsed, "held_out_size": src_held.size}


def lipschitz_estimate(classify, points, n_pairs=10_000, seed=0):
    """Empirical Lipschitz constant of a one-hot classifier over sampled pairs."""
    points = np.asarray(points, dtype=float)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, points.shape[0], size=n_pairs)
    j = rng.integers(0, points.shape[0], size=n_pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    yi = classify(points[i])
    yj = classify(points[j])
    num = np.sqrt(2.0) * (yi != yj)  # one-hot difference norm
    den = np.linalg.norm(points[i] - points[j], axis=1)
    ok = den > 0
    return float(np.max(num[ok] / den[ok])) if ok.any() else 0.0


def worst_case_bound_diag(model, source, target, classify, k=DEFAULT_KNN_K, seed=0):
    """Both sides of the worst-case target-risk bound with empirical plug-ins.

    ``classify`` maps an n x k embedding matrix to predicted labels (0/1 loss,
    one-hot outputs).  Returns ``(bound_value, lhs_risk, breakdown)`` where
    the bound is

        risk on mapped source
        + 2*sqrt(2) * Mh_hat * tr(cov of target embeddings)^(1/2)
        + joint-minimizer surrogate (3NN on the union of both labeled sets,
          summed risks).
    """
    zs_pushed = training.transfer(model, source.features)
    zt = training.encode(model, target.features, "target")

    lhs = float(np.mean(classify(zt) != target.labels))
    src_risk = float(np.mean(classify(zs_pushed) != source.labels))

    mh = lipschitz_estimate(classify, np.vstack([zs_pushed, zt]), seed=seed)
    trace_term = float(np.sqrt(max(np.trace(gaussian.estimate_stats(zt).cov), 0.0)))

    union = LabeledDataset(
        features=np.vstack([zs_pushed, zt]),
        labels=np.concatenate([source.labels, target.labels]),
    )
    joint = float(
        np.mean(knn_predict(union, zt, k) != target.labels)
    ) + float(np.mean(knn_predict(union, zs_pushed, k) != source.labels))

    bound = src_risk + 2.0 * np.sqrt(2.0) * mh * trace_term + joint
    breakdown = {
        "source_risk": src_risk,
        "lipschitz_estimate": mh,
        "target_trace_sqrt": trace_term,
        "joint_term": joint,
        "slack": bound - lhs,
    }
    return bound, lhs, breakdown
