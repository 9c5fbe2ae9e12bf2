"""Coupled-autoencoder training for linearly alignable embeddings.

Two autoencoders (one per domain) are trained jointly on

    total = reconstruction + la_weight * alignment,

where the alignment term is the empirical squared W2 between the source
embeddings pushed through the batch-fitted affine OT map and the target
embeddings.  The fitted map and the optimal plan are treated as constants of
the backward pass (envelope / stop-gradient treatment); gradients reach the
encoders only through the embeddings appearing in the transport cost.
"""

import csv
import json
import logging
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import discrete, gaussian, nn
from .errors import InvalidInput, InvalidState, NumericalFailure

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    """All hyperparameters of one training run."""

    latent_dim: int = 2
    la_weight: float = 1.0
    batch_size: int = 64
    learning_rate: float = 3e-3
    epochs: int = 300
    seed: int = 0
    cov_reg: float = gaussian.DEFAULT_COV_REG
    grad_clip: float = 1.0
    la_solver: str = "exact"  # "exact" | "entropic"
    la_epsilon: float = None  # entropic only; None -> 0.05 * mean(cost)
    map_gradient_mode: str = "stop_gradient"
    warm_start: bool = True

    def __post_init__(self):
        if self.latent_dim < 1:
            raise InvalidInput("latent_dim must be >= 1")
        if self.batch_size < 2:
            raise InvalidInput("batch_size must be >= 2 (covariance needs 2 points)")
        if self.la_weight < 0:
            raise InvalidInput("la_weight must be >= 0")
        if self.la_solver not in ("exact", "entropic"):
            raise InvalidInput(f"unknown la_solver {self.la_solver!r}")
        if self.map_gradient_mode != "stop_gradient":
            raise InvalidInput("only map_gradient_mode='stop_gradient' is implemented")

    def to_dict(self):
        return {
            "latent_dim": self.latent_dim,
            "la_weight": self.la_weight,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "seed": self.seed,
            "cov_reg": self.cov_reg,
            "grad_clip": self.grad_clip,
            "la_solver": self.la_solver,
            "la_epsilon": self.la_epsilon,
            "map_gradient_mode": self.map_gradient_mode,
            "warm_start": self.warm_start,
        }


@dataclass(frozen=True)
class CoupledAutoencoders:
    """Encoder/decoder pairs for both domains plus the fitted latent map."""

    enc_s: nn.MlpParams
    dec_s: nn.MlpParams
    enc_t: nn.MlpParams
    dec_t: nn.MlpParams
    config: ExperimentConfig
    fitted_map: gaussian.AffineMap = None

    def __post_init__(self):
        k = self.config.latent_dim
        if self.enc_s.dims[-1] != k or self.enc_t.dims[-1] != k:
            raise InvalidInput("encoder output widths must equal latent_dim")
        if self.dec_s.dims[0] != k or self.dec_t.dims[0] != k:
            raise InvalidInput("decoder input widths must equal latent_dim")
        if self.dec_s.dims[-1] != self.enc_s.dims[0]:
            raise InvalidInput("source decoder must invert the source encoder widths")
        if self.dec_t.dims[-1] != self.enc_t.dims[0]:
            raise InvalidInput("target decoder must invert the target encoder widths")


def _autoencoder_dims(input_dim, latent_dim):
    # Hidden layer fixed to half the input width.
    hidden = max(latent_dim, input_dim // 2)
    return [input_dim, hidden, latent_dim], [latent_dim, hidden, input_dim]


def init_model(input_dim_s, input_dim_t, config):
    """Fresh coupled autoencoders with seeds derived from config.seed.

    When the two domains share an input width, the target networks start from
    the same weights as the source networks.  A shared starting point anchors
    the class correspondence between the two embeddings: with independent
    initializations the domains can converge to equally-aligned solutions
    whose clusters are permuted, which ruins downstream label transfer.
    """
    seeds = np.random.SeedSequence(config.seed).generate_state(4)
    enc_dims_s, dec_dims_s = _autoencoder_dims(input_dim_s, config.latent_dim)
    enc_dims_t, dec_dims_t = _autoencoder_dims(input_dim_t, config.latent_dim)
    homogeneous = input_dim_s == input_dim_t
    return CoupledAutoencoders(
        enc_s=nn.init_params(enc_dims_s, seed=int(seeds[0])),
        dec_s=nn.init_params(dec_dims_s, seed=int(seeds[1])),
        enc_t=nn.init_params(enc_dims_t, seed=int(seeds[0] if homogeneous else seeds[2])),
        dec_t=nn.init_params(dec_dims_t, seed=int(seeds[1] if homogeneous else seeds[3])),
        config=config,
    )


def encode(model, x, domain):
    """Deterministic forward pass through one domain's encoder."""
    if domain not in ("source", "target"):
        raise InvalidInput(f"unknown domain {domain!r}")
    x = np.asarray(x, dtype=float)
    enc = model.enc_s if domain == "source" else model.enc_t
    if x.shape[0] == 0:
        return np.zeros((0, model.config.latent_dim))
    z, _ = nn.forward(enc, x)
    return z


def transfer(model, xs):
    """Encode source samples and push them into the target embedding space."""
    if model.fitted_map is None:
        raise InvalidState("model has no fitted map; train it first")
    zs = encode(model, xs, "source")
    if zs.shape[0] == 0:
        return zs
    return gaussian.apply_map(model.fitted_map, zs)


def reconstruction_loss(model, xs_batch, xt_batch):
    """Mean squared reconstruction error, summed over the two domains."""
    xs = np.asarray(xs_batch, dtype=float)
    xt = np.asarray(xt_batch, dtype=float)
    zs, _ = nn.forward(model.enc_s, xs)
    xs_hat, _ = nn.forward(model.dec_s, zs)
    zt, _ = nn.forward(model.enc_t, xt)
    xt_hat, _ = nn.forward(model.dec_t, zt)
    return float(np.mean(np.sum((xs - xs_hat) ** 2, axis=1))) + float(
        np.mean(np.sum((xt - xt_hat) ** 2, axis=1))
    )


def alignment_loss(zs, zt, cov_reg=gaussian.DEFAULT_COV_REG, solver="exact", epsilon=None):
    """Transport cost between Monge-pushed source embeddings and target ones.

    Fits the affine map on the batch statistics, pushes ``zs`` through it and
    returns ``(cost, map, coupling)``; the coupling is the exact (or entropic)
    plan between the pushed cloud and ``zt``.
    """
    zs = np.asarray(zs, dtype=float)
    zt = np.asarray(zt, dtype=float)
    if zs.shape[0] < 2 or zt.shape[0] < 2:
        raise InvalidInput("alignment needs at least 2 points per batch")
    if zs.shape[1] != zt.shape[1]:
        raise InvalidInput("latent dimensions differ between domains")
    amap = gaussian.fit_linear_monge(
        gaussian.estimate_stats(zs), gaussian.estimate_stats(zt), cov_reg=cov_reg
    )
    pushed = gaussian.apply_map(amap, zs)
    cost = discrete.cost_matrix(pushed, zt)
    source = discrete.PointCloud(pushed)
    target = discrete.PointCloud(zt)
    if solver == "exact":
        coupling = discrete.exact_emd(source, target, cost)
    else:
        eps = epsilon if epsilon is not None else 0.05 * float(cost.mean())
        coupling = discrete.sinkhorn(source, target, cost, epsilon=eps)
    return coupling.cost, amap, coupling


def alignment_grads(zs, zt, amap, coupling):
    """Gradients of the frozen-plan transport cost w.r.t. both embeddings.

    With plan g and map (A, b) held constant, the cost is
    sum_ij g_ij ||A z_i + b - z_j||^2, so
    d/dz_i = 2 A^T sum_j g_ij (A z_i + b - z_j) and
    d/dz_j = -2 sum_i g_ij (A z_i + b - z_j).
    """
    zs = np.asarray(zs, dtype=float)
    zt = np.asarray(zt, dtype=float)
    plan = coupling.plan
    pushed = gaussian.apply_map(amap, zs)
    row = plan.sum(axis=1)
    col = plan.sum(axis=0)
    # residual_i = sum_j g_ij (pushed_i - z_j) = row_i * pushed_i - plan @ zt
    res_rows = row[:, None] * pushed - plan @ zt
    gzs = 2.0 * res_rows @ amap.a
    gzt = -2.0 * (plan.T @ pushed - col[:, None] * zt)
    return gzs, gzt


def _rec_backward(enc, dec, x, la_upstream, la_weight, batch):
    """Gradients of mean reconstruction error (+ weighted alignment upstream)."""
    z, enc_cache = nn.forward(enc, x)
    x_hat, dec_cache = nn.forward(dec, z)
    rec = float(np.mean(np.sum((x - x_hat) ** 2, axis=1)))
    d_xhat = 2.0 * (x_hat - x) / batch
    dec_grads, dz = nn.backward(dec, dec_cache, d_xhat)
    if la_upstream is not None:
        dz = dz + la_weight * la_upstream
    enc_grads, _ = nn.backward(enc, enc_cache, dz)
    return rec, z, enc_grads, dec_grads


# --- PCA / transport-Procrustes warm start ---------------------------------


def pca_basis(x, k):
    """Whitening projection onto the top-k principal components.

    Returns ``(p, q, mu)`` with ``p`` (k x d) mapping centered inputs to
    unit-variance component scores and ``q`` (d x k) its pseudo-inverse, so
    ``x ~ mu + z q^T`` is the rank-k PCA reconstruction.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        raise InvalidInput("pca_basis needs at least 2 samples")
    if k > x.shape[1]:
        raise InvalidInput("latent dim exceeds input dim")
    mu = x.mean(axis=0)
    xc = x - mu
    w, v = np.linalg.eigh(xc.T @ xc / x.shape[0])
    idx = np.argsort(w)[::-1][:k]
    w = np.maximum(w[idx], 1e-12)
    p = (v[:, idx] / np.sqrt(w)).T
    q = v[:, idx] * np.sqrt(w)
    return p, q, mu


def _subsampled_w2(a, b, rotation, rng, m=250):
    ia = rng.choice(a.shape[0], min(m, a.shape[0]), replace=False)
    ib = rng.choice(b.shape[0], min(m, b.shape[0]), replace=False)
    cost = discrete.cost_matrix(a[ia], b[ib] @ rotation.T)
    coupling = discrete.exact_emd(
        discrete.PointCloud(a[ia]), discrete.PointCloud(b[ib]), cost
    )
    return coupling.cost


def orientation_search(zs, zt, seed=0, n_angles=48, n_restarts=16):
    """Orthogonal matrix R minimizing the empirical W2 between zs and zt R^T.

    Whitened component scores are aligned up to an orthogonal transform; this
    resolves that ambiguity from the point clouds alone.  k=1 tries the two
    signs, k=2 scans rotation angles with and without a reflection, k>=3 uses
    EMD/Procrustes alternations from random orthogonal starts.
    """
    zs = np.asarray(zs, dtype=float)
    zt = np.asarray(zt, dtype=float)
    k = zs.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 303]))
    if k == 1:
        candidates = [np.array([[1.0]]), np.array([[-1.0]])]
    elif k == 2:
        candidates = []
        for flip in (1.0, -1.0):
            for theta in np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False):
                c, s = np.cos(theta), np.sin(theta)
                candidates.append(
                    np.array([[c, -s], [s, c]]) @ np.diag([1.0, flip])
                )
    else:
        candidates = [np.eye(k)]
        for _ in range(n_restarts - 1):
            q, r = np.linalg.qr(rng.standard_normal((k, k)))
            candidates.append(q * np.sign(np.diag(r)))
        refined = []
        for rot in candidates:
            for _ in range(5):  # EMD match, then orthogonal Procrustes
                ia = rng.choice(zs.shape[0], min(250, zs.shape[0]), replace=False)
                ib = rng.choice(zt.shape[0], min(250, zt.shape[0]), replace=False)
                cost = discrete.cost_matrix(zs[ia], zt[ib] @ rot.T)
                coupling = discrete.exact_emd(
                    discrete.PointCloud(zs[ia]), discrete.PointCloud(zt[ib]), cost
                )
                cross = (coupling.plan @ zt[ib]).T @ zs[ia]
                u, _, vt = np.linalg.svd(cross)
                rot = (u @ vt).T
            refined.append(rot)
        candidates = refined
    # Coarse pass on a small subsample, then re-score the leaders on a larger
    # one: near-symmetric clouds produce gaps smaller than the subsampling
    # noise at m=250.
    coarse = []
    for rot in candidates:
        cost = _subsampled_w2(zs, zt, rot, np.random.default_rng(
            np.random.SeedSequence([seed, 304])))
        coarse.append((cost, rot))
    coarse.sort(key=lambda item: item[0])
    best_rot, best_cost = None, np.inf
    for _, rot in coarse[:8]:
        cost = _subsampled_w2(zs, zt, rot, np.random.default_rng(
            np.random.SeedSequence([seed, 305])), m=600)
        if cost < best_cost:
            best_rot, best_cost = rot, cost
    return best_rot


def _warmed_autoencoder(enc, dec, p, q, mu, data):
    """Overwrite one autoencoder so it initially computes the PCA chart.

    The encoder's first k hidden units carry z = p (x - mu) through the ReLU
    by adding a per-unit positive shift larger than the data range, undone in
    the linear output layer; the decoder mirrors the trick and outputs
    mu + z q^T.  Remaining hidden units keep their random weights but start
    with zero output columns, so they add capacity without disturbing the
    chart.
    """
    k = p.shape[0]
    z = (data - mu) @ p.T
    shift = 2.0 * np.max(np.abs(z), axis=0) + 1.0

    w1 = enc.layers[0].weight.copy()
    b1 = enc.layers[0].bias.copy()
    w1[:k] = p
    b1[:k] = -p @ mu + shift
    w2 = np.zeros_like(enc.layers[1].weight)
    b2 = -shift.copy()
    w2[:, :k] = np.eye(k)
    new_enc = nn.MlpParams(
        layers=(
            nn.Layer(weight=w1, bias=b1, activation=enc.layers[0].activation),
            nn.Layer(weight=w2, bias=b2, activation=enc.layers[1].activation),
        ),
        rng_seed=enc.rng_seed,
    )

    d1 = dec.layers[0].weight.copy()
    db1 = dec.layers[0].bias.copy()
    d1[:k] = np.eye(k)
    db1[:k] = shift
    d2 = np.zeros_like(dec.layers[1].weight)
    d2[:, :k] = q
    db2 = mu - q @ shift
    new_dec = nn.MlpParams(
        layers=(
            nn.Layer(weight=d1, bias=db1, activation=dec.layers[0].activation),
            nn.Layer(weight=d2, bias=db2, activation=dec.layers[1].activation),
        ),
        rng_seed=dec.rng_seed,
    )
    return new_enc, new_dec


def pca_warm_start(model, source_data, target_data):
    """Initialize both autoencoders from whitened PCA charts of their data.

    When the alignment term is active, the target chart is additionally
    rotated by the transport-Procrustes solution so both latent clouds start
    in corresponding orientations.  This anchors the class correspondence:
    from random weights, training can converge to well-aligned embeddings
    whose clusters are permuted between the domains.  With la_weight == 0 the
    rotation is skipped and each chart depends only on its own domain's data.
    """
    cfg = model.config
    xs = np.asarray(source_data, dtype=float)
    xt = np.asarray(target_data, dtype=float)
    k = cfg.latent_dim
    if k > min(xs.shape[1], xt.shape[1]):
        return model
    ps, qs, mus = pca_basis(xs, k)
    pt, qt, mut = pca_basis(xt, k)
    if cfg.la_weight > 0:
        rot = orientation_search((xs - mus) @ ps.T, (xt - mut) @ pt.T, seed=cfg.seed)
        pt = rot @ pt
        qt = qt @ rot.T
    enc_s, dec_s = _warmed_autoencoder(model.enc_s, model.dec_s, ps, qs, mus, xs)
    enc_t, dec_t = _warmed_autoencoder(model.enc_t, model.dec_t, pt, qt, mut, xt)
    return CoupledAutoencoders(
        enc_s=enc_s, dec_s=dec_s, enc_t=enc_t, dec_t=dec_t,
        config=cfg, fitted_map=model.fitted_map,
    )


def _fit_full_map(model, source_data, target_data):
    zs = encode(model, source_data, "source")
    zt = encode(model, target_data, "target")
    return gaussian.fit_linear_monge(
        gaussian.estimate_stats(zs),
        gaussian.estimate_stats(zt),
        cov_reg=model.config.cov_reg,
    )


def _train_loop(model, source_data, target_data, align_mode):
    cfg = model.config
    xs = np.asarray(source_data, dtype=float)
    xt = np.asarray(target_data, dtype=float)
    if xs.shape[1] != model.enc_s.dims[0] or xt.shape[1] != model.enc_t.dims[0]:
        raise InvalidInput("data widths do not match the encoders")
    if cfg.warm_start:
        model = pca_warm_start(model, xs, xt)
    # Independent shuffle streams so each domain's trajectory is unaffected
    # by the other when la_weight == 0.
    rng_s = np.random.default_rng(np.random.SeedSequence([cfg.seed, 101]))
    rng_t = np.random.default_rng(np.random.SeedSequence([cfg.seed, 202]))
    enc_s, dec_s, enc_t, dec_t = model.enc_s, model.dec_s, model.enc_t, model.dec_t
    states = {
        "enc_s": nn.init_adam_state(enc_s),
        "dec_s": nn.init_adam_state(dec_s),
        "enc_t": nn.init_adam_state(enc_t),
        "dec_t": nn.init_adam_state(dec_t),
    }
    log = []
    bs = cfg.batch_size
    n_steps = min(xs.shape[0], xt.shape[0]) // bs
    for epoch in range(cfg.epochs):
        perm_s = rng_s.permutation(xs.shape[0])
        perm_t = rng_t.permutation(xt.shape[0])
        for step in range(n_steps):
            xb_s = xs[perm_s[step * bs : (step + 1) * bs]]
            xb_t = xt[perm_t[step * bs : (step + 1) * bs]]
            cur = CoupledAutoencoders(
                enc_s=enc_s, dec_s=dec_s, enc_t=enc_t, dec_t=dec_t, config=cfg
            )
            # Alignment term on the current embeddings (map and plan frozen).
            l_la = 0.0
            gzs = gzt = None
            if cfg.la_weight > 0:
                zs = encode(cur, xb_s, "source")
                zt = encode(cur, xb_t, "target")
                try:
                    if align_mode == "monge":
                        l_la, amap, coupling = alignment_loss(
                            zs, zt, cov_reg=cfg.cov_reg,
                            solver=cfg.la_solver, epsilon=cfg.la_epsilon,
                        )
                    else:  # identity map: direct W2 between the embeddings
                        amap = gaussian.identity_map(cfg.latent_dim)
                        cost = discrete.cost_matrix(zs, zt)
                        coupling = discrete.exact_emd(
                            discrete.PointCloud(zs), discrete.PointCloud(zt), cost
                        )
                        l_la = coupling.cost
                    gzs, gzt = alignment_grads(zs, zt, amap, coupling)
                except NumericalFailure as exc:
                    logger.warning(
                        "alignment term skipped at epoch %d step %d: %s",
                        epoch, step, exc,
                    )
                    l_la, gzs, gzt = 0.0, None, None
            rec_s, _, g_enc_s, g_dec_s = _rec_backward(
                enc_s, dec_s, xb_s, gzs, cfg.la_weight, bs
            )
            rec_t, _, g_enc_t, g_dec_t = _rec_backward(
                enc_t, dec_t, xb_t, gzt, cfg.la_weight, bs
            )
            l_rec = rec_s + rec_t
            total = l_rec + cfg.la_weight * l_la
            if not np.isfinite(total):
                raise NumericalFailure(
                    f"non-finite loss at epoch {epoch} step {step}: "
                    f"rec={l_rec}, align={l_la}"
                )
            grad_norm = nn.global_grad_norm(
                g_enc_s + g_dec_s + g_enc_t + g_dec_t
            )
            # Clip per domain so a domain's trajectory stays independent of
            # the other at la_weight == 0.
            ns = len(g_enc_s)
            grp_s = nn.clip_grad_norm(g_enc_s + g_dec_s, cfg.grad_clip)
            g_enc_s, g_dec_s = grp_s[:ns], grp_s[ns:]
            nt = len(g_enc_t)
            grp_t = nn.clip_grad_norm(g_enc_t + g_dec_t, cfg.grad_clip)
            g_enc_t, g_dec_t = grp_t[:nt], grp_t[nt:]
            enc_s, states["enc_s"] = nn.adam_step(
                enc_s, g_enc_s, states["enc_s"], cfg.learning_rate
            )
            dec_s, states["dec_s"] = nn.adam_step(
                dec_s, g_dec_s, states["dec_s"], cfg.learning_rate
            )
            enc_t, states["enc_t"] = nn.adam_step(
                enc_t, g_enc_t, states["enc_t"], cfg.learning_rate
            )
            dec_t, states["dec_t"] = nn.adam_step(
                dec_t, g_dec_t, states["dec_t"], cfg.learning_rate
            )
            log.append(
                {
                    "epoch": epoch,
                    "step": step,
                    "l_rec": l_rec,
                    "l_la": l_la,
                    "total": total,
                    "grad_norm": grad_norm,
                }
            )
    trained = CoupledAutoencoders(
        enc_s=enc_s, dec_s=dec_s, enc_t=enc_t, dec_t=dec_t, config=cfg
    )
    fitted = _fit_full_map(trained, xs, xt)
    return replace(trained, fitted_map=fitted), log


def train(model, source_data, target_data):
    """Train the coupled autoencoders; returns (trained model, step log).

    The affine map published on the returned model is fitted on the full
    encoded datasets after the last epoch.
    """
    return _train_loop(model, source_data, target_data, align_mode="monge")


def invariant_baseline_train(model, source_data, target_data):
    """Ablation: alignment term is the direct W2 between embeddings (map = Id)."""
    return _train_loop(model, source_data, target_data, align_mode="identity")


def write_log_csv(log, path):
    """Per-step training log as CSV (epoch, step, l_rec, l_la, total, grad_norm)."""
    fields = ["epoch", "step", "l_rec", "l_la", "total", "grad_norm"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(log)


# --- model checkpoint: JSON header + four network payloads -----------------


def save_model(model, path):
    header = json.dumps(
        {
            "config": model.config.to_dict(),
            "fitted_map": None
            if model.fitted_map is None
            else {
                "a": model.fitted_map.a.ravel().tolist(),  # row-major
                "b": model.fitted_map.b.tolist(),
                "dim": model.fitted_map.dim,
            },
        }
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for net in (model.enc_s, model.dec_s, model.enc_t, model.dec_t):
            fh.write(nn.dump_params(net))


def load_model(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    (header_len,) = struct.unpack_from("<Q", blob, 0)
    header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    pos = 8 + header_len
    nets = []
    for _ in range(4):
        params, used = nn.parse_params(blob, pos)
        nets.append(params)
        pos += used
    fitted = None
    if header["fitted_map"] is not None:
        d = header["fitted_map"]["dim"]
        fitted = gaussian.AffineMap(
            a=np.array(header["fitted_map"]["a"]).reshape(d, d),
            b=np.array(header["fitted_map"]["b"]),
        )
    return CoupledAutoencoders(
        enc_s=nets[0],
        dec_s=nets[1],
        enc_t=nets[2],
        dec_t=nets[3],
        config=ExperimentConfig(**header["config"]),
        fitted_map=fitted,
    )
