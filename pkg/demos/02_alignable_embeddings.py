"""Learning linearly alignable embeddings for domain adaptation.

The closed-form affine map is exact only for affinely linked clouds.  When
the target is a nonlinear distortion of the source, an affine map on raw
features cannot undo it.  The fix: train one autoencoder per domain with an
extra alignability term — the transport cost between the affinely mapped
source embeddings and the target embeddings — so the two latent spaces
*become* affinely linked, where the closed-form map applies again.

Takes a couple of minutes (two full trainings on 1000 points each).
"""

import numpy as np

import linalign
from linalign import discrete, gaussian, training

seed = 0
src, tgt, params = linalign.gen_synthetic("nonlinear_da", seed=seed, n=1000)
print(f"task: 10-class blobs, target nonlinearly distorted "
      f"(raw affine baseline accuracy {params['baseline_accuracy']:.3f})")


def run(la_weight):
    cfg = linalign.ExperimentConfig(seed=seed, la_weight=la_weight)
    model = linalign.init_model(
        src.features.shape[1], tgt.features.shape[1], cfg
    )
    model, _ = linalign.train(model, src.features, tgt.features)
    zs = training.encode(model, src.features, "source")
    zt = training.encode(model, tgt.features, "target")
    w2 = discrete.w2_empirical(gaussian.apply_map(model.fitted_map, zs), zt)
    acc = linalign.evaluate_transfer(model, src, tgt).accuracy
    return w2, acc


print("\ntraining with the alignability term off (weight 0) ...")
w2_off, acc_off = run(0.0)
print(f"  post-map latent W2 = {w2_off:.4f}, transfer accuracy = {acc_off:.3f}")

print("training with the alignability term on (weight 1) ...")
w2_on, acc_on = run(1.0)
print(f"  post-map latent W2 = {w2_on:.4f}, transfer accuracy = {acc_on:.3f}")

base = linalign.ot_gauss_baseline(src, tgt).accuracy
print(f"\nraw-feature affine baseline accuracy: {base:.3f}")
print(f"aligned-embedding accuracy:           {acc_on:.3f}")
print("The alignability term shrinks the residual transport cost between "
      "the mapped embeddings and buys the accuracy margin.")
