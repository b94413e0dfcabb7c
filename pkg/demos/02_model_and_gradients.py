"""Walkthrough: the model's forward passes and a finite-difference gradient check.

Builds a small instance of the network (extractor, closed head, one-vs-all
head, discriminator), runs the forward passes, then verifies the hand-written
backward pass against central finite differences on the composed training loss.
"""

import numpy as np

from unidalab import GradReversalConfig, ModelConfig, StageConfig, init_params
from unidalab.model import extractor_forward
from unidalab.train import compute_losses_and_grads

cfg = ModelConfig(input_dim=36, num_classes=4, hidden1=12, hidden2=8, feature_dim=6, disc_hidden=5)
params = init_params(cfg, seed=0)
print("parameter tensors:")
for name in params.names():
    print(f"  {name:8s} {params[name].shape}")

rng = np.random.default_rng(1)
x_src = rng.uniform(0, 1, (5, 36))
labels = rng.integers(0, 4, 5)
x_tgt = rng.uniform(0, 1, (5, 36))

feats, _ = extractor_forward(params, x_src)
print(f"\nfeatures: {feats.shape}, finite: {np.isfinite(feats).all()}")

stage = StageConfig(steps=1, lr_heads=1e-3, lr_backbone=5e-4, optimizer="adaptive",
                    use_discriminator=False, w_ova=1.0, w_ent=0.1, top_k=3)
grl = GradReversalConfig()
breakdown, grads = compute_losses_and_grads(params, x_src, labels, x_tgt, stage, grl)
print(f"\nloss breakdown: closed_ce={breakdown.closed_ce:.4f} ova={breakdown.ova:.4f} "
      f"entropy={breakdown.entropy:.4f} total={breakdown.total:.4f}")


def total_loss(p):
    bd, _ = compute_losses_and_grads(p, x_src, labels, x_tgt, stage, grl)
    return bd.total


print("\nfinite-difference check (eps=1e-5), worst relative error per tensor:")
eps = 1e-5
worst = 0.0
for name, arr in params.values.items():
    if name not in grads:
        continue
    numeric = np.zeros_like(arr)
    flat, nf = arr.reshape(-1), numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = total_loss(params)
        flat[i] = orig - eps
        fm = total_loss(params)
        flat[i] = orig
        nf[i] = (fp - fm) / (2 * eps)
    rel = np.linalg.norm(grads[name] - numeric) / max(np.linalg.norm(numeric), 1e-12)
    worst = max(worst, rel)
    print(f"  {name:8s} rel_err={rel:.2e}")
print(f"\nworst relative error: {worst:.2e} (tolerance 1e-4)")
assert worst < 1e-4
