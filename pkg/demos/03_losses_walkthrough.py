"""Walkthrough: the four training losses on worked numbers.

Shows the top-k hard-negative selection, the mean binary entropy with its
sharp-prediction blind spot, the per-target unknown weight, and the
adversarial domain loss.
"""

import math

import numpy as np

from unidalab import closed_set_ce, domain_adversarial_loss, open_entropy, ova_loss_topk, unknown_weight
from unidalab.model import OpenSetScores

print("closed-set cross-entropy")
print(f"  uniform logits, K=4      -> {closed_set_ce(np.zeros(4), 0):.6f} (= ln 4)")
print(f"  logits (1,2,3), label 2  -> {closed_set_ce(np.array([1.,2.,3.]), 2):.6f}")

print("\none-vs-all loss with top-k near negatives")
probs = np.array([0.9, 0.6, 0.2])
s = np.log(probs) - np.log1p(-probs)
scores = OpenSetScores.from_pairs(np.stack([s, np.zeros(3)], axis=1))
print(f"  known probs {probs}, label 0")
print(f"  k=1 (nearest negative only) -> {ova_loss_topk(scores, 0, 1):.6f}")
print(f"  k=2 (mean over both)        -> {ova_loss_topk(scores, 0, 2):.6f}")
print("  with k=1 only the hardest wrong head (class 1, p=0.6) produces loss;")
print("  k=2 also recruits class 2, averaged so the magnitude stays comparable")

print("\nmean binary entropy over the open-set heads")
half = OpenSetScores(np.zeros((3, 2)), np.full(3, 0.5))
print(f"  all heads at 0.5   -> {open_entropy(half):.6f} (= ln 2, maximal uncertainty)")
sharp = OpenSetScores(np.zeros((3, 2)), np.array([1e-9, 1 - 1e-9, 1e-9]))
print(f"  all heads sharp    -> {open_entropy(sharp):.2e}")
print("  sharp heads give near-zero entropy even when they disagree about the")
print("  sample: per-head entropy cannot see whole-classifier uncertainty")

print("\nper-target unknown weight (read at the closed-set argmax)")
sc = OpenSetScores(np.zeros((3, 2)), np.array([0.1, 0.2, 0.8]))
logits = np.array([-1.0, 0.0, 3.0])
print(f"  known probs (0.1, 0.2, 0.8), closed argmax=2 -> w = {unknown_weight(sc, logits):.2f}")

print("\nadversarial domain loss")
v = domain_adversarial_loss(np.full(4, 0.5), np.full(4, 0.5), np.ones(4))
print(f"  everything at D=0.5, w=1 -> {v:.6f} (= 2 ln 2)")
v = domain_adversarial_loss(np.array([0.8]), np.array([0.3]), np.array([0.5]))
print(f"  D(src)=0.8, D(tgt)=0.3, w=0.5 -> {v:.6f} (= -ln 0.8 - 0.5 ln 0.7 = {-math.log(0.8)-0.5*math.log(0.7):.6f})")
print("  target samples weighted w~0 drop out of the alignment game entirely")
