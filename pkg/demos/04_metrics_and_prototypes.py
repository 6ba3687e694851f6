#!/usr/bin/env python3
"""The scoring geometry and the evaluation metrics, in isolation.

No audio here: synthetic embeddings on the unit sphere illustrate how
K-Means prototypes and minimum cosine distance behave, and how AUC /
partial AUC react to overlapping score distributions.
"""

import numpy as np

from soundscan import (LabeledScores, PrototypeSet, aggregate, anomaly_score,
                       auc, kmeans, pauc)

rng = np.random.default_rng(0)


def around(direction, n, spread):
    pts = direction + spread * rng.standard_normal((n, len(direction)))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


# two operating modes of one "machine", plus drifted anomalies
mode_a = around(np.array([1.0, 0.2, 0.0, 0.0]), 40, 0.05)
mode_b = around(np.array([0.0, 1.0, 0.3, 0.0]), 40, 0.05)
normals = np.concatenate([mode_a, mode_b])

centroids = kmeans(normals, prototypes=4, seed=1)
protos = PrototypeSet("demo", "all", centroids)
print(f"built {protos.count} prototypes from {len(normals)} normal embeddings")

held_out_normal = around(np.array([1.0, 0.2, 0.0, 0.0]), 25, 0.05)
anomalies = around(np.array([0.4, 0.3, 0.0, 0.9]), 25, 0.05)

normal_scores = [anomaly_score(e, protos) for e in held_out_normal]
anomaly_scores = [anomaly_score(e, protos) for e in anomalies]
print(f"normal scores:  median {np.median(normal_scores):.4f}")
print(f"anomaly scores: median {np.median(anomaly_scores):.4f}")

group = LabeledScores(normal_scores + anomaly_scores,
                      [0] * 25 + [1] * 25, "demo")
print(f"AUC {auc(group):.3f}   pAUC@0.1 {pauc(group, 0.1):.3f}")

# pAUC punishes overlap at the clean-end of the normals much harder
noisy = LabeledScores(
    np.concatenate([np.array(normal_scores) + 0.55 * rng.uniform(size=25),
                    anomaly_scores]),
    [0] * 25 + [1] * 25, "noisy")
print(f"with noisy normals: AUC {auc(noisy):.3f}   pAUC@0.1 {pauc(noisy, 0.1):.3f}")

values = [auc(group), pauc(group, 0.1), auc(noisy), pauc(noisy, 0.1)]
print(f"pooled mean {aggregate(values, 'mean'):.3f}   "
      f"harmonic mean {aggregate(values, 'harmonic'):.3f} "
      f"(harmonic drags toward the weakest group)")
