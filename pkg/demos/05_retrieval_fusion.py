"""Retrieval-augmented scoring: datastore, k-nearest-neighbor lookup, fusion.

A datastore maps utterance-level keys (time-mean encoder features) from the
training set to their human scores. At inference the parametric prediction is
blended with a softmax-weighted average of the nearest neighbors' scores.
"""

import numpy as np

from mospred.knn import Datastore, fuse, knn_query, tune_parametric_weight

rng = np.random.default_rng(1)

# a toy datastore: keys cluster by quality band
n = 300
quality = rng.uniform(1, 5, n)
keys = np.stack([quality + rng.normal(0, 0.1, n), rng.normal(0, 1, n)], axis=1)
store = Datastore(keys=keys, values=quality, sample_ids=[f"s{i}" for i in range(n)])

query = np.array([4.2, 0.0])  # an utterance whose key sits in the "good" band
knn_score, neighbor_ids, distances = knn_query(store, query, k=8, temperature=0.5)
print(f"query key {query}")
print(f"8 nearest neighbors: {neighbor_ids}")
print(f"distances: {np.round(distances, 3)}")
print(f"retrieved score estimate: {knn_score:.3f}")

parametric = 3.6
for weight in (1.0, 0.5, 0.0):
    print(f"fusion weight {weight:.1f}: {fuse(parametric, knn_score, weight):.3f}")

# pick the blend weight on a dev set by grid search
dev_targets = rng.uniform(1, 5, 60)
dev_parametric = dev_targets + rng.normal(0, 0.2, 60)
dev_knn = dev_targets + rng.normal(0, 0.6, 60)
best = tune_parametric_weight(dev_parametric, dev_knn, dev_targets)
print(f"\ngrid search on a dev set where the parametric branch is stronger: "
      f"best weight = {best:.2f}")
