"""
Combining three camera views
============================

Each view's model emits a class distribution. The fusion step keeps the
views whose top probability clears a threshold, averages their full
distributions and takes the argmax. Here the three distributions are
written by hand so each branch of the rule is easy to follow.
"""
import numpy as np

from posevinet.distribution import ClassDistribution
from posevinet.fusion import FusionConfig, ViewPrediction, fuse


def peaked(k, c, p):
    row = np.full(k, (1 - p) / (k - 1))
    row[c] = p
    return row


k = 16
views = {"dashboard": peaked(k, 2, 0.9), "rearview": peaked(k, 2, 0.8),
         "rightside": peaked(k, 9, 0.3)}
preds = [ViewPrediction(v, ClassDistribution(p)) for v, p in views.items()]

# two confident views agree, the unsure side view is left out
result = fuse(preds, FusionConfig(threshold=0.5))
print(result.to_dict())

# nobody reaches 0.95, so all three views are averaged and the result is flagged
print(fuse(preds, FusionConfig(threshold=0.95)).to_dict())

# with no threshold at all this is just the mean of the three
mean = np.mean(list(views.values()), axis=0)
print(fuse(preds, FusionConfig(threshold=0.0)).class_index, int(np.argmax(mean)))

# the per-view documents are plain JSON, as read by `posevinet fuse`
print(preds[0].to_json()[:80], "...")
