"""
Composite similarity with partial labels
========================================

Three paired instances, one of them unlabeled in the first modality.
Labeled pairs blend feature similarity with label overlap; unlabeled
pairs fall back to feature similarity alone.
"""

import numpy as np

from czhash.similarity import composite_matrices, feature_similarity, jaccard

# one feature per modality keeps the distances easy to follow by hand
x1 = np.array([[0.0], [1.0], [3.0]])
x2 = np.array([[0.0], [2.0], [2.0]])
labels1 = [{"beach", "sea"}, {"beach"}, set()]  # the third image is unlabeled
labels2 = [{"beach"}, {"sea"}, {"sea"}]

###############################################################################
# Feature similarity is 1 / (1 + Euclidean distance); label similarity is
# Jaccard overlap.

print("feature similarity, images 0 and 1:", feature_similarity(x1[0], x1[1]))
print("label overlap, images 0 and 1:     ", jaccard(labels1[0], labels1[1]))

###############################################################################
# The composite raises the feature similarity when labels agree and lowers
# it when they do not.  Rows of S12 are images, columns are texts.

sims = composite_matrices(x1, x2, labels1, labels2)
np.set_printoptions(precision=4, suppress=True)
for name in ("s11", "s22", "s12"):
    print(f"\n{name}\n{getattr(sims, name)}")

###############################################################################
# The ablation modes swap in one ingredient at a time.

for mode in ("label", "feature"):
    print(f"\n{mode}-only S12\n{composite_matrices(x1, x2, labels1, labels2, mode=mode).s12}")
