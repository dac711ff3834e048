"""
White-matter subdivision and head labels
========================================

Neonatal white matter is not homogeneous. Splitting it into intensity
clusters, each with its own random contrast, lets the generator mimic that.
The clusters still map back to a single WM target label.
"""

# %%
import numpy as np

from neosynth.labels import fit_gmm_1d, fuse_head_labels, merge_for_eval, subdivide_label
from neosynth.phantom import baby_phantom, head_phantom

labels, t2 = baby_phantom(64)
wm = t2.values[labels.labels == 3]

# %%
# A two-component mixture recovers the brighter frontal and darker posterior WM.
model = fit_gmm_1d(wm, 2)
print("means", np.round(model.means, 4), "weights", np.round(model.weights, 3),
      f"after {model.n_iter} EM iterations")

# %%
for n in (2, 4, 6):
    sub = subdivide_label(labels, t2, target_label=3, N=n)
    new = [i for i in sub.dictionary if i >= 100]
    same = np.array_equal(sub.project("target").labels, labels.labels)
    print(n, [sub.dictionary[i] for i in new], "projects back exactly:", same)

# %%
# Head tissue around the brain: every head class trains as one "head" label.
fused = fuse_head_labels(labels, head_phantom(labels))
print({fused.dictionary[i]: int(np.count_nonzero(fused.labels == i)) for i in fused.present_ids()})
print("target ids:", fused.project("target").present_ids())

# %%
# For scoring, ventricles are folded into CSF.
merged = merge_for_eval(labels)
print(merged.dictionary)
