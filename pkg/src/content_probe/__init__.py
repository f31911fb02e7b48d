"""Content-perturbation and intent-probing toolkit.

A library plus a single ``content-probe`` CLI covering: content
perturbations (amount/jigsaw/blur/texture schedules), attention-to-
segmentation correlation matrices, hashtag word-break and embedding
aggregation, regional max-pooling descriptors with exact KNN, a linear
probe with soft-target cross-entropy, and deterministic chart output.
"""

__version__ = "0.1.0"
