"""Community-graph misinformation detection.

A small numpy/scipy stack: a tape-based autodiff core, heterogeneous
user-article graphs, six graph neural encoders (including relational and
Poincare-ball variants), a convolutional text encoder, and the two-phase
pipeline that fuses social-context and text features for article
classification.
"""

__version__ = "0.1.0"
