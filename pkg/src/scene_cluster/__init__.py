"""Cluster per-participant eating-scene images by eating environment.

The pipeline masks salient objects out of each scene, pools convolutional
feature maps into one global and one local descriptor per image, fuses the
two pairwise distance structures with a single weight, and partitions each
participant's images with affinity propagation.  Density-based baselines and
a synthetic scene generator are included for evaluation.
"""

__version__ = "0.1.0"
