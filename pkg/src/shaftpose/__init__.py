"""Single-shot shaft detection and 5-DOF pose estimation at desk scale.

Synthetic data generation with automatic annotation, a multi-scale
single-shot detector with a pose-regression head (two variants), a
from-scratch differentiable-tensor core to train it with, and the full
evaluation suite. Served over HTTP (``shaftpose.service``) with a thin
CLI client (``shaftpose.cli``).
"""

__version__ = "0.1.0"
