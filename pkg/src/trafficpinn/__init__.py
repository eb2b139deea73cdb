"""Traffic speed-field reconstruction from sparse fixed sensors.

Physics-informed networks for the kinematic-wave (LWR) model, with a
two-stage residual-guided domain decomposition and a set of reference
baselines, plus a finite-volume oracle for synthetic ground truth.
"""

__version__ = "0.1.0"
