"""Side-slip angle estimation workbench: vehicle models, synthetic data, EKF and hybrid MLP observers."""

__version__ = "0.1.0"
