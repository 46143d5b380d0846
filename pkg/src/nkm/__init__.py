"""Deep neural-kernel machines: explicit kernel maps, LS-SVM baselines and neural-kernel networks."""

__version__ = "0.1.0"
