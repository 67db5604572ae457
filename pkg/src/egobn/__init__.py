"""Motor-state-dependent bottleneck features for ego-noise robust phoneme recognition."""

__version__ = "0.1.0"
