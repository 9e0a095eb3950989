"""ECG phase-space embedding and binary CNN heart-status classification."""

from .phase_space import DerivativeScheme, QRChord, Trajectory, derivative, embed
from .record_io import Label, Signal, load_labels, synth_ecg

__version__ = "0.1.0"

__all__ = [
    "DerivativeScheme",
    "Label",
    "QRChord",
    "Signal",
    "Trajectory",
    "derivative",
    "embed",
    "load_labels",
    "synth_ecg",
    "__version__",
]
