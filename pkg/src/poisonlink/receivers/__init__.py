"""Deep receivers sharing the :class:`Detector` contract."""

from .base import Detector, DetectorStateError, JointHeadDetector
from .blob import CompatibilityError
from .deepsic import DeepSIC
from .mlp import BlackBoxMLP
from .resnet import ResidualConv

ARCHITECTURES = {cls.kind: cls for cls in (DeepSIC, BlackBoxMLP, ResidualConv)}


def build_detector(kind, rng, n_rx=4, n_tx=4):
    try:
        cls = ARCHITECTURES[kind]
    except KeyError:
        raise ValueError(f"unknown detector {kind!r}; choose from {sorted(ARCHITECTURES)}") from None
    return cls(n_rx, n_tx, rng)


def load_detector(data, n_rx=4, n_tx=4):
    """Rebuild a detector of whatever architecture a blob holds."""
    from .blob import decode
    kind, _ = decode(data)
    det = ARCHITECTURES[kind](n_rx, n_tx)
    return det.restore(data)


__all__ = [
    "ARCHITECTURES", "BlackBoxMLP", "CompatibilityError", "DeepSIC", "Detector",
    "DetectorStateError", "JointHeadDetector", "ResidualConv", "build_detector", "load_detector",
]
