"""Online deep MIMO receivers under transfer-based adversarial pilot poisoning."""

__version__ = "0.1.0"
