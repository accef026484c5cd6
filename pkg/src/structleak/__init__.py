"""Graph privacy leakage via structure: measurement, attack and publishing."""
__version__ = "0.1.0"
