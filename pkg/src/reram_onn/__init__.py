"""Transient simulator of ring-oscillator neural networks coupled through a 1T1R ReRAM crossbar."""

__version__ = "0.1.0"
