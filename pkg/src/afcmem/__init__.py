"""Spin-wave atomic-frequency-comb memory: spectra, comb, pulses, decoupling, experiment, harness."""

__version__ = "0.1.0"
