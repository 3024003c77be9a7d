"""Reliability-aware simulation of spiking-neuron circuits (Axon-Hillock, VIF)."""

__version__ = "0.1.0"
