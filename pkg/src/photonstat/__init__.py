"""photonstat: stochastic single-photon-source simulator and analysis suite."""

__version__ = "0.1.0"
