"""Decentralized Markov-chain SGD/SGDA: simulation, stability estimates and analytic bounds."""

from .errors import DmcError

__version__ = "0.1.0"

__all__ = ["DmcError", "__version__"]
