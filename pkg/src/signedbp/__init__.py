"""Signed block pseudo-marginal MCMC for doubly intractable models."""

__version__ = "0.1.0"
