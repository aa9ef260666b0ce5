"""Column generation with column sharing for multistage stochastic MINLPs."""

__version__ = "0.1.0"
