"""Air-quality prediction and lung-disease severity modelling toolkit."""

__version__ = "0.1.0"
