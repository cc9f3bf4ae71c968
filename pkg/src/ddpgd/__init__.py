"""PGD local surrogates coupled by overlapping Schwarz domain decomposition."""

__version__ = "0.1.0"
