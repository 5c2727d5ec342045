"""Log-mel wav2vec 2.0 pre-training and spoken language identification."""

__version__ = "0.1.0"
