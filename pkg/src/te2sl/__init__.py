"""Text-only domain adaptation lab for prompt-conditioned ASR language models."""

__version__ = "0.1.0"
