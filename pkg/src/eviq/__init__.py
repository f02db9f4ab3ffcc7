"""Evidence-aware inferential text generation with a discrete latent codebook."""

__version__ = "0.1.0"
