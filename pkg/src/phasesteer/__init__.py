"""Phase steering of oscillatory dynamics in a frozen surrogate's latent space."""

__version__ = "0.1.0"
