"""stegowav: image-in-audio steganography on short-time spectral containers."""

__version__ = "0.1.0"
