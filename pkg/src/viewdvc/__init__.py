"""View-invariant transfer learning for dense video captioning."""
__version__ = "0.1.0"
