"""Cross-modal zero-shot hashing with composite similarity and attribute spaces."""

__version__ = "0.1.0"
