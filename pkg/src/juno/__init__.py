"""Cross-modal entity matching for visually rich documents."""
__version__ = "0.1.0"
