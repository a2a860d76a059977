"""Matrix product state classifiers, gauge canonical forms and a shadow-training privacy harness."""

__version__ = "0.1.0"
