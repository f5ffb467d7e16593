"""Visual-aware category hierarchies from embeddings, multi-task heads, detection metrics."""

__version__ = "0.1.0"
