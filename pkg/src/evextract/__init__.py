"""Schema-aware decomposed event extraction with retrieval-augmented prompts."""

__version__ = "0.1.0"
