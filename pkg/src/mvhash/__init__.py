"""Multi-view enhancement hashing for image retrieval."""

from mvhash.errors import DataError, MVHashError, NumericError

__version__ = "0.1.0"

__all__ = ["DataError", "MVHashError", "NumericError", "__version__"]
