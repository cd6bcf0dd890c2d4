"""Visual localisation from Data Matrix floor stickers."""

__version__ = "0.1.0"
