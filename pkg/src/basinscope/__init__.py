"""basinscope: desk-scale loss-landscape and transfer-learning analyses."""

__version__ = "0.1.0"
