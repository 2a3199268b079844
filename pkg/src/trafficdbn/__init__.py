"""Two-state congestion DBN for road networks: learning and travel-time prediction."""

__version__ = "0.1.0"
