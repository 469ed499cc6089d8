"""Group recommendation with hypergraph consensus learning and member-preference alignment."""

__version__ = "0.1.0"
