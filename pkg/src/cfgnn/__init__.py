"""Max-min power control for cell-free massive MIMO and a GNN surrogate."""

__version__ = "0.1.0"
