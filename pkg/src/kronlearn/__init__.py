"""Matrix-free Kronecker product kernel learning on bipartite graphs."""

__version__ = "0.1.0"
