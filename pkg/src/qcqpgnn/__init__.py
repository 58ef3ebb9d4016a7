"""Tripartite graph encodings, WL refinement, message-passing networks and a convex solver for QCQPs."""

__version__ = "0.1.0"
