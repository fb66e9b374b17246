"""Core functionality for pgo: Lie groups, graphs, costs, solver and initializers."""
