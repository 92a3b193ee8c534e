"""Off-grid line-spectrum recovery from partial samples via atomic-norm
semidefinite programming, with dual-certificate construction and benchmarks."""

__version__ = "0.1.0"
