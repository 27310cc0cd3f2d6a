"""Nodal stencils for derivative functionals on scattered nodes, with
extended-precision dual-norm and convergence-rate analysis."""

__version__ = "0.1.0"
