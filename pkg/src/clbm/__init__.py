"""Carleman-linearized lattice Boltzmann toolkit.

Subpackages: lattice (D3Q27 constants, index maps, geometry), lbm (the
classical reference simulator), carleman (matrix generators and the
truncated linear system), instances (problem catalog and unit
conversion), qre (block-encoding cost models and resource estimates),
cli (command-line front end).
"""

__version__ = "0.1.0"
