"""Mixed-unitary product formulas for Hamiltonian simulation.

Subpackages cover dense linear-algebra helpers, Hamiltonian group
construction, Suzuki product formulas, mixed-unitary channels and their
Haar-averaged loss, error-operator structure, symmetry-conjugated mixtures,
sampling concentration bounds, imaginary-time tensor-network evolution, and
the experiment command line.
"""

__version__ = "0.1.0"
