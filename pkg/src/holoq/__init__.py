"""Holonomic single-qubit gates on s/d orbitals of a 1D optical lattice.

Modules
-------
lattice       band structure at zero quasi-momentum and unit conversions
holonomy      ideal two-level holonomic pulses and sequence synthesis
multiorbital  split-step propagation in the full plane-wave basis, leakage
tomography    time-of-flight state tomography, process tomography, fits
protocols     shortcut loading, robustness sweeps, random-gate benchmark
cli           the ``holoq`` command
"""

__version__ = "0.1.0"
