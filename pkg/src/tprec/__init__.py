"""Tensor-power recurrent models with a learnable real-valued degree.

Subpackages/modules:

* :mod:`tprec.tensor` -- partially-symmetric tensors, contraction, spectral norms
* :mod:`tprec.degree` -- signed-power activation, degree parameterisations, bounds
* :mod:`tprec.cells` -- recurrence cells, Jacobians, stability probing
* :mod:`tprec.train` -- truncated BPTT training, optimisers, checkpoints
* :mod:`tprec.analysis` -- stochastic process simulation and memory diagnostics
* :mod:`tprec.data` -- synthetic series generators and dataset I/O
* :mod:`tprec.cli` -- command-line entry point
"""

__version__ = "0.1.0"
