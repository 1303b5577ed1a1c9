"""Multi-level neural-network solver for linear boundary-value problems.

Small tanh networks are trained one after another, each fitting the scaled
residual left behind by the composite of its predecessors. Submodules:

- model: network specs, Fourier feature maps, boundary factors, trial values
- autodiff: extended forward propagation and exact loss gradients
- problems: built-in boundary-value problems with closed-form solutions
- optimize: Adam and L-BFGS with a strong-Wolfe line search
- scaling: extreme-learning-machine residual amplitude estimation
- multilevel: the correction loop, composites, and error metrics
- cli: the ``mlbvp`` command-line front end

This top-level module intentionally imports nothing heavy so the CLI can
configure threading before numpy is first loaded.
"""

__version__ = "0.1.0"
