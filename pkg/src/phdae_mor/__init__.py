"""Structure-preserving model reduction of port-Hamiltonian descriptor systems.

Full-order models are pH-DAEs of differentiation index at most two. Reduced
models come from a parameterization that is port-Hamiltonian for every
parameter vector, with the polynomial part of the transfer function matched
exactly, and are fitted by H-infinity or H2 optimization.
"""
from .core import *          # noqa: F401,F403
from .staircase import *     # noqa: F401,F403
from .param import *         # noqa: F401,F403
from .spectral import *      # noqa: F401,F403
from .optim import *         # noqa: F401,F403
from .opt_h2 import *        # noqa: F401,F403
from .opt_hinf import *      # noqa: F401,F403
from .bench import *         # noqa: F401,F403
from .bundle import *        # noqa: F401,F403

__version__ = '0.1.0'
