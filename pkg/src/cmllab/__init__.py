"""Coupled tent-map lattices: orbits, curve iteration, convex regions and
the constants of the iteration lemma.

The subpackages are independent engines. :mod:`cmllab.maps` defines the
systems, :mod:`cmllab.orbit` and :mod:`cmllab.sweeps` simulate them,
:mod:`cmllab.curvelab` and :mod:`cmllab.polytope` iterate curves and convex
sets exactly, and :mod:`cmllab.lemmacalc` evaluates closed-form bounds.
"""

__version__ = "0.1.0"

from .errors import (BracketError, CellMismatchError, CmlError, ComponentExplosion, ConfigError,
                     DomainError, EscapeError, HypothesisViolation, PreconditionError,
                     SingularityError)
from .maps import (CouplingSpec, GeneralTent, LatticeSystem, PerturbationSpec, PerturbedTent,
                   StandardTent, jacobian, step, step_batch, two_node_tent)
from .orbit import OrbitConfig, OrbitStats, dist_syn, run_orbit

__all__ = [
    "__version__",
    "BracketError", "CellMismatchError", "CmlError", "ComponentExplosion", "ConfigError",
    "DomainError", "EscapeError", "HypothesisViolation", "PreconditionError", "SingularityError",
    "CouplingSpec", "GeneralTent", "LatticeSystem", "PerturbationSpec", "PerturbedTent",
    "StandardTent", "jacobian", "step", "step_batch", "two_node_tent",
    "OrbitConfig", "OrbitStats", "dist_syn", "run_orbit",
]
