"""Off-policy risk-sensitive learning control for constrained robust stabilization.

Subpackages by responsibility:

- ``numerics``: RK4 step, normal-equation pseudoinverse, Jacobi eigenvalues,
  rank by row reduction.
- ``systems``: control-affine plants, matched/unmatched disturbance split,
  disturbance-free surrogate dynamics, built-in models.
- ``penalty``: saturating input cost, barrier state cost with distance-faded
  risk weights, disturbance-envelope cost.
- ``critic``: monomial value basis, greedy policies, residual assembly,
  replay-driven weight update laws.
- ``replay``: eigenvalue-prioritized online buffer, grid-built offline
  factor buffer, convergence detector.
- ``sim``: closed-loop episode engine, experiment presets, trajectory logs.
- ``cli``: command-line front end.
"""

from .errors import (
    ConfigError,
    ConstraintViolationError,
    ContractError,
    IntegrationDivergedError,
    LearningDivergedError,
    RsadpError,
    SingularInputError,
    UnknownNameError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConstraintViolationError",
    "ContractError",
    "IntegrationDivergedError",
    "LearningDivergedError",
    "RsadpError",
    "SingularInputError",
    "UnknownNameError",
    "__version__",
]
