"""tensorsim: adaptive reduced-order power system transient simulation.

Builds Taylor-expanded dynamic models around load-level-specific
equilibria, compresses the quadratic and cubic terms with CP tensor
decomposition, and switches between full, hybrid, and reduced models
during time-domain simulation based on disturbance size.
"""

__version__ = "0.1.0"
