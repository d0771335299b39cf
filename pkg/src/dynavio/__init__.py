"""Visual-inertial-dynamics state estimation for multirotors.

Modules:
  geometry        quaternion / rotation primitives (Hamilton, scalar-first)
  simworld        flight simulator: trajectories, force profiles, sensors, dataset IO
  preintegration  thrust / external-force and inertial preintegration blocks
  factors         residuals and analytic Jacobians for the sliding-window cost
  estimator       fixed-lag sliding-window solver and batch pipeline
  identify        rotor thrust-coefficient identification (recursive least squares)
  metrics         trajectory / force accuracy evaluation
  cli             command-line experiments (simulate | identify | run | eval | compare)
"""

__version__ = "0.1.0"
