"""Summary measures for longitudinal two-group trials: change scores, mixed-model
mean change, weighted average tangent slopes, and a simulation harness."""

__version__ = "0.1.0"
