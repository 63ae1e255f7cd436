"""Gradient trajectories of analytic functions near isolated surface singularities.

Modules: :mod:`series` (Q-generalized series and fitting), :mod:`geometry`
(implicit surfaces, slices, restricted gradients), :mod:`blowup` (tangent
cones, exponents, cylinder charts), :mod:`flow` (trajectories and cylinder
systems), :mod:`classify` (expansions and verdicts), :mod:`cli`.
"""

__version__ = "0.1.0"
