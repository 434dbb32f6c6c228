"""Configurable-precision toolkit for Henon-like maps of C^2.

Finds and certifies saddle fixed points, semi-linearization charts,
homoclinic tangencies, strong-sink parameter curves, sink strips, and
nested parameter boxes carrying coexisting attracting orbits.
"""

from .numerics import (
    C,
    DEFAULT_PRECISION,
    Mat2,
    NewtonConfig,
    R,
    Vec2,
    eig2,
    get_precision,
    newton_solve,
    set_precision,
)

__version__ = "0.1.0"
