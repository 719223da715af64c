"""Reference fields with known level geometry, shared by tests and the CLI."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr import ScalarField, parse


@dataclass(frozen=True)
class Reference:
    name: str
    text: str
    arity: int
    t: float                  # a regular level with known totals
    R: float
    h: float
    K: float | None = None    # exact K(t; R) when known
    absK: float | None = None
    polynomial: bool = True

    @property
    def field(self) -> ScalarField:
        return parse(self.text, self.arity)


SUITE = {
    "circle": Reference("circle", "x^2 + y^2", 2, 1.0, 2.0, 0.01, 2 * np.pi, 2 * np.pi),
    "sphere": Reference("sphere", "x^2 + y^2 + z^2", 3, 1.0, 2.0, 0.05, 4 * np.pi, 4 * np.pi),
    "torus": Reference("torus", "(sqrt(x^2 + y^2) - 2)^2 + z^2", 3, 1.0, 5.0, 0.05, 0.0, 8 * np.pi,
                       polynomial=False),
    "saddle": Reference("saddle", "z - x^2 + y^2", 3, 0.0, 3.0, 0.05),
    "hyperbola": Reference("hyperbola", "x*y", 2, 1.0, 40.0, 0.05),
    "ellipse": Reference("ellipse", "x^2 + 4*y^2", 2, 1.0, 2.0, 0.01, 2 * np.pi, 2 * np.pi),
    "zfold": Reference("zfold", "y*(2*x^2*y^2 - 9*x*y + 12)", 2, 0.1, 80.0, 0.05),
}

