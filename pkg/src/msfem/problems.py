"""Elliptic model problems: coefficient fields and sources.

A problem is ``-div(A grad u) = f`` on the unit square with homogeneous
Dirichlet data.  Coefficients and sources are vectorized callables taking
point arrays of shape (..., 2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

PointFunction = Callable[[np.ndarray], np.ndarray]
MatrixFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CoefficientField:
    """Position-dependent 2x2 symmetric positive-definite matrix.

    Attributes:
        matrix: callable mapping points (..., 2) to matrices (..., 2, 2).
        gamma_min, gamma_max: declared spectral bounds; every eigenvalue of
            ``matrix(x)`` must lie in ``[gamma_min, gamma_max]``.
    """

    matrix: MatrixFunction
    gamma_min: float
    gamma_max: float

    def __post_init__(self):
        if not 0 < self.gamma_min <= self.gamma_max:
            raise ValueError(
                f"spectral bounds must satisfy 0 < gamma_min <= gamma_max, "
                f"got [{self.gamma_min}, {self.gamma_max}]"
            )

    def validate(self, points: np.ndarray, sym_tol: float = 1e-14,
                 eig_slack: float = 1e-12) -> None:
        """Check symmetry and the spectral bounds at the given sample points."""
        a = self.matrix(points)
        asym = np.abs(a - np.swapaxes(a, -1, -2)).max()
        if asym > sym_tol:
            raise ValueError(f"coefficient not symmetric: max asymmetry {asym:g}")
        eigs = np.linalg.eigvalsh(a)
        lo, hi = eigs.min(), eigs.max()
        if lo < self.gamma_min - eig_slack or hi > self.gamma_max + eig_slack:
            raise ValueError(
                f"eigenvalues [{lo:g}, {hi:g}] escape declared bounds "
                f"[{self.gamma_min:g}, {self.gamma_max:g}]"
            )


@dataclass(frozen=True)
class ProblemInstance:
    """A coefficient field, a source, and optionally a closed-form solution."""

    name: str
    coefficient: CoefficientField
    source: PointFunction
    exact_solution: Optional[PointFunction] = None
    epsilon: Optional[float] = None

    def __post_init__(self):
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError(f"microscale length must be positive, got {self.epsilon}")


def model_problem_section5() -> ProblemInstance:
    """Oscillatory diagonal coefficient with microscale 0.05.

    The source is ``sin(2 pi x1) sin(2 pi x2)`` exactly; the attached
    closed-form solution solves the problem for a source that differs from
    this one by O(eps) terms and is kept for qualitative checks only.
    """
    eps = 5e-2
    scale = 1.0 / (8.0 * np.pi ** 2)

    def matrix(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        c = np.cos(2.0 * np.pi * pts[..., 0] / eps)
        a = np.zeros(pts.shape[:-1] + (2, 2))
        a[..., 0, 0] = scale * 2.0 / (2.0 + c)
        a[..., 1, 1] = scale * (1.0 + 0.5 * c)
        return a

    def source(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.sin(2.0 * np.pi * pts[..., 0]) * np.sin(2.0 * np.pi * pts[..., 1])

    def exact(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        x1, x2 = pts[..., 0], pts[..., 1]
        smooth = np.sin(2 * np.pi * x1) * np.sin(2 * np.pi * x2)
        rough = np.cos(2 * np.pi * x1) * np.sin(2 * np.pi * x2) * np.sin(2 * np.pi * x1 / eps)
        return smooth + 0.5 * eps * rough

    coefficient = CoefficientField(
        matrix=matrix,
        gamma_min=scale * 0.5,   # min of 1 + cos/2
        gamma_max=scale * 2.0,   # max of 2/(2 + cos)
    )
    return ProblemInstance(
        name="section5",
        coefficient=coefficient,
        source=source,
        exact_solution=exact,
        epsilon=eps,
    )


def constant_problem(gamma: float = 1.0) -> ProblemInstance:
    """Constant isotropic coefficient ``gamma * I`` with unit source."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")

    def matrix(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        a = np.zeros(pts.shape[:-1] + (2, 2))
        a[..., 0, 0] = gamma
        a[..., 1, 1] = gamma
        return a

    def source(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.ones(pts.shape[:-1])

    coefficient = CoefficientField(matrix=matrix, gamma_min=gamma, gamma_max=gamma)
    return ProblemInstance(name="constant", coefficient=coefficient, source=source)


PROBLEMS: dict[str, Callable[..., ProblemInstance]] = {
    "section5": model_problem_section5,
    "constant": constant_problem,
}


def get_problem(name: str, **kwargs) -> ProblemInstance:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; known: {sorted(PROBLEMS)}") from None
    return factory(**kwargs)
