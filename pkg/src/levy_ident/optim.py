"""Box-constrained Gauss-Newton with Levenberg-Marquardt damping.

Shared by the ECF and PE estimators so that both are minimized with the same
stopping rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

__all__ = [
    "EstimationError",
    "NonConvergence",
    "LeftDomain",
    "SingularNormalMatrix",
    "OptimOptions",
    "OptimResult",
    "Estimate",
    "gauss_newton",
]


class EstimationError(RuntimeError):
    """Base class; ``partial`` holds the last iterate when available."""

    def __init__(self, msg: str, partial=None):
        super().__init__(msg)
        self.partial = partial


class NonConvergence(EstimationError):
    pass


class LeftDomain(EstimationError):
    pass


class SingularNormalMatrix(EstimationError):
    pass


@dataclass(frozen=True)
class OptimOptions:
    max_iter: int = 200
    gtol: float = 1e-8
    max_face_iters: int = 10
    lambda_init: float = 0.0
    lambda_max: float = 1e12


@dataclass
class OptimResult:
    x: np.ndarray
    cost: float
    grad: np.ndarray
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad))


@dataclass
class Estimate:
    """Result of one estimator run.

    ``theta`` / ``eta`` / ``m`` are None when the estimator did not touch them.
    ``trace`` has one entry per pipeline stage.
    """

    theta: Any = None
    eta: Any = None
    m: float | None = None
    cost: float = 0.0
    grad_norm: float = 0.0
    iterations: int = 0
    converged: bool = False
    covariance: np.ndarray | None = None
    trace: list = field(default_factory=list)

    @property
    def rho(self) -> np.ndarray:
        parts = []
        if self.theta is not None:
            parts.append(self.theta.theta)
        if self.eta is not None:
            parts.append(self.eta.to_vector())
        if self.m is not None:
            parts.append([self.m])
        return np.concatenate(parts) if parts else np.empty(0)

    def to_dict(self) -> dict:
        d = {
            "theta": None if self.theta is None else self.theta.as_dict(),
            "eta": None if self.eta is None else self.eta.as_dict(),
            "m": self.m,
            "cost": float(self.cost),
            "grad_norm": float(self.grad_norm),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "covariance": None if self.covariance is None else np.asarray(self.covariance).tolist(),
            "trace": self.trace,
        }
        return d


def gauss_newton(
    fun: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    x0,
    lower=None,
    upper=None,
    *,
    admissible: Callable[[np.ndarray], bool] | None = None,
    opts: OptimOptions = OptimOptions(),
    cost_scale: float = 1.0,
) -> OptimResult:
    """Minimize ``cost_scale * |r(x)|^2`` where ``fun(x) -> (r, J)``.

    Steps solve ``(J'J + lam * diag(J'J)) dx = -J'r`` and are clipped to the
    box ``[lower, upper]``; a step is rejected (and ``lam`` increased) when the
    clipped point is not ``admissible`` or does not decrease the cost. Converged
    when ``|grad| <= gtol * max(1, cost)``.

    Raises NonConvergence after ``max_iter`` iterations or when no acceptable
    step exists, LeftDomain when the iterate stays pinned to a face of the box
    for more than ``max_face_iters`` consecutive iterations, and
    SingularNormalMatrix when some parameter has no influence on the residuals.
    """
    x = np.array(x0, dtype=float)
    d = x.size
    lower = np.full(d, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(d, np.inf) if upper is None else np.asarray(upper, dtype=float)
    if np.any(x < lower) or np.any(x > upper):
        raise LeftDomain(f"initial point {x} outside the box", partial=x)
    if admissible is not None and not admissible(x):
        raise LeftDomain(f"initial point {x} is not admissible", partial=x)

    r, J = fun(x)
    cost = cost_scale * float(r @ r)
    lam = opts.lambda_init
    face_iters = 0
    trace = [cost]

    for it in range(opts.max_iter + 1):
        g = 2.0 * cost_scale * (J.T @ r)
        if np.linalg.norm(g) <= opts.gtol * max(1.0, abs(cost)):
            return OptimResult(x, cost, g, it, True, trace)
        if it == opts.max_iter:
            break

        A = J.T @ J
        diag = np.diag(A).copy()
        if np.any(diag <= 1e-300 * max(1.0, diag.max(initial=0.0))):
            raise SingularNormalMatrix("normal matrix has a zero column", partial=x)
        rhs = -(J.T @ r)
        # roundoff allowance: near the optimum the predicted decrease is below
        # the floating-point resolution of the cost
        slack = 1e-13 * max(1.0, abs(cost))

        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), rhs)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                x_new = np.clip(x + step, lower, upper)
                clipped = bool(np.any(x_new != x + step))
                if admissible is None or admissible(x_new):
                    r_new, J_new = fun(x_new)
                    cost_new = cost_scale * float(r_new @ r_new)
                    if np.isfinite(cost_new) and cost_new <= cost + slack:
                        break
            lam = max(10.0 * lam, 1e-6)
            if lam > opts.lambda_max:
                raise NonConvergence(
                    f"no acceptable step at iteration {it} (|grad|={np.linalg.norm(g):.3g})", partial=x
                )

        face_iters = face_iters + 1 if clipped else 0
        if face_iters > opts.max_face_iters:
            raise LeftDomain(f"iterate pinned to the box boundary for {face_iters} iterations", partial=x_new)
        x, r, J, cost = x_new, r_new, J_new, cost_new
        trace.append(cost)
        lam = 0.0 if lam <= 1e-6 else lam / 10.0

    raise NonConvergence(f"no convergence in {opts.max_iter} iterations", partial=x)
