"""Second-order classification of iterates via dense Hessian eigenvalues.

A point is second-order stationary at accuracy epsilon when its gradient
norm is at most epsilon and the smallest Hessian eigenvalue is at least
-sqrt(rho*epsilon); with the eigenvalue strictly below that threshold it is
a strict saddle. Dense eigendecomposition only: the synthetic problems are
low-dimensional, and problems without a Hessian oracle are reported
first-order only.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class StationarityReport:
    """Classification of one iterate.

    threshold = sqrt(rho * epsilon). in_trust_region flags whether the point
    lies inside the region where the problem's curvature constants are
    certified; outside it the classification is formally unsupported.
    """

    grad_norm: float
    min_eig: Optional[float]
    classification: str
    epsilon: float
    rho: float
    threshold: float
    in_trust_region: bool = True


def min_eigenvalue(hessian):
    """Smallest eigenvalue of a symmetric matrix (dense path, d <= 2000)."""
    H = np.asarray(hessian, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ConfigurationError("hessian must be square")
    if H.shape[0] > 2000:
        raise ConfigurationError("dense eigensolve capped at d = 2000")
    scale = max(1.0, float(np.abs(H).max()))
    if float(np.abs(H - H.T).max()) > 1e-10 * scale:
        raise ConfigurationError("hessian is not symmetric within tolerance")
    return float(np.linalg.eigvalsh(0.5 * (H + H.T))[0])


def classify(problem, x, epsilon, rho=None):
    """Classify an iterate as not-first-order, second-order-stationary, or
    strict-saddle; hessian-unavailable when the problem has no Hessian oracle.

    rho defaults to the problem's certified Hessian Lipschitz constant.
    """
    if epsilon <= 0:
        raise ConfigurationError("epsilon must be positive")
    if rho is None:
        rho = problem.lipschitz_hessian
    if rho is None or rho <= 0:
        raise ConfigurationError("a positive rho is required")
    x = np.asarray(x, dtype=np.float64)
    threshold = float(np.sqrt(rho * epsilon))
    grad_norm = float(np.linalg.norm(problem.full_gradient(x)))
    in_region = bool(np.linalg.norm(x) <= problem.trust_region_radius)
    if problem.dense_hessian is None:
        return StationarityReport(
            grad_norm=grad_norm,
            min_eig=None,
            classification="hessian-unavailable",
            epsilon=epsilon,
            rho=rho,
            threshold=threshold,
            in_trust_region=in_region,
        )
    eig = min_eigenvalue(problem.dense_hessian(x))
    if grad_norm > epsilon:
        label = "not-first-order"
    elif eig >= -threshold:
        label = "second-order-stationary"
    else:
        label = "strict-saddle"
    return StationarityReport(
        grad_norm=grad_norm,
        min_eig=eig,
        classification=label,
        epsilon=epsilon,
        rho=rho,
        threshold=threshold,
        in_trust_region=in_region,
    )
