"""Visco-elastic deformation model.

Two pairwise regularizers with a direct mechanical interpretation: a spring
penalizing changes of the distance between two locally close surface points,
and a damper penalizing differences between their per-step displacements.
Both are exposed in square-root (whitened) form so a least-squares solver
minimizes exactly the corresponding energies.
"""

import numpy as np

from .errors import InvalidRestDistance, InvalidWeight

COINCIDENT_EPS = 1e-9


def elastic_energy(xi_t, xj_t, d0, k):
    """Spring energy k * (d_t - d0)^2 / d0 with d_t = ||xi_t - xj_t||."""
    if d0 <= 0.0:
        raise InvalidRestDistance(f"rest distance {d0} must be > 0")
    d_t = float(np.linalg.norm(np.asarray(xi_t, dtype=float) - np.asarray(xj_t, dtype=float)))
    return k * (d_t - d0) ** 2 / d0


def elastic_residual(xi_t, xj_t, d0, k):
    """Square-root form r = sqrt(k/d0) * (d_t - d0); r**2 equals the energy."""
    if d0 <= 0.0:
        raise InvalidRestDistance(f"rest distance {d0} must be > 0")
    d_t = float(np.linalg.norm(np.asarray(xi_t, dtype=float) - np.asarray(xj_t, dtype=float)))
    return np.sqrt(k / d0) * (d_t - d0)


def elastic_jacobians(xi_t, xj_t, d0, k, fallback_direction=None):
    """d r / d xi and d r / d xj for the square-root elastic residual.

    When the points are numerically coincident the distance direction is
    undefined; the Jacobian then falls back to ``fallback_direction`` (the
    last valid direction), or to zero when none is available.
    """
    if d0 <= 0.0:
        raise InvalidRestDistance(f"rest distance {d0} must be > 0")
    diff = np.asarray(xi_t, dtype=float) - np.asarray(xj_t, dtype=float)
    d_t = np.linalg.norm(diff)
    if d_t < COINCIDENT_EPS:
        direction = np.zeros(3) if fallback_direction is None else np.asarray(fallback_direction, float)
    else:
        direction = diff / d_t
    J_i = np.sqrt(k / d0) * direction
    return J_i, -J_i


def viscous_energy(delta_i, delta_j, b):
    """Damper energy b * ||delta_i - delta_j||^2."""
    if b <= 0.0:
        raise InvalidWeight(f"pairwise weight {b} must be > 0")
    diff = np.asarray(delta_i, dtype=float) - np.asarray(delta_j, dtype=float)
    return b * float(diff @ diff)


def viscous_residual(delta_i, delta_j, b):
    """Square-root form r = sqrt(b) * (delta_i - delta_j), a 3-vector."""
    if b <= 0.0:
        raise InvalidWeight(f"pairwise weight {b} must be > 0")
    return np.sqrt(b) * (np.asarray(delta_i, dtype=float) - np.asarray(delta_j, dtype=float))


def viscous_jacobians(b):
    """d r / d delta_i = sqrt(b) I3 and d r / d delta_j = -sqrt(b) I3."""
    if b <= 0.0:
        raise InvalidWeight(f"pairwise weight {b} must be > 0")
    J = np.sqrt(b) * np.eye(3)
    return J, -J


def pairwise_weight(d_max, sigma):
    """Cross-influence weight exp(-d_max^2 / (2 sigma^2)) in (0, 1]."""
    if sigma <= 0.0:
        raise ValueError("sigma must be > 0")
    if d_max < 0.0:
        raise ValueError("d_max must be >= 0")
    return float(np.exp(-(d_max * d_max) / (2.0 * sigma * sigma)))
