"""Discrete Kalman covariance recursions and the execution-time EKF.

The planner uses the plain recursion (predict, innovation, update) linearized
along the nominal path; execution uses an EKF linearized at the running
estimate with the Joseph-form update. All functions broadcast over leading
batch dimensions and re-symmetrize their covariance outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import UNICYCLE


class NonPositiveDefiniteError(np.linalg.LinAlgError):
    """Innovation covariance failed a Cholesky factorization."""


@dataclass
class BeliefState:
    mean: np.ndarray
    cov: np.ndarray


def symmetrize(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def _T(M):
    return np.swapaxes(M, -1, -2)


def predict_covariance(P_plus, A, world):
    """P- = A P+ A^T + eps^2 G Sigma_w G^T."""
    return symmetrize(A @ P_plus @ _T(A) + world.process_noise())


def innovation_covariance(P_minus, H, world):
    S = symmetrize(H @ P_minus @ _T(H) + world.measurement_noise())
    _cholesky(S)
    return S


def _cholesky(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefiniteError("innovation covariance is not positive definite") from exc


def kalman_gain(P_minus, H, S):
    # S is symmetric, so K^T = S^{-1} H P-
    _cholesky(S)
    return _T(np.linalg.solve(S, H @ P_minus))


def update_covariance(P_minus, H, S):
    """P+ = (I - P- H^T S^-1 H) P-."""
    K = kalman_gain(P_minus, H, S)
    n = P_minus.shape[-1]
    return symmetrize((np.eye(n) - K @ H) @ P_minus)


def joseph_update(P_minus, H, world):
    """Joseph-form posterior (I-KH) P- (I-KH)^T + K R K^T."""
    S = innovation_covariance(P_minus, H, world)
    return _joseph(P_minus, H, kalman_gain(P_minus, H, S), world.measurement_noise())


def _joseph(P_minus, H, K, R):
    IKH = np.eye(P_minus.shape[-1]) - K @ H
    return symmetrize(IKH @ P_minus @ _T(IKH) + K @ R @ _T(K))


def propagate_nominal_covariances(nominal_states, controls, world, model=UNICYCLE):
    """Planned posterior covariances P+_0 .. P+_K along a nominal path.

    The recursion does not depend on measurement values, so no randomness is
    involved. With zero noise every covariance is exactly zero and the update
    is skipped (the gain vanishes).
    """
    nominal_states = np.asarray(nominal_states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if len(nominal_states) != len(controls) + 1:
        raise ValueError("expected K controls and K+1 states")
    P = symmetrize(world.epsilon**2 * np.asarray(world.sigma_x0, dtype=float))
    out = [P]
    for t in range(len(controls)):
        A, _ = model.jacobians(nominal_states[t], controls[t], world.dt)
        P_minus = predict_covariance(P, A, world)
        if np.any(P_minus):
            H = model.measurement_jacobian(nominal_states[t + 1], world)
            S = innovation_covariance(P_minus, H, world)
            P = update_covariance(P_minus, H, S)
        else:
            P = P_minus
        out.append(P)
    return np.array(out)


def ekf_step(belief, control, measurement, world, model=UNICYCLE):
    """One predict/update cycle of the extended Kalman filter.

    Works on a single belief or on a batch (leading dimensions on ``mean``
    and ``cov``). Returns the posterior belief and the innovation vector.
    """
    mean, cov = belief.mean, belief.cov
    A, _ = model.jacobians(mean, control, world.dt)
    mean_pred = model.step(mean, control, world.dt)
    P_minus = predict_covariance(cov, A, world)
    innovation = model.residual(np.asarray(measurement) - model.measure(mean_pred, world))
    if not np.any(P_minus):
        return BeliefState(mean_pred, P_minus), innovation
    H = model.measurement_jacobian(mean_pred, world)
    S = innovation_covariance(P_minus, H, world)
    K = kalman_gain(P_minus, H, S)
    mean_post = model.normalize(mean_pred + (K @ innovation[..., None])[..., 0])
    P_post = _joseph(P_minus, H, K, world.measurement_noise())
    return BeliefState(mean_post, P_post), innovation
