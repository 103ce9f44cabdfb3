"""Time-varying LQR feedback around a nominal trajectory."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .filters import symmetrize
from .models import NU, NX, UNICYCLE


@dataclass(frozen=True, eq=False)
class CostWeights:
    Wx: np.ndarray = field(default_factory=lambda: np.eye(NX))
    Wu: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(NU))

    def __post_init__(self):
        Wx = np.atleast_2d(np.array(self.Wx, dtype=float))
        Wu = np.atleast_2d(np.array(self.Wu, dtype=float))
        if np.linalg.eigvalsh(symmetrize(Wx)).min() < -1e-12:
            raise ValueError("Wx must be positive semidefinite")
        if np.linalg.eigvalsh(symmetrize(Wu)).min() <= 0:
            raise ValueError("Wu must be positive definite")
        object.__setattr__(self, "Wx", Wx)
        object.__setattr__(self, "Wu", Wu)


@dataclass
class GainSchedule:
    gains: np.ndarray  # (K, nu, nx)
    riccati: np.ndarray  # (K+1, nx, nx)

    @property
    def horizon(self):
        return len(self.gains)

    def zeroed(self):
        """Same horizon with every gain set to zero (open-loop execution)."""
        return GainSchedule(np.zeros_like(self.gains), self.riccati.copy())


def feedback_gain(A, B, P_next, Wu):
    """L = (Wu + B^T P B)^-1 B^T P A."""
    M = Wu + B.T @ P_next @ B
    # Wu is PD and P_next PSD, so M must factor
    np.linalg.cholesky(M)
    return np.linalg.solve(M, B.T @ P_next @ A)


def backward_riccati(A_seq, B_seq, weights):
    """Backward dynamic Riccati recursion from P^f_K = Wx.

    Step ``t`` pairs (A_t, B_t) with P^f_{t+1} to produce the gain L_t and
    P^f_t = A^T P A - A^T P B L_t + Wx.
    """
    A_seq = [np.atleast_2d(np.asarray(A, dtype=float)) for A in A_seq]
    B_seq = [np.atleast_2d(np.asarray(B, dtype=float)) for B in B_seq]
    if len(A_seq) != len(B_seq):
        raise ValueError("A_seq and B_seq must have equal length")
    K = len(A_seq)
    Wx, Wu = weights.Wx, weights.Wu
    P = [None] * (K + 1)
    L = [None] * K
    P[K] = symmetrize(Wx)
    for t in range(K - 1, -1, -1):
        A, B, Pn = A_seq[t], B_seq[t], P[t + 1]
        L[t] = feedback_gain(A, B, Pn, Wu)
        P[t] = symmetrize(A.T @ Pn @ A - A.T @ Pn @ B @ L[t] + Wx)
    nu, nx = Wu.shape[0], Wx.shape[0]
    return GainSchedule(np.array(L).reshape(K, nu, nx), np.array(P))


def plan_gains(plan, problem, weights=None):
    """Gain schedule from the Jacobians along a nominal plan."""
    weights = weights or CostWeights()
    A, B = problem.model.jacobians(plan.states[:-1], plan.controls, problem.world.dt)
    return backward_riccati(A, B, weights)


def clip_control(u, r_u):
    u = np.array(u, dtype=float)
    norm = np.linalg.norm(u, axis=-1, keepdims=True)
    scale = np.where(norm > r_u, r_u / np.where(norm > 0, norm, 1.0), 1.0)
    return np.where(norm > r_u, u * scale, u)


def apply_policy(t, plan, gains, estimate, r_u, model=UNICYCLE):
    """u_t = u^p_t - L_t (xhat_t - x^p_t), clipped to the r_u ball.

    ``estimate`` may carry leading batch dimensions.
    """
    if not 0 <= t < plan.horizon:
        raise IndexError(f"step {t} outside horizon {plan.horizon}")
    dev = model.difference(estimate, plan.states[t])
    u = plan.controls[t] - (gains.gains[t] @ dev[..., None])[..., 0]
    return clip_control(u, r_u)
