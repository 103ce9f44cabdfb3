"""Unicycle dynamics and landmark range/bearing sensing.

States are arrays ``(x, y, theta)`` and controls ``(v, omega)``. Every
function accepts arbitrary leading batch dimensions, so the planner and the
Monte Carlo engine can push whole populations of trajectories through the
same code that the scalar API uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NX = 3
NU = 2
MIN_RANGE = 1e-9


class DegenerateGeometryError(ValueError):
    """Raised when the robot sits on top of a landmark."""


def wrap_angle(a):
    """Map angles to the half-open interval (-pi, pi].

    Values already inside the interval are returned untouched, which keeps
    the map idempotent bit-for-bit.
    """
    a = np.asarray(a, dtype=float)
    inside = (a > -np.pi) & (a <= np.pi)
    if np.all(inside):
        return a if a.ndim else float(a)
    wrapped = np.pi - np.mod(np.pi - a, 2.0 * np.pi)
    out = np.where(inside, a, wrapped)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Landmark:
    id: str
    px: float
    py: float


@dataclass(frozen=True)
class Obstacle:
    cx: float
    cy: float
    radius: float
    safety_margin: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"obstacle radius must be positive, got {self.radius}")
        if self.safety_margin < 0:
            raise ValueError("obstacle safety_margin must be non-negative")


def _check_symmetric(name, m, pd=False):
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12):
        raise ValueError(f"{name} is not symmetric")
    eig = np.linalg.eigvalsh(m)
    if pd and eig.min() <= 0:
        raise ValueError(f"{name} is not positive definite")
    if eig.min() < -1e-12:
        raise ValueError(f"{name} is not positive semidefinite")


@dataclass(frozen=True)
class WorldModel:
    """Environment, sensor layout and noise model.

    ``sigma_nu`` must be ``2 * len(landmarks)`` square. Process noise enters
    as ``epsilon * G @ w`` with ``w ~ N(0, sigma_omega)``.
    """

    landmarks: tuple
    obstacles: tuple = ()
    dt: float = 1.0
    epsilon: float = 1.0
    sigma_omega: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(NX))
    sigma_nu: np.ndarray | None = None
    sigma_x0: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(NX))
    G: np.ndarray = field(default_factory=lambda: np.eye(NX))

    def __post_init__(self):
        lms = tuple(sorted(self.landmarks, key=lambda lm: lm.id))
        if not lms:
            raise ValueError("a world needs at least one landmark")
        if len({lm.id for lm in lms}) != len(lms):
            raise ValueError("landmark ids must be distinct")
        object.__setattr__(self, "landmarks", lms)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        nz = 2 * len(lms)
        sigma_nu = 0.01 * np.eye(nz) if self.sigma_nu is None else self.sigma_nu
        for name, val, shape in (
            ("sigma_omega", self.sigma_omega, (NX, NX)),
            ("sigma_nu", sigma_nu, (nz, nz)),
            ("sigma_x0", self.sigma_x0, (NX, NX)),
            ("G", self.G, (NX, NX)),
        ):
            arr = np.array(val, dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        _check_symmetric("sigma_omega", self.sigma_omega)
        _check_symmetric("sigma_nu", self.sigma_nu, pd=True)
        _check_symmetric("sigma_x0", self.sigma_x0)
        pos = np.array([[lm.px, lm.py] for lm in lms], dtype=float)
        pos.setflags(write=False)
        object.__setattr__(self, "_landmark_xy", pos)

    @property
    def nz(self):
        return 2 * len(self.landmarks)

    @property
    def landmark_xy(self):
        return self._landmark_xy

    def with_epsilon(self, epsilon):
        """Copy of this world with a different noise scale."""
        from dataclasses import replace

        return replace(self, epsilon=float(epsilon))

    def process_noise(self):
        """Discrete process covariance eps^2 G Sigma_w G^T."""
        G = self.G
        return self.epsilon**2 * (G @ self.sigma_omega @ G.T)

    def measurement_noise(self):
        return self.epsilon**2 * self.sigma_nu


def step_dynamics(state, control, dt=1.0):
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    x, y, th = state[..., 0], state[..., 1], state[..., 2]
    v, w = control[..., 0], control[..., 1]
    return np.stack(
        [x + dt * v * np.cos(th), y + dt * v * np.sin(th), wrap_angle(th + dt * w)],
        axis=-1,
    )


def dynamics_jacobians(state, control, dt=1.0):
    """Return ``(A, B)``, the state and control Jacobians of ``step_dynamics``."""
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    th = state[..., 2]
    v = control[..., 0]
    c, s = np.cos(th), np.sin(th)
    batch = th.shape
    A = np.zeros(batch + (NX, NX))
    A[..., 0, 0] = A[..., 1, 1] = A[..., 2, 2] = 1.0
    A[..., 0, 2] = -dt * v * s
    A[..., 1, 2] = dt * v * c
    B = np.zeros(batch + (NX, NU))
    B[..., 0, 0] = dt * c
    B[..., 1, 0] = dt * s
    B[..., 2, 1] = dt
    return A, B


def _offsets(state, world):
    state = np.asarray(state, dtype=float)
    d = world.landmark_xy - state[..., None, :2]
    r2 = d[..., 0] ** 2 + d[..., 1] ** 2
    r = np.sqrt(r2)
    if np.any(r < MIN_RANGE):
        raise DegenerateGeometryError("robot position coincides with a landmark")
    return d, r2, r


def measure(state, world):
    """Stacked ``[r1, b1, r2, b2, ...]`` range/bearing readings."""
    d, _, r = _offsets(state, world)
    theta = np.asarray(state, dtype=float)[..., 2]
    bearing = wrap_angle(np.arctan2(d[..., 1], d[..., 0]) - theta[..., None])
    z = np.stack([r, np.asarray(bearing)], axis=-1)
    return z.reshape(z.shape[:-2] + (-1,))


def measurement_jacobian(state, world):
    d, r2, r = _offsets(state, world)
    dx, dy = d[..., 0], d[..., 1]
    H = np.zeros(d.shape[:-1] + (2, NX))
    H[..., 0, 0] = -dx / r
    H[..., 0, 1] = -dy / r
    H[..., 1, 0] = dy / r2
    H[..., 1, 1] = -dx / r2
    H[..., 1, 2] = -1.0
    return H.reshape(d.shape[:-2] + (world.nz, NX))


def wrap_measurement_residual(dz):
    """Wrap the bearing entries (odd positions) of a stacked residual."""
    dz = np.array(dz, dtype=float)
    dz[..., 1::2] = wrap_angle(dz[..., 1::2])
    return dz


def state_difference(a, b):
    """``a - b`` with the heading difference wrapped."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d[..., 2] = wrap_angle(d[..., 2])
    return d


class Unicycle:
    """Bundles the unicycle/landmark functions behind one model object.

    The filter and Monte Carlo code only talk to this interface, so other
    motion or sensor models can be dropped in for testing.
    """

    nx = NX
    nu = NU

    @staticmethod
    def step(state, control, dt):
        return step_dynamics(state, control, dt)

    @staticmethod
    def jacobians(state, control, dt):
        return dynamics_jacobians(state, control, dt)

    @staticmethod
    def measure(state, world):
        return measure(state, world)

    @staticmethod
    def measurement_jacobian(state, world):
        return measurement_jacobian(state, world)

    @staticmethod
    def residual(dz):
        return wrap_measurement_residual(dz)

    @staticmethod
    def difference(a, b):
        return state_difference(a, b)

    @staticmethod
    def normalize(state):
        state = np.array(state, dtype=float)
        state[..., 2] = wrap_angle(state[..., 2])
        return state


UNICYCLE = Unicycle()
