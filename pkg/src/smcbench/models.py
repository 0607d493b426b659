"""Experiment models: stochastic volatility, bearing-only tracking, Student-t, linear-Gaussian.

State-space models expose the particle-filter interface used by
:func:`smcbench.samplers.run_sir_pf`::

    M                                   state dimension
    sample_prior(n, rng) -> (n, M)
    propose(x, y, rng) -> (n, M)        transition proposal
    log_weight(x_new, x_old, y) -> (n,) log p(x_new|x_old) + log p(y|x_new) - log q(x_new|x_old, y)
    simulate(T, rng) -> (states, measurements)

All models here are bootstrap filters (the transition is the proposal), so
``log_weight`` reduces to the measurement log-likelihood.

Static targets expose the SMC sampler interface (:class:`StudentTTarget`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

LOG_2PI = math.log(2.0 * math.pi)


# ------------------------------------------------------------ econometrics


@dataclass(frozen=True)
class EconParams:
    phi: float = 0.9731
    sigma: float = 0.1726
    beta: float = 0.6338

    def __post_init__(self):
        if not abs(self.phi) < 1:
            raise ValueError("stochastic volatility needs |phi| < 1")

    @property
    def stationary_var(self) -> float:
        return self.sigma**2 / (1.0 - self.phi**2)


def econ_step(x: np.ndarray, rng: np.random.Generator, params: EconParams = EconParams()) -> np.ndarray:
    return params.phi * x + params.sigma * rng.standard_normal(np.shape(x))


def econ_log_likelihood(x: np.ndarray, y: float, params: EconParams = EconParams()) -> np.ndarray:
    """log N(y; 0, beta^2 exp(x))."""
    x = np.asarray(x, dtype=np.float64)
    var = params.beta**2 * np.exp(x)
    return -0.5 * (LOG_2PI + np.log(var) + y * y / var)


@dataclass
class EconModel:
    """Log-volatility ``X_t = phi X_{t-1} + sigma V_t``, ``Y_t = beta exp(X_t/2) W_t``."""

    params: EconParams = field(default_factory=EconParams)
    M: int = 1
    D: int = 1

    def sample_prior(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return math.sqrt(self.params.stationary_var) * rng.standard_normal((n, 1))

    def propose(self, x, y, rng):
        return econ_step(x, rng, self.params)

    def log_weight(self, x_new, x_old, y):
        return econ_log_likelihood(x_new[:, 0], float(np.ravel(y)[0]), self.params)

    def simulate(self, T: int, rng: np.random.Generator):
        x = self.sample_prior(1, rng)[0]
        states = np.empty((T, 1))
        ys = np.empty((T, 1))
        for t in range(T):
            x = econ_step(x, rng, self.params)
            states[t] = x
            ys[t] = self.params.beta * np.exp(x / 2) * rng.standard_normal()
        return states, ys


# ------------------------------------------------------ bearing-only tracking


def bearing_matrices(delta: float = 1.0, q: float = 5.0) -> tuple[np.ndarray, np.ndarray]:
    """Constant-velocity transition ``A`` and process covariance for state [x, vx, y, vy]."""
    A = np.array([[1, delta, 0, 0], [0, 1, 0, 0], [0, 0, 1, delta], [0, 0, 0, 1]], dtype=np.float64)
    block = q * np.array([[delta**3 / 3, delta**2 / 2], [delta**2 / 2, delta]])
    S = np.zeros((4, 4))
    S[:2, :2] = block
    S[2:, 2:] = block
    return A, S


def circle_sensors(D: int, centre: np.ndarray, radius: float) -> np.ndarray:
    """``D`` sensors evenly spaced on a circle; the first sits at ``centre - (radius, 0)``."""
    theta = math.pi + 2.0 * math.pi * np.arange(D) / D
    return np.column_stack([centre[0] + radius * np.cos(theta), centre[1] + radius * np.sin(theta)])


@dataclass
class BearingParams:
    delta: float = 1.0
    meas_var: float = 1e-4
    radius: float = 100.0
    x0: np.ndarray = field(default_factory=lambda: np.array([100.0, 1.0, 0.0, 1.0]))
    D: int = 1
    sensors: np.ndarray | None = None

    def __post_init__(self):
        self.A, self.Sigma = bearing_matrices(self.delta)
        self.chol = np.linalg.cholesky(self.Sigma)
        if self.sensors is None:
            self.sensors = circle_sensors(self.D, self.x0[[0, 2]], self.radius)
        self.sensors = np.atleast_2d(np.asarray(self.sensors, dtype=np.float64))
        self.D = len(self.sensors)
        if self.D < 1:
            raise ValueError("need at least one sensor")


def bearing_step(x: np.ndarray, rng: np.random.Generator | None, params: BearingParams) -> np.ndarray:
    """``x' = A x + v``; rows of ``x`` are states. ``rng=None`` means no process noise."""
    x = np.asarray(x, dtype=np.float64)
    out = x @ params.A.T
    if rng is not None:
        out += rng.standard_normal(out.shape) @ params.chol.T
    return out


def bearing_angles(x: np.ndarray, sensors: np.ndarray) -> np.ndarray:
    """Noise-free bearings, shape (..., D)."""
    x = np.asarray(x, dtype=np.float64)
    dx = x[..., 0, None] - sensors[:, 0]
    dy = x[..., 2, None] - sensors[:, 1]
    if np.any((dx == 0) & (dy == 0)):
        raise ValueError("target coincides with a sensor; bearing undefined")
    return np.arctan2(dy, dx)


def bearing_measure(x: np.ndarray, sensors: np.ndarray, rng: np.random.Generator | None, meas_var: float = 1e-4) -> np.ndarray:
    z = bearing_angles(x, sensors)
    if rng is not None:
        z = z + math.sqrt(meas_var) * rng.standard_normal(z.shape)
    return z


def wrap_angle(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


@dataclass
class BearingModel:
    """Four-state constant-velocity target observed through ``D`` bearing sensors."""

    params: BearingParams = field(default_factory=BearingParams)
    M: int = 4

    @property
    def D(self) -> int:
        return self.params.D

    def sample_prior(self, n, rng):
        return self.params.x0 + rng.standard_normal((n, 4))

    def propose(self, x, y, rng):
        return bearing_step(x, rng, self.params)

    def log_weight(self, x_new, x_old, y):
        resid = wrap_angle(np.asarray(y) - bearing_angles(x_new, self.params.sensors))
        v = self.params.meas_var
        return -0.5 * (np.einsum("ij,ij->i", resid, resid) / v + self.D * (LOG_2PI + math.log(v)))

    def simulate(self, T, rng):
        x = self.params.x0.copy()
        states = np.empty((T, 4))
        ys = np.empty((T, self.D))
        for t in range(T):
            x = bearing_step(x[None], rng, self.params)[0]
            states[t] = x
            ys[t] = bearing_measure(x, self.params.sensors, rng, self.params.meas_var)
        return states, ys


# ---------------------------------------------------------------- Student-t


@dataclass(frozen=True)
class StudentTParams:
    nu: float = 5.0
    mu: float = 3.0
    eps: float = 0.5

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("degrees of freedom must be positive")
        if not self.eps > 0:
            raise ValueError("random-walk scale must be positive")


def student_t_log_pdf(x, params: StudentTParams = StudentTParams()):
    nu, mu = params.nu, params.mu
    const = gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)
    z = np.asarray(x, dtype=np.float64) - mu
    return const - (nu + 1) / 2 * np.log1p(z * z / nu)


def random_walk_propose(x: np.ndarray, eps: float, rng: np.random.Generator) -> np.ndarray:
    return x + eps * rng.standard_normal(np.shape(x))


def random_walk_log_density(x_to: np.ndarray, x_from: np.ndarray, eps: float) -> np.ndarray:
    """log N(x_to; x_from, eps^2 I), summed over the last axis; symmetric in its arguments."""
    d = np.atleast_2d(np.asarray(x_to) - np.asarray(x_from))
    m = d.shape[-1]
    return -0.5 * (np.einsum("ij,ij->i", d, d) / eps**2 + m * (LOG_2PI + 2 * math.log(eps)))


@dataclass
class StudentTTarget:
    """Static 1-D Student-t target with a Gaussian random-walk kernel.

    The backward kernel is the forward kernel itself (``L = q``).
    """

    params: StudentTParams = field(default_factory=StudentTParams)
    init_mean: float = 0.0
    init_std: float = 5.0
    M: int = 1

    def __post_init__(self):
        p = self.params
        self._const = float(gammaln((p.nu + 1) / 2) - gammaln(p.nu / 2) - 0.5 * math.log(p.nu * math.pi))

    @property
    def truth(self) -> float:
        return self.params.mu

    def sample_initial(self, n, rng):
        return self.init_mean + self.init_std * rng.standard_normal((n, 1))

    def log_initial(self, x):
        z = (x[:, 0] - self.init_mean) / self.init_std
        return -0.5 * (z * z + LOG_2PI) - math.log(self.init_std)

    def log_target(self, x):
        return student_t_log_pdf(x[:, 0], self.params)

    def log_target_point(self, x) -> float:
        """Scalar evaluation for single-chain samplers (``x`` a float or length-1 array)."""
        z = (x if isinstance(x, float) else float(x[0])) - self.params.mu
        nu = self.params.nu
        return self._const - (nu + 1) / 2 * math.log1p(z * z / nu)

    def propose(self, x, rng):
        return random_walk_propose(x, self.params.eps, rng)

    def log_forward(self, x_new, x_old):
        return random_walk_log_density(x_new, x_old, self.params.eps)

    def log_backward(self, x_old, x_new):
        return random_walk_log_density(x_new, x_old, self.params.eps)


# --------------------------------------------------------- linear-Gaussian


@dataclass
class LinearGaussianModel:
    """Scalar ``x' = a x + v``, ``y = x + w`` with Gaussian noise; the Kalman filter is exact."""

    a: float = 0.9
    q: float = 1.0
    r: float = 1.0
    m0: float = 0.0
    p0: float = 1.0
    M: int = 1
    D: int = 1

    def sample_prior(self, n, rng):
        return self.m0 + math.sqrt(self.p0) * rng.standard_normal((n, 1))

    def propose(self, x, y, rng):
        return self.a * x + math.sqrt(self.q) * rng.standard_normal(x.shape)

    def log_weight(self, x_new, x_old, y):
        d = x_new[:, 0] - float(np.ravel(y)[0])
        return -0.5 * (d * d / self.r + LOG_2PI + math.log(self.r))

    def simulate(self, T, rng):
        x = self.m0 + math.sqrt(self.p0) * rng.standard_normal()
        states = np.empty((T, 1))
        ys = np.empty((T, 1))
        for t in range(T):
            x = self.a * x + math.sqrt(self.q) * rng.standard_normal()
            states[t] = x
            ys[t] = x + math.sqrt(self.r) * rng.standard_normal()
        return states, ys


def kalman_oracle(model: LinearGaussianModel, ys) -> tuple[np.ndarray, np.ndarray]:
    """Exact filtering means and variances of ``x_t | y_1..y_t``."""
    ys = np.ravel(np.asarray(ys, dtype=np.float64))
    m, p = model.m0, model.p0
    means = np.empty(len(ys))
    variances = np.empty(len(ys))
    for t, y in enumerate(ys):
        m, p = model.a * m, model.a**2 * p + model.q
        if model.r == 0:
            m, p = y, 0.0
        else:
            k = p / (p + model.r)
            m, p = m + k * (y - m), (1 - k) * p
        means[t] = m
        variances[t] = p
    return means, variances
