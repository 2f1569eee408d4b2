"""Simulated execution: DMP primitives, a saturated P-controller servo loop,
and the deterministic transcript -> primitive plan mapping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import GRAMMAR, VOCABULARY
from .errors import FormatError, NumericalError, ParameterError, SubtaskNetError, UsageError
from .metrics import levenshtein, to_segments

DIVERGENCE_LIMIT = 1e6


# ---------------------------------------------------------------- DMP


@dataclass
class DmpParams:
    x0: np.ndarray  # (n_axes,)
    goal: np.ndarray  # (n_axes,)
    weights: np.ndarray  # (n_axes, N)
    centers: np.ndarray  # (N,), strictly decreasing in (0, 1]
    sigma2: np.ndarray  # (N,) basis widths
    alpha: float = 25.0
    beta: float = 25.0 / 4.0
    tau: float = 1.0
    alpha_x: float = 4.0
    tau_c: float = 1.0

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=np.float64))
        self.goal = np.atleast_1d(np.asarray(self.goal, dtype=np.float64))
        self.centers = np.asarray(self.centers, dtype=np.float64)
        N = self.centers.size
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(self.x0.size, N)
        self.sigma2 = np.broadcast_to(np.asarray(self.sigma2, dtype=np.float64), (N,)).copy()
        if N < 1:
            raise ParameterError("a DMP needs at least one basis function")
        if self.goal.shape != self.x0.shape:
            raise ParameterError(f"goal {self.goal.shape} and start {self.x0.shape} differ")
        if np.any(np.diff(self.centers) >= 0) or self.centers.min() <= 0 or self.centers.max() > 1:
            raise ParameterError("basis centers must be strictly decreasing within (0, 1]")
        if min(self.alpha, self.beta, self.tau, self.alpha_x, self.tau_c) <= 0:
            raise ParameterError("DMP gains and time constants must be positive")
        if (self.sigma2 <= 0).any():
            raise ParameterError("basis widths must be positive")

    @property
    def n_basis(self):
        return self.centers.size


def default_basis(n_basis, alpha_x):
    """Centres spaced evenly in time along the phase decay; neighbours cross at ~0.5."""
    if n_basis == 1:
        return np.array([1.0]), np.array([1.0])
    centers = np.exp(-alpha_x * np.linspace(0.0, 1.0, n_basis))
    gaps = -np.diff(centers)
    gaps = np.append(gaps, gaps[-1])
    sigma2 = (gaps / 2.0) ** 2 / (2.0 * math.log(2.0))
    return centers, sigma2


def dmp_skeleton(n_axes=3, n_basis=20, alpha=25.0, beta=None, tau=1.0, alpha_x=4.0, tau_c=1.0):
    centers, sigma2 = default_basis(n_basis, alpha_x)
    return DmpParams(
        x0=np.zeros(n_axes),
        goal=np.zeros(n_axes),
        weights=np.zeros((n_axes, n_basis)),
        centers=centers,
        sigma2=sigma2,
        alpha=alpha,
        beta=alpha / 4.0 if beta is None else beta,
        tau=tau,
        alpha_x=alpha_x,
        tau_c=tau_c,
    )


def phase(t, params):
    """Canonical system s(t) = exp(-alpha_x t / tau_c), the solution of tau_c s' = -alpha_x s."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ParameterError("phase is defined for t >= 0")
    return np.exp(-params.alpha_x * t / params.tau_c)


def basis(s, params):
    s = np.asarray(s, dtype=np.float64)[..., None]
    return np.exp(-((s - params.centers) ** 2) / (2.0 * params.sigma2))


def forcing(s, params):
    """Normalized RBF mixture, one value per axis (vectorized over s)."""
    psi = basis(s, params)
    den = np.maximum(psi.sum(axis=-1, keepdims=True), 1e-12)
    return (psi / den) @ params.weights.T


@dataclass
class Trajectory:
    dt: float
    pos: np.ndarray  # (n, axes)
    vel: np.ndarray
    acc: np.ndarray

    def __post_init__(self):
        if self.dt <= 0:
            raise ParameterError("trajectory time step must be positive")
        if self.pos.shape[0] < 2:
            raise ParameterError("a trajectory needs at least two samples")
        for arr in (self.pos, self.vel, self.acc):
            if not np.isfinite(arr).all():
                raise NumericalError("trajectory contains non-finite samples")

    @property
    def times(self):
        return self.dt * np.arange(self.pos.shape[0])

    @property
    def duration(self):
        return self.dt * (self.pos.shape[0] - 1)

    @classmethod
    def from_positions(cls, pos, dt):
        """Velocities and accelerations by central differences."""
        pos = np.asarray(pos, dtype=np.float64)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.shape[0] < 3:
            raise UsageError("need at least three samples to differentiate a demonstration")
        vel = np.gradient(pos, dt, axis=0)
        acc = np.gradient(vel, dt, axis=0)
        return cls(dt, pos, vel, acc)

    def dump(self, path):
        """Text lines "t x y z vx vy vz" (missing axes written as 0)."""
        n = self.pos.shape[0]
        pos = np.zeros((n, 3))
        vel = np.zeros((n, 3))
        k = min(3, self.pos.shape[1])
        pos[:, :k] = self.pos[:, :k]
        vel[:, :k] = self.vel[:, :k]
        with open(path, "w", encoding="utf-8") as fh:
            for t, p, v in zip(self.times, pos, vel):
                fh.write(f"{t:.6f} {p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")


def rollout(params, dt=1e-3, duration=None):
    """Integrate tau*x'' = alpha*(beta*(g - x) - tau*x') + f(s) from rest at x0.

    Semi-implicit Euler: velocity is advanced first and the new velocity moves
    the position.
    """
    duration = params.tau_c if duration is None else duration
    if dt <= 0 or duration < dt:
        raise ParameterError(f"need dt > 0 and duration >= dt (dt={dt}, duration={duration})")
    n = int(round(duration / dt))
    s = phase(dt * np.arange(n + 1), params)
    f = forcing(s, params)
    a_, b_, tau, g = params.alpha, params.beta, params.tau, params.goal
    pos = np.empty((n + 1, g.size))
    vel = np.empty_like(pos)
    acc = np.empty_like(pos)
    x, v = params.x0.copy(), np.zeros_like(g)
    for i in range(n + 1):
        a = (a_ * (b_ * (g - x) - tau * v) + f[i]) / tau
        pos[i], vel[i], acc[i] = x, v, a
        v = v + dt * a
        x = x + dt * v
        if np.abs(x).max() > DIVERGENCE_LIMIT:
            raise NumericalError(
                f"DMP rollout diverged at step {i} (alpha={a_}, beta={b_}, tau={tau}, dt={dt})"
            )
    return Trajectory(dt, pos, vel, acc)


def target_forcing(demo, params):
    return params.tau * demo.acc - params.alpha * (
        params.beta * (params.goal - demo.pos) - params.tau * demo.vel
    )


def learn_from_demo(demo, skeleton):
    """Fit basis weights to a demonstration by per-basis locally weighted regression.

    Gains, basis layout and phase constants come from ``skeleton``; the start
    and goal are taken from the demo's first and last samples. With a
    constant regressor each weight is the psi_i-weighted mean of the target
    forcing.
    """
    if demo.duration <= 0:
        raise UsageError("demonstration has zero duration")
    if demo.pos.shape[0] < skeleton.n_basis + 2:
        raise UsageError(f"demo has {demo.pos.shape[0]} samples; need >= {skeleton.n_basis + 2}")
    n_axes = demo.pos.shape[1]
    params = replace(
        skeleton,
        x0=demo.pos[0].copy(),
        goal=demo.pos[-1].copy(),
        weights=np.zeros((n_axes, skeleton.n_basis)),
    )
    s = phase(demo.times, params)
    f_target = target_forcing(demo, params)  # (n, axes)
    psi = basis(s, params)  # (n, N)
    den = np.maximum(psi.sum(axis=0), 1e-12)
    params.weights = (psi.T @ f_target).T / den
    return params


def energy(traj, params):
    """0.5*tau*v^2 + 0.5*alpha*beta*(g-x)^2 summed over axes; non-increasing when f == 0."""
    err = params.goal - traj.pos
    return 0.5 * params.tau * (traj.vel**2).sum(axis=1) + 0.5 * params.alpha * params.beta * (
        err**2
    ).sum(axis=1)


# ---------------------------------------------------------------- servo


@dataclass
class ControllerConfig:
    k_x: float = 1.0
    k_pz: float = 1.0
    d_ref: float = 0.5
    v_max: tuple = (0.25, 0.25, 0.25)
    tolerance: tuple = (1e-3, 1e-3, 1e-3)

    def __post_init__(self):
        if self.k_x <= 0 or self.k_pz <= 0:
            raise ParameterError("controller gains must be positive")
        if min(self.v_max) <= 0:
            raise ParameterError("velocity limits must be positive")
        if min(self.tolerance) < 0:
            raise ParameterError("tolerances must be nonnegative")


def controller_step(depth, e_y, e_z, cfg):
    """Saturated proportional velocity command ``(v_x, v_y, v_z)``."""
    errors = (depth - cfg.d_ref, e_y, e_z)
    gains = (cfg.k_x, cfg.k_pz, cfg.k_pz)
    out = []
    for e, k, vmax, tol in zip(errors, gains, cfg.v_max, cfg.tolerance):
        if abs(e) <= tol:
            out.append(0.0)
        else:
            out.append(min(max(k * e, -vmax), vmax))
    return tuple(out)


@dataclass
class ServoResult:
    converged: bool
    steps: int
    pose: np.ndarray
    errors: tuple


def servo_errors(pose, target, cfg):
    """Camera looks along +x: depth is the x-distance to the target."""
    depth = target[0] - pose[0]
    return depth, target[1] - pose[1], target[2] - pose[2]


def servo_until_aligned(pose, target, cfg, dt=0.01, max_steps=10_000, noise=0.0, rng=None):
    """Drive an ideal-kinematics end effector until every error is inside its band."""
    pose = np.asarray(pose, dtype=np.float64).copy()
    target = np.asarray(target, dtype=np.float64)
    if noise > 0 and rng is None:
        raise UsageError("measurement noise needs an rng")
    for step in range(max_steps + 1):
        d, ey, ez = servo_errors(pose, target, cfg)
        if noise > 0:
            d, ey, ez = (v + noise * rng.standard_normal() for v in (d, ey, ez))
        inside = (
            abs(d - cfg.d_ref) <= cfg.tolerance[0]
            and abs(ey) <= cfg.tolerance[1]
            and abs(ez) <= cfg.tolerance[2]
        )
        if inside:
            return ServoResult(True, step, pose, (d - cfg.d_ref, ey, ez))
        if step == max_steps:
            break
        pose += dt * np.array(controller_step(d, ey, ez, cfg))
    return ServoResult(False, max_steps, pose, (d - cfg.d_ref, ey, ez))


# ---------------------------------------------------------------- planning

DEFAULT_GOALS = {
    "reach": (0.60, 0.00, 0.20),
    "pick": (0.60, 0.00, 0.35),
    "move": (0.50, 0.25, 0.35),
    "pour": (0.50, 0.25, 0.30),
    "give": (0.40, -0.30, 0.40),
    "place": (0.55, 0.30, 0.15),
    "wipe": (0.60, -0.10, 0.10),
    "retract": (0.30, 0.00, 0.40),
}


class PlanRejected(SubtaskNetError, ValueError):
    def __init__(self, transcript, nearest, distance):
        super().__init__(
            f"transcript {list(transcript)} matches no task; nearest is {nearest!r} "
            f"(edit distance {distance})"
        )
        self.nearest = nearest
        self.distance = distance


@dataclass
class PrimitivePlan:
    task: str
    steps: list = field(default_factory=list)  # (sub-task, goal xyz)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for name, g in self.steps:
                fh.write(f"{name}\t{g[0]:.9g}\t{g[1]:.9g}\t{g[2]:.9g}\n")

    @staticmethod
    def load_steps(path):
        steps = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                try:
                    steps.append((parts[0], tuple(float(v) for v in parts[1:4])))
                    if len(parts) != 4:
                        raise ValueError
                except (ValueError, IndexError):
                    raise FormatError(f"{path}: line {lineno} is not 'subtask<TAB>gx<TAB>gy<TAB>gz'") from None
        return steps


def transcript_of(labels):
    return [seg.label for seg in to_segments(labels)]


def plan_from_transcript(transcript, grammar=GRAMMAR, goals=DEFAULT_GOALS):
    transcript = list(transcript)
    if not transcript:
        raise UsageError("empty transcript")
    for task, seq in grammar.items():
        if list(seq) == transcript:
            return PrimitivePlan(task, [(name, tuple(goals[name])) for name in seq])
    nearest = min(grammar, key=lambda t: (levenshtein(transcript, list(grammar[t])), t))
    raise PlanRejected(transcript, nearest, levenshtein(transcript, list(grammar[nearest])))


def load_goals(path):
    return {name: g for name, g in PrimitivePlan.load_steps(path)}


# ---------------------------------------------------------------- primitive library / execution


def min_jerk(x0, g, n):
    tt = np.linspace(0.0, 1.0, n)[:, None]
    return x0 + (g - x0) * (10 * tt**3 - 15 * tt**4 + 6 * tt**5)


def demo_for(subtask, duration=1.0, dt=1e-3):
    """Canonical unit demonstration per sub-task: min-jerk with a task-shaped bump."""
    n = int(round(duration / dt)) + 1
    x0, g = np.zeros(3), np.array([0.2, 0.1, 0.1])
    pos = min_jerk(x0, g, n)
    tt = np.linspace(0.0, 1.0, n)
    bump = np.sin(np.pi * tt) ** 2
    lift = {"pick": 0.05, "place": 0.05, "move": 0.08, "give": 0.04, "pour": 0.03}.get(subtask, 0.0)
    pos[:, 2] += lift * bump
    if subtask == "wipe":
        pos[:, 1] += 0.03 * np.sin(2 * np.pi * tt) * bump
    return Trajectory.from_positions(pos, dt)


def build_library(names=VOCABULARY, n_basis=20, duration=1.0, dt=1e-3):
    skel = dmp_skeleton(3, n_basis, tau_c=duration)
    return {name: learn_from_demo(demo_for(name, duration, dt), skel) for name in names}


@dataclass
class PrimitiveResult:
    subtask: str
    servo_converged: bool
    servo_steps: int
    terminal_error: float
    success: bool
    trajectory: Trajectory | None = None


SERVO_FREE = ("retract",)


def execute_plan(plan, library, ctrl, start=(0.3, 0.0, 0.4), dt=1e-3, settle=1.5, tol=1e-2,
                 servo_dt=0.01, max_servo_steps=5000):
    """Servo-align then roll out each primitive's DMP toward its goal, in order."""
    pose = np.asarray(start, dtype=np.float64)
    results = []
    for name, goal in plan.steps:
        goal = np.asarray(goal, dtype=np.float64)
        converged, steps = True, 0
        if name not in SERVO_FREE:
            servo = servo_until_aligned(pose, goal, ctrl, servo_dt, max_servo_steps)
            converged, steps, pose = servo.converged, servo.steps, servo.pose
        dmp = replace(library[name], x0=pose.copy(), goal=goal.copy())
        traj = rollout(dmp, dt, settle * dmp.tau_c)
        err = float(np.linalg.norm(traj.pos[-1] - goal))
        results.append(PrimitiveResult(name, converged, steps, err, converged and err < tol, traj))
        pose = traj.pos[-1].copy()
    return results
