"""Closed-loop stochastic simulation and Monte Carlo safety auditing.

Noise enters only through the landmark measurements: each step draws fresh
measurement noise, forms the control, and advances the state with an Euler
step of the deterministic dynamics.  Episodes end when the linear
interpolant between consecutive states crosses the exit face (success), or
strictly crosses any wall halfplane first (collision), or when max_time
runs out.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .landmarks import VirtualLandmark
from .safety import LinearSystem, WallBarrier, ecbf_matrices
from .synthesis import OutputFeedbackController, compute_control

START_INSIDE_TOL = 1e-9
THREADS_ENV_VAR = "CHANCE_NAV_THREADS"


class SimulationError(RuntimeError):
    """A trial produced a non-finite state or control."""


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    max_time: float = 30.0
    seed: int = 0
    trials: int = 100
    exit_margin: float = 0.0

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive; got {self.dt}")
        if self.max_time < self.dt:
            raise ValueError("max_time must cover at least one step")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1; got {self.trials}")
        if self.exit_margin < 0.0:
            raise ValueError("exit_margin must be nonnegative")

    @property
    def n_steps(self) -> int:
        return int(np.floor(self.max_time / self.dt + 1e-12))


@dataclass(frozen=True)
class TrajectoryRecord:
    """One simulated episode; states has one more row than inputs."""

    states: np.ndarray
    inputs: np.ndarray
    exit_time: float | None
    collided: bool
    jitter: float
    seed: object

    def __post_init__(self):
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise ValueError("states must have exactly one more row than inputs")


@dataclass(frozen=True)
class MonteCarloStats:
    """Aggregate of independent trials.

    violation_rate counts trials with any wall crossing; exit statistics
    cover only the trials that reached the exit face (n_exited of them).
    step_violation_rates audits the realized barrier inequality of each
    wall over every simulated step.
    """

    trials: int
    n_exited: int
    n_collided: int
    n_timed_out: int
    violation_rate: float
    violation_stderr: float
    mean_exit_time: float
    median_exit_time: float
    std_exit_time: float
    mean_jitter: float
    median_jitter: float
    step_violation_rates: tuple
    n_steps: int


def step(x, system: LinearSystem, controller: OutputFeedbackController,
         sampled_measurements, dt: float) -> np.ndarray:
    """One Euler step x + (A x + B u) dt with u from the noisy measurements."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive; got {dt}")
    x = np.asarray(x, dtype=float).reshape(-1)
    u = compute_control(controller, sampled_measurements)
    x_next = x + (system.a_matrix @ x + system.b_matrix @ u) * dt
    if not np.all(np.isfinite(x_next)):
        raise SimulationError(
            f"state became non-finite: x = {x}, u = {u}, next = {x_next}")
    return x_next


def _jitter_value(inputs: np.ndarray) -> float:
    """Normalized mean squared input increment; 0 for degenerate records."""
    if inputs.shape[0] < 2:
        return 0.0
    power = float(np.mean(np.sum(inputs ** 2, axis=1)))
    if power == 0.0:
        return 0.0
    increments = np.diff(inputs, axis=0)
    return float(np.mean(np.sum(increments ** 2, axis=1))) / power


def jitter_metric(record: TrajectoryRecord) -> float:
    """Mean ||u_{t+1} - u_t||^2 over mean ||u_t||^2 (0 if inputs are zero)."""
    if record.inputs.shape[0] < 2:
        raise ValueError("jitter needs at least 2 inputs")
    return _jitter_value(record.inputs)


def _face_crossing(value_start: float, value_end: float) -> float:
    """Interpolation parameter where an affine face value reaches 0+."""
    if value_end <= 0.0:
        return np.inf
    if value_start >= 0.0:
        return 0.0
    return value_start / (value_start - value_end)


def _sample_measurements(x, landmarks, chols, rng, virtual):
    """Fresh noisy displacement measurements, fused if a virtual landmark
    consumes the physical samples."""
    samples = [lm.position - x + chol @ rng.standard_normal(lm.dim)
               for lm, chol in zip(landmarks, chols)]
    if virtual is None:
        return samples
    return [sum(w @ y for w, y in zip(virtual.weights, samples))]


def run_episode(system: LinearSystem, controller: OutputFeedbackController,
                landmarks, walls, exit_face, config: SimConfig, rng=None,
                start=None, virtual=None) -> TrajectoryRecord:
    """Simulate one episode from `start` until exit, collision, or timeout.

    landmarks are the physical noise sources; when `virtual` is given the
    controller is single-block and consumes the weighted combination of
    the physical samples instead (so matched seeds share the same noise).
    """
    landmarks = list(landmarks)
    walls = list(walls)
    for wall in walls:
        if not isinstance(wall, WallBarrier):
            raise ValueError("walls must be WallBarrier instances")
    if virtual is not None:
        if len(controller.blocks) != 1:
            raise ValueError("a virtual-landmark controller must have exactly "
                             f"one block; got {len(controller.blocks)}")
        if virtual.n_sources != len(landmarks):
            raise ValueError(
                f"virtual landmark mixes {virtual.n_sources} sources but "
                f"{len(landmarks)} landmarks were given")
    elif len(controller.blocks) != len(landmarks):
        raise ValueError(f"{len(controller.blocks)} feedback blocks for "
                         f"{len(landmarks)} landmarks")
    if rng is None:
        seed_label = config.seed
        rng = np.random.default_rng(config.seed)
    elif isinstance(rng, np.random.Generator):
        seed_label = None  # caller-managed stream
    else:
        seed_label = rng
        rng = np.random.default_rng(rng)
    exit_row = np.asarray(exit_face[0], dtype=float).reshape(-1)
    exit_offset = float(exit_face[1])
    shifted_offset = exit_offset + config.exit_margin * np.linalg.norm(exit_row)

    x = (np.asarray(start, dtype=float).reshape(-1) if start is not None
         else np.zeros(system.n_states))
    for wall in walls:
        if wall.value(x) < -START_INSIDE_TOL:
            raise ValueError(f"start state {x} is beyond a wall")
    if exit_row @ x + shifted_offset > START_INSIDE_TOL:
        raise ValueError(f"start state {x} is already past the exit face")

    chols = [np.linalg.cholesky(lm.covariance) for lm in landmarks]
    states = [x]
    inputs = []
    exit_time = None
    collided = False
    for t in range(config.n_steps):
        measurements = _sample_measurements(x, landmarks, chols, rng, virtual)
        u = compute_control(controller, measurements)
        x_next = step(x, system, controller, measurements, config.dt)
        inputs.append(u)
        states.append(x_next)

        # Affine face values are linear along the segment, so the first
        # crossing is found exactly; walls cross when h dips below 0.
        s_exit = _face_crossing(exit_row @ x + shifted_offset,
                                exit_row @ x_next + shifted_offset)
        s_wall = min((_face_crossing(-wall.value(x), -wall.value(x_next))
                      for wall in walls), default=np.inf)
        if s_wall < s_exit:
            collided = True
            break
        if s_exit < np.inf:
            exit_time = (t + s_exit) * config.dt
            break
        x = x_next

    inputs = np.array(inputs, dtype=float)
    return TrajectoryRecord(states=np.array(states, dtype=float),
                            inputs=inputs, exit_time=exit_time,
                            collided=collided, jitter=_jitter_value(inputs),
                            seed=seed_label)


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "")
    if raw.strip():
        return max(1, int(raw))
    return 1


def monte_carlo(system: LinearSystem, controller: OutputFeedbackController,
                landmarks, walls, exit_face, config: SimConfig, start=None,
                virtual=None) -> MonteCarloStats:
    """Independent trials with per-trial seeds derived from config.seed.

    Also audits the realized barrier inequality of every wall at every
    simulated step (the per-step chance-constraint event).
    """
    forms = [ecbf_matrices(system, wall) for wall in walls]

    def one_trial(i):
        record = run_episode(system, controller, landmarks, walls, exit_face,
                             config, rng=(config.seed, i), start=start,
                             virtual=virtual)
        vals = np.stack([
            record.states[:-1] @ form.a_bar + record.inputs @ form.b_bar
            + form.d for form in forms])
        return record, (vals < 0.0).sum(axis=1), record.inputs.shape[0]

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_trial, range(config.trials)))
    else:
        results = [one_trial(i) for i in range(config.trials)]

    records = [r for r, _, _ in results]
    step_violations = np.sum([v for _, v, _ in results], axis=0)
    n_steps = int(sum(n for _, _, n in results))
    exit_times = np.array([r.exit_time for r in records
                           if r.exit_time is not None])
    n_collided = sum(r.collided for r in records)
    rate = n_collided / config.trials
    return MonteCarloStats(
        trials=config.trials,
        n_exited=exit_times.size,
        n_collided=n_collided,
        n_timed_out=config.trials - exit_times.size - n_collided,
        violation_rate=rate,
        violation_stderr=float(np.sqrt(rate * (1 - rate) / config.trials)),
        mean_exit_time=float(exit_times.mean()) if exit_times.size else float("nan"),
        median_exit_time=float(np.median(exit_times)) if exit_times.size else float("nan"),
        std_exit_time=float(exit_times.std()) if exit_times.size else float("nan"),
        mean_jitter=float(np.mean([r.jitter for r in records])),
        median_jitter=float(np.median([r.jitter for r in records])),
        step_violation_rates=tuple(
            (step_violations / max(n_steps, 1)).tolist()),
        n_steps=n_steps)
