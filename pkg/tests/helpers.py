"""Builders for synthetic-but-well-formed test data."""
import numpy as np

from gcnet.datasets import Dataset
from gcnet.trajectories import OptimalTrajectory


def unit_rows(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def learnable_trajectory(problem_kind, rng, samples=20):
    """States plus controls that are a smooth function of the state, so a
    network can actually fit them."""
    state_dim = 6 if problem_kind == "transfer" else 7
    t_star = float(rng.uniform(1.0, 5.0))
    states = rng.standard_normal((samples, state_dim))
    if problem_kind == "landing":
        states[:, 6] = rng.uniform(550.0, 650.0, size=samples)
    raw = np.tanh(states[:, 0:3]) + 0.5 * np.sin(states[:, 3:6])
    t_hat = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    if problem_kind == "transfer":
        controls = t_hat
    else:
        u = 0.5 + 0.4 * np.tanh(states[:, 0] * states[:, 3])
        controls = np.column_stack([u, t_hat])
    return OptimalTrajectory(
        t_star=t_star,
        times=np.linspace(0.0, t_star, samples),
        states=states,
        costates=rng.standard_normal((samples, 7)),
        controls=controls,
        eps=None,
    )


def learnable_dataset(problem_kind, n_traj, rng, samples=20):
    trajs = [learnable_trajectory(problem_kind, rng, samples)
             for _ in range(n_traj)]
    eps = 5.12e-7 if problem_kind == "landing" else None
    return Dataset(problem=problem_kind, trajectories=trajs, eps=eps)
