"""Trajectory dataset container, splits, and state-action pair extraction.

One file holds one bundle: a short binary header describing the grid, an
offset index, then fixed-size little-endian float64 records.  Records store
times, states, costates, and controls per sample so that every consumer
(training, refinement, evaluation, necessary-condition audits) reads the
same artifact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError
from .trajectories import OptimalTrajectory

DATASET_MAGIC = b"GCTRAJDS"
DATASET_VERSION = 1

_FIXED_HEADER = struct.Struct("<II")   # version, json header length


@dataclass
class Dataset:
    """A bundle of optimal trajectories over a common problem and grid."""

    problem: str                        # "transfer" | "landing"
    trajectories: list[OptimalTrajectory]
    eps: float | None = None            # landing barrier weight, None = transfer

    def __post_init__(self):
        if self.problem not in ("transfer", "landing"):
            raise ConfigError(f"unknown problem tag {self.problem!r}")
        if self.problem == "landing" and self.eps is None and self.trajectories:
            raise ConfigError("landing dataset requires its barrier weight")

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def sample_count(self) -> int:
        return self.trajectories[0].sample_count if self.trajectories else 0


def _record_floats(samples: int, state_dim: int, control_dim: int) -> int:
    # t_star + times + states + costates + controls
    return 1 + samples * (1 + state_dim + 7 + control_dim)


def save_dataset(path, dataset: Dataset) -> None:
    """Write the container; trajectories must share one sample grid size."""
    trajs = dataset.trajectories
    if not trajs:
        raise ConfigError("refusing to write an empty dataset")
    samples = trajs[0].sample_count
    state_dim = trajs[0].states.shape[1]
    control_dim = trajs[0].controls.shape[1]
    for i, t in enumerate(trajs):
        if (t.sample_count != samples or t.states.shape[1] != state_dim
                or t.controls.shape[1] != control_dim):
            raise ConfigError(f"trajectory {i} grid or dimensions differ "
                              f"from the first trajectory")
    header = {
        "problem": dataset.problem,
        "eps": dataset.eps,
        "count": len(trajs),
        "samples": samples,
        "state_dim": state_dim,
        "control_dim": control_dim,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    rec_bytes = _record_floats(samples, state_dim, control_dim) * 8
    base = (len(DATASET_MAGIC) + _FIXED_HEADER.size + len(header_bytes)
            + 8 * len(trajs))
    offsets = np.arange(len(trajs), dtype="<u8") * rec_bytes + base
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(_FIXED_HEADER.pack(DATASET_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(offsets.tobytes())
        for t in trajs:
            rec = np.concatenate([
                [t.t_star], t.times,
                t.states.ravel(), t.costates.ravel(), t.controls.ravel(),
            ]).astype("<f8")
            fh.write(rec.tobytes())


def load_dataset(path) -> Dataset:
    """Read a container written by save_dataset; rejects foreign files."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise FormatError(f"{path}: not a trajectory dataset file")
    pos = len(DATASET_MAGIC)
    try:
        version, header_len = _FIXED_HEADER.unpack_from(blob, pos)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated fixed header") from exc
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    pos += _FIXED_HEADER.size
    try:
        header = json.loads(blob[pos:pos + header_len])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    pos += header_len
    count = header["count"]
    samples = header["samples"]
    state_dim = header["state_dim"]
    control_dim = header["control_dim"]
    offsets = np.frombuffer(blob, dtype="<u8", count=count, offset=pos)
    rec_floats = _record_floats(samples, state_dim, control_dim)
    eps = header["eps"]
    trajectories = []
    for i, off in enumerate(offsets):
        if int(off) + rec_floats * 8 > len(blob):
            raise FormatError(f"{path}: record {i} extends past end of file")
        rec = np.frombuffer(blob, dtype="<f8", count=rec_floats,
                            offset=int(off))
        t_star = float(rec[0])
        cursor = 1
        times = rec[cursor:cursor + samples].copy()
        cursor += samples
        states = rec[cursor:cursor + samples * state_dim]
        states = states.reshape(samples, state_dim).copy()
        cursor += samples * state_dim
        costates = rec[cursor:cursor + samples * 7].reshape(samples, 7).copy()
        cursor += samples * 7
        controls = rec[cursor:cursor + samples * control_dim]
        controls = controls.reshape(samples, control_dim).copy()
        trajectories.append(OptimalTrajectory(
            t_star=t_star, times=times, states=states, costates=costates,
            controls=controls, eps=eps))
    return Dataset(problem=header["problem"], trajectories=trajectories,
                   eps=eps)


def merge_datasets(parts: list[Dataset]) -> Dataset:
    """Concatenate bundles over the same problem (and barrier weight)."""
    if not parts:
        raise ConfigError("nothing to merge")
    first = parts[0]
    for p in parts[1:]:
        if p.problem != first.problem:
            raise ConfigError("cannot merge datasets across problems")
        if p.eps != first.eps:
            raise ConfigError("cannot merge datasets across barrier weights")
    merged = [t for p in parts for t in p.trajectories]
    return Dataset(problem=first.problem, trajectories=merged, eps=first.eps)


def split_dataset(dataset: Dataset, fraction: float,
                  seed: int) -> tuple[Dataset, Dataset]:
    """Trajectory-level split: every sample of a trajectory stays on one side.

    A sample-level split would leak near-duplicate states between the sides.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"split fraction must lie in (0, 1), got {fraction}")
    n = len(dataset.trajectories)
    if n < 2:
        raise ConfigError("need at least two trajectories to split")
    order = np.random.default_rng(seed).permutation(n)
    n_first = int(round(fraction * n))
    n_first = min(max(n_first, 1), n - 1)
    first = [dataset.trajectories[i] for i in order[:n_first]]
    second = [dataset.trajectories[i] for i in order[n_first:]]
    return (Dataset(dataset.problem, first, dataset.eps),
            Dataset(dataset.problem, second, dataset.eps))


def extract_pairs(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Flatten trajectories into (states, targets) training pairs.

    Transfer targets are the unit thrust direction (3,); landing targets are
    throttle plus direction (4,).  States stay in natural problem units; the
    policy applies its own input scaling.
    """
    if not dataset.trajectories:
        raise ConfigError("empty dataset has no pairs")
    xs = np.concatenate([t.states for t in dataset.trajectories], axis=0)
    ys = np.concatenate([t.controls for t in dataset.trajectories], axis=0)
    return xs, ys
