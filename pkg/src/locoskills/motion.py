"""Motion datasets: clips of expert states, transition sampling and the line-delimited file format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

# robot tag -> (state indices used as discriminator features, feature names)
FEATURE_SETS = {
    "planar_arm": (
        np.arange(2, 8),
        ["base_vel_x", "base_vel_y", "q1", "q2", "qd1", "qd2"],
    ),
}

DATASET, POLICY = 1, 0


class DatasetFormatError(ValueError):
    pass


@dataclass
class MotionClip:
    id: str
    dt: float
    frames: np.ndarray  # (n_frames, state_dim)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.dt <= 0:
            raise ValueError(f"clip {self.id!r}: dt must be positive")
        if self.frames.ndim != 2 or self.frames.shape[0] < 2:
            raise ValueError(f"clip {self.id!r}: need at least 2 frames of equal dimension")

    @property
    def n_transitions(self) -> int:
        return self.frames.shape[0] - 1


@dataclass
class MotionDataset:
    clips: list
    feature_names: list = field(default_factory=list)
    robot: str = "planar_arm"

    def __post_init__(self):
        if not self.clips:
            raise ValueError("dataset has no clips")
        dt, dim = self.clips[0].dt, self.clips[0].frames.shape[1]
        for c in self.clips:
            if c.dt != dt:
                raise ValueError(f"clip {c.id!r} has dt {c.dt}, expected {dt}")
            if c.frames.shape[1] != dim:
                raise ValueError(f"clip {c.id!r} has frame dimension {c.frames.shape[1]}, expected {dim}")
        if not self.feature_names and self.robot in FEATURE_SETS:
            self.feature_names = list(FEATURE_SETS[self.robot][1])
        self._transitions = None

    @property
    def dt(self) -> float:
        return self.clips[0].dt

    @property
    def state_dim(self) -> int:
        return self.clips[0].frames.shape[1]

    def all_frames(self) -> np.ndarray:
        return np.concatenate([c.frames for c in self.clips], axis=0)

    def transitions(self) -> np.ndarray:
        """All consecutive-frame feature pairs, shape (n_transitions, 2F)."""
        if self._transitions is None:
            rows = []
            for c in self.clips:
                f = discriminator_features(c.frames, self.robot)
                rows.append(np.concatenate([f[:-1], f[1:]], axis=1))
            self._transitions = np.concatenate(rows, axis=0)
        return self._transitions

    def __eq__(self, other):
        if not isinstance(other, MotionDataset):
            return NotImplemented
        return (
            self.robot == other.robot
            and self.feature_names == other.feature_names
            and len(self.clips) == len(other.clips)
            and all(
                a.id == b.id and a.dt == b.dt and np.array_equal(a.frames, b.frames)
                for a, b in zip(self.clips, other.clips)
            )
        )


@dataclass
class TransitionBatch:
    pairs: np.ndarray  # (B, 2F)
    labels: np.ndarray  # (B,) DATASET or POLICY

    def __len__(self):
        return self.pairs.shape[0]


def discriminator_features(state, robot: str = "planar_arm") -> np.ndarray:
    """Pose-invariant feature subset of a state (or batch of states)."""
    try:
        idx, _ = FEATURE_SETS[robot]
    except KeyError:
        raise ValueError(f"unknown robot tag {robot!r}") from None
    state = np.asarray(state, dtype=np.float64)
    return state[..., idx]


def sample_dataset_transitions(dataset: MotionDataset, batch_size: int, rng) -> TransitionBatch:
    """Uniform sample over every consecutive-frame transition in the dataset."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    trans = dataset.transitions()
    idx = rng.integers(0, trans.shape[0], size=batch_size)
    return TransitionBatch(trans[idx], np.full(batch_size, DATASET))


def write_dataset(dataset: MotionDataset, path) -> None:
    header = {
        "version": FORMAT_VERSION,
        "robot": dataset.robot,
        "dt": dataset.dt,
        "feature_names": list(dataset.feature_names),
    }
    lines = [json.dumps(header)]
    for c in dataset.clips:
        lines.append(json.dumps({"id": c.id, "frames": c.frames.tolist()}))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dataset(path) -> MotionDataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append((lineno, json.loads(line)))
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
    lineno, header = records[0]
    if not isinstance(header, dict) or "version" not in header:
        raise DatasetFormatError(f"{path}:{lineno}: missing header record")
    if header["version"] != FORMAT_VERSION:
        raise DatasetFormatError(
            f"{path}:{lineno}: unsupported version {header['version']} (expected {FORMAT_VERSION})"
        )
    for key in ("robot", "dt", "feature_names"):
        if key not in header:
            raise DatasetFormatError(f"{path}:{lineno}: header lacks {key!r}")
    clips = []
    dim = None
    for lineno, rec in records[1:]:
        if not isinstance(rec, dict) or "id" not in rec or "frames" not in rec:
            raise DatasetFormatError(f"{path}:{lineno}: clip record needs 'id' and 'frames'")
        frames = rec["frames"]
        widths = {len(f) for f in frames} if isinstance(frames, list) else set()
        if len(widths) != 1:
            raise DatasetFormatError(f"{path}:{lineno}: frames have inconsistent dimensions")
        (width,) = widths
        if dim is None:
            dim = width
        elif width != dim:
            raise DatasetFormatError(f"{path}:{lineno}: frame dimension {width}, expected {dim}")
        try:
            clips.append(MotionClip(str(rec["id"]), float(header["dt"]), np.array(frames, dtype=np.float64)))
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    if not clips:
        raise DatasetFormatError(f"{path}: no clip records")
    return MotionDataset(clips, list(header["feature_names"]), str(header["robot"]))
