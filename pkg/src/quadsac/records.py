"""Per-step episode records and their CSV form."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRAJECTORY_HEADER = ("t", "x", "y", "z", "phi", "theta", "psi", "p", "q", "r", "tx", "ty", "tz", "a1", "a2", "a3", "a4", "reward")
LEARNING_CURVE_HEADER = ("env_steps", "mean_eval_reward", "q1_loss", "q2_loss", "value_loss", "policy_loss", "entropy")
ROBUSTNESS_HEADER = ("index", "x", "y", "z", "phi", "theta", "psi", "total_reward", "steps", "terminated")


def fmt(value) -> str:
    # repr of a Python float is the shortest string that parses back exactly
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


@dataclass
class EpisodeRecord:
    rows: np.ndarray = field(default_factory=lambda: np.zeros((0, len(TRAJECTORY_HEADER))))
    terminated: bool = False

    @property
    def steps(self) -> int:
        return int(self.rows.shape[0])

    @property
    def total_reward(self) -> float:
        return float(self.rows[:, -1].sum()) if self.steps else 0.0

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, TRAJECTORY_HEADER.index(name)]

    def distances(self) -> np.ndarray:
        """Drone-to-target distance per row."""
        drone = self.rows[:, 1:4]
        target = self.rows[:, 10:13]
        return np.linalg.norm(drone - target, axis=1)

    def summary(self) -> dict:
        return {"total_reward": self.total_reward, "steps": self.steps, "terminated": self.terminated}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAJECTORY_HEADER)
            for row in self.rows:
                w.writerow([fmt(v) for v in row])

    @classmethod
    def read_csv(cls, path, terminated: bool = False) -> "EpisodeRecord":
        header, rows = read_table(path)
        if tuple(header) != TRAJECTORY_HEADER:
            raise ValueError(f"{path}: unexpected trajectory header {header}")
        data = np.array(rows, dtype=np.float64).reshape(-1, len(TRAJECTORY_HEADER))
        return cls(data, terminated)


def read_table(path) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, rows


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_summary(path, summaries: list[dict]) -> None:
    header = ("episode", "total_reward", "steps", "terminated")
    write_table(path, header, [(i, s["total_reward"], s["steps"], s["terminated"]) for i, s in enumerate(summaries)])


class LearningCurveWriter:
    """Appends one row per evaluation and flushes immediately."""

    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        new = not (append and self.path.exists())
        self._fh = open(self.path, "w" if new else "a", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        if new:
            self._w.writerow(LEARNING_CURVE_HEADER)
            self._fh.flush()

    def append(self, env_steps: int, mean_eval_reward: float, losses: dict) -> None:
        row = [env_steps, mean_eval_reward] + [losses.get(k, float("nan")) for k in LEARNING_CURVE_HEADER[2:]]
        self._w.writerow([fmt(v) for v in row])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()
