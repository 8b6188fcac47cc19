"""Trajectory files and tabular outputs.

Trajectory files hold one run per line as space-separated integers.  The
first line is ``# detector=<pnrd|threshold> unitary=<spec> seed=<u64>``;
further ``#`` lines carry free-form metadata and are skipped on read.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .chain import TrajectoryRecord
from .fock_core import Detector

_HEADER_RE = re.compile(r"^#\s*detector=(\S+)\s+unitary=(\S+)\s+seed=(\d+)\s*$")


@dataclass
class TrajectoryFile:
    detector: Detector
    unitary: str
    seed: int
    trajectories: list[tuple[int, ...]]
    extra_header: list[str] = field(default_factory=list)

    @property
    def header_line(self) -> str:
        return trajectory_header(self.detector, self.unitary, self.seed)


def trajectory_header(detector, unitary: str, seed: int) -> str:
    return f"# detector={Detector.parse(detector).value} unitary={unitary} seed={int(seed)}"


def format_trajectory_file(
    trajectories: Iterable[Sequence[int] | TrajectoryRecord],
    detector,
    unitary: str,
    seed: int,
    extra_header: Sequence[str] = (),
) -> str:
    lines = [trajectory_header(detector, unitary, seed)]
    lines += ["# " + h for h in extra_header]
    for traj in trajectories:
        outcomes = traj.outcomes if isinstance(traj, TrajectoryRecord) else traj
        lines.append(" ".join(str(int(x)) for x in outcomes))
    return "\n".join(lines) + "\n"


def write_trajectories(path, trajectories, detector, unitary: str, seed: int, extra_header=()) -> None:
    Path(path).write_text(format_trajectory_file(trajectories, detector, unitary, seed, extra_header))


def read_trajectories(path) -> TrajectoryFile:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not (m := _HEADER_RE.match(lines[0])):
        raise ValueError(f"{path}: missing trajectory header line")
    detector = Detector.parse(m.group(1))
    extra, trajectories = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("#"):
            extra.append(line[1:].strip())
            continue
        if not line.strip():
            trajectories.append(())
            continue
        try:
            outcomes = tuple(int(tok) for tok in line.split(" "))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: outcomes must be space-separated integers") from None
        if any(x < 0 for x in outcomes):
            raise ValueError(f"{path}:{lineno}: negative outcome")
        trajectories.append(outcomes)
    return TrajectoryFile(detector, m.group(2), int(m.group(3)), trajectories, extra)
