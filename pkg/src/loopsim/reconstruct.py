"""Recovering the loop occupancy from a fragment with unknown start time.

With photon-number resolution the occupancy obeys
``m(t + 1) = m(t) + 1 - x_t``; only the initial value is unknown.  The
online procedure starts from an empty loop and, whenever the running
value goes negative, raises the initial occupancy by the deficit and
restarts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chain import TrajectoryRecord
from .simulate import BURN_IN, make_rng, sample_occupancy_path


@dataclass(frozen=True)
class ReconstructionResult:
    m_hat: tuple  # occupancy entering steps 1..T+1
    corrections: tuple = ()  # (step, photons added)
    last_negative_step: int | None = None


def _validate(fragment) -> list[int]:
    if isinstance(fragment, TrajectoryRecord):
        fragment = fragment.outcomes
    out = []
    for x in fragment:
        if isinstance(x, (bool, np.bool_)) or int(x) != x or x < 0:
            raise ValueError(f"fragment outcomes must be non-negative integers, got {x!r}")
        out.append(int(x))
    return out


def reconstruct_m(fragment: Sequence[int] | TrajectoryRecord) -> ReconstructionResult:
    """Minimal occupancy series consistent with a PNRD fragment.

    Steps are numbered from 1 within the fragment; ``m_hat[j]`` is the
    occupancy entering step ``j + 1`` and the final entry follows the last
    outcome.
    """
    xs = _validate(fragment)
    initial = 0
    corrections = []
    while True:
        m = [initial]
        restart = False
        for x in xs:
            nxt = m[-1] + 1 - x
            if nxt < 0:
                corrections.append((len(m) + 1, -nxt))
                initial += -nxt
                restart = True
                break
            m.append(nxt)
        if not restart:
            break
    last = corrections[-1][0] if corrections else None
    return ReconstructionResult(tuple(m), tuple(corrections), last)


def last_negative_steps(fragments: np.ndarray) -> np.ndarray:
    """Step of the final correction for each row of ``fragments`` (0 if none).

    A correction fires exactly where the zero-start running occupancy hits
    a new record low below zero, so the last one is the last such record.
    """
    fragments = np.asarray(fragments, dtype=np.int64)
    n, T = fragments.shape
    run = np.concatenate([np.zeros((n, 1), dtype=np.int64), np.cumsum(1 - fragments, axis=1)], axis=1)
    prev_min = np.minimum.accumulate(np.concatenate([np.zeros((n, 1), dtype=np.int64), run[:, :-1]], axis=1), axis=1)
    prev_min = np.minimum(prev_min, 0)
    record = run < prev_min
    # steps are 1-based occupancy indices
    idx = np.where(record, np.arange(1, T + 2), 0)
    return idx.max(axis=1)


@dataclass
class NegativeEventStats:
    steps: np.ndarray
    counts: np.ndarray
    n_fragments: int
    fragment_length: int

    @property
    def probability(self) -> np.ndarray:
        return self.counts / self.n_fragments

    @property
    def max_last_negative_step(self) -> int:
        nz = np.flatnonzero(self.counts)
        return int(self.steps[nz[-1]]) if len(nz) else 0


def negative_event_stats(
    U,
    n_fragments: int,
    fragment_length: int = 40,
    seed: int = 0,
    trajectory_length: int = 100_000,
    chunk: int = 200_000,
) -> NegativeEventStats:
    """Distribution of the last correction step over random fragments of one long run."""
    if n_fragments < 1:
        raise ValueError("n_fragments must be >= 1")
    total = max(trajectory_length, BURN_IN + fragment_length + 1)
    xs, _ = sample_occupancy_path(U, total, make_rng(seed, 0))
    rng = make_rng(seed, 1)
    n_starts = total - fragment_length - BURN_IN + 1
    counts = np.zeros(fragment_length + 2, dtype=np.int64)
    offsets = np.arange(fragment_length)
    done = 0
    while done < n_fragments:
        n = min(chunk, n_fragments - done)
        starts = BURN_IN + rng.integers(0, n_starts, size=n)
        last = last_negative_steps(xs[starts[:, None] + offsets])
        counts += np.bincount(last, minlength=len(counts))
        done += n
    # index 0 holds fragments without any correction
    return NegativeEventStats(np.arange(1, fragment_length + 2), counts[1:], n_fragments, fragment_length)
