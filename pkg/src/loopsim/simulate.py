"""Seeded Monte Carlo: trajectories, Haar-random ensembles and sampled correlators.

Random streams come from numpy's PCG64 seeded with
``SeedSequence(seed, spawn_key=(stream,))``, so every (seed, stream) pair
gives an independent, reproducible generator.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chain import TrajectoryRecord
from .fock_core import ZERO_PROB, Detector, ScatteringMatrix, emission_table, make_unitary

GENERATOR = "PCG64"
BURN_IN = 50


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(stream),))))


def haar_unitary(rng: np.random.Generator) -> ScatteringMatrix:
    """Draw a 2x2 unitary from the Haar measure.

    Two complex Gaussian rows are Gram-Schmidt orthonormalised and the
    second row picks up an independent uniform phase.
    """
    while True:
        g = rng.standard_normal(8)
        r1 = g[0:2] + 1j * g[2:4]
        r2 = g[4:6] + 1j * g[6:8]
        n1 = np.linalg.norm(r1)
        if n1 < 1e-8:
            continue
        r1 = r1 / n1
        r2 = r2 - np.vdot(r1, r2) * r1
        n2 = np.linalg.norm(r2)
        if n2 < 1e-8:
            continue
        r2 = r2 / n2
        phase = np.exp(2j * np.pi * rng.random())
        return ScatteringMatrix.from_array(np.array([r1, phase * r2]), label="haar")


class _Sampler:
    """Cumulative emission tables that grow on demand as the loop fills."""

    def __init__(self, U: ScatteringMatrix, m_max: int = 32):
        self.U = U
        self._build(m_max)

    def _build(self, m_max):
        P = emission_table(self.U, m_max)
        P /= P.sum(axis=0)
        self.cdf = np.cumsum(P, axis=0).T  # row m
        self.cdf[:, -1] = 1.0
        self.m_max = m_max

    def draw(self, m: int, u: float) -> int:
        if m > self.m_max:
            self._build(2 * m)
        row = self.cdf[m]
        return int(np.searchsorted(row[: m + 2], u, side="right"))


def sample_occupancy_path(U, steps: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample photon counts ``x_1..x_steps`` and occupancies ``m_1..m_{steps+1}``."""
    U = make_unitary(U)
    sampler = _Sampler(U)
    u = rng.random(steps)
    xs = np.empty(steps, dtype=np.int64)
    ms = np.empty(steps + 1, dtype=np.int64)
    m = 0
    for i in range(steps):
        ms[i] = m
        x = sampler.draw(m, u[i])
        xs[i] = x
        m = m + 1 - x
    ms[steps] = m
    return xs, ms


def sample_trajectory(U, detector="pnrd", steps: int = 1, seed: int = 0, stream: int = 0) -> TrajectoryRecord:
    """Ancestral sample of one run; the hidden occupancy path is kept on the record."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    detector = Detector.parse(detector)
    xs, ms = sample_occupancy_path(U, steps, make_rng(seed, stream))
    obs = xs if detector is Detector.PNRD else (xs > 0).astype(np.int64)
    return TrajectoryRecord(tuple(obs.tolist()), None, detector, tuple(ms.tolist()))


@dataclass(frozen=True)
class EnsembleSpec:
    count: int
    seed: int
    steps: int
    detector: str = "pnrd"


@dataclass
class EnsembleStats:
    t: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n: int
    values: np.ndarray  # (n, steps)

    @property
    def sem(self) -> np.ndarray:
        return self.std / np.sqrt(self.n)


def ensemble_unitaries(spec: EnsembleSpec) -> list[ScatteringMatrix]:
    return [haar_unitary(make_rng(spec.seed, i)) for i in range(spec.count)]


def _entropy_row(args):
    from .info import event_entropy_series

    U, detector, steps = args
    return event_entropy_series(U, detector, steps)


def ensemble_entropy_stats(
    spec: EnsembleSpec, unitaries: Sequence | None = None, threads: int = 1
) -> EnsembleStats:
    """Mean and spread of exact ``H(x_t)`` over an ensemble of unitaries.

    Unitary ``i`` is drawn from stream ``i`` of ``spec.seed`` unless
    ``unitaries`` is given.  ``std`` is the population standard deviation.
    """
    if unitaries is None:
        unitaries = ensemble_unitaries(spec)
    unitaries = [make_unitary(u) for u in unitaries]
    jobs = [(u, spec.detector, spec.steps) for u in unitaries]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_entropy_row, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        rows = [_entropy_row(j) for j in jobs]
    values = np.array(rows)
    return EnsembleStats(
        np.arange(1, spec.steps + 1), values.mean(axis=0), values.std(axis=0), len(values), values
    )


@dataclass
class CorrelationEstimate:
    k: int
    value: float
    stderr: float
    n_samples: int


def _as_outcomes(trajectory) -> np.ndarray:
    if isinstance(trajectory, (str, os.PathLike)):
        from .io import read_trajectories

        runs = read_trajectories(trajectory).trajectories
        trajectory = max(runs, key=len) if runs else ()
    if isinstance(trajectory, TrajectoryRecord):
        trajectory = trajectory.outcomes
    return np.asarray(trajectory, dtype=np.int64)


def estimate_correlation(trajectory, k: int, n_samples: int, seed: int = 0, burn_in: int = BURN_IN) -> CorrelationEstimate:
    """Sample ``Cov(x_{s} + ... + x_{s+k-1}, x_{s+k})`` from random fragments of one long run.

    Fragment starts are uniform (with replacement) over positions at least
    ``burn_in`` steps into the run.  The standard error is the usual
    plug-in error of a sample covariance.
    """
    x = _as_outcomes(trajectory)
    if k < 1:
        raise ValueError("k must be >= 1")
    first = min(burn_in, max(len(x) - k - 1, 0))
    n_starts = len(x) - k - first
    if n_starts < 1:
        raise ValueError(f"trajectory of length {len(x)} too short for k={k}")
    rng = make_rng(seed, 0)
    starts = first + rng.integers(0, n_starts, size=n_samples)
    csum = np.concatenate([[0], np.cumsum(x)])
    window = csum[starts + k] - csum[starts]
    nxt = x[starts + k]
    prod = (window - window.mean()) * (nxt - nxt.mean())
    value = prod.sum() / (n_samples - 1) if n_samples > 1 else 0.0
    stderr = prod.std(ddof=1) / np.sqrt(n_samples) if n_samples > 1 else float("inf")
    return CorrelationEstimate(k, float(value), float(stderr), n_samples)
