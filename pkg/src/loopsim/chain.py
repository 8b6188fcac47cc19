"""Markov chain over the loop photon number and its observation model.

The loop occupancy ``m`` evolves as a Markov chain: with ``m`` photons in
the loop the detector sees ``x`` photons with probability ``|A[x, m]|^2``
and ``m + 1 - x`` photons stay.  Detector outcomes are observations of
that chain, so everything here is hidden-Markov bookkeeping with the
twist that emission and transition are the same event.

All per-observation work goes through *observation kernels*:
``kernels[o][m_new, m_old]`` is the probability of observing symbol ``o``
and landing in ``m_new`` starting from ``m_old``.  For a PNRD the symbol is
the photon count; for a threshold detector it is no-click (0) / click (1).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .fock_core import Detector, ScatteringMatrix, emission_table, make_unitary

DEFAULT_CUTOFF = 60
LEAK_WARN = 1e-9
TAIL_TOL = 1e-12


class CutoffError(ValueError):
    """The photon-number cutoff is too small for the requested computation."""


class BudgetError(RuntimeError):
    """An enumeration would exceed its configured size budget."""

    def __init__(self, what: str, count: int, budget: int):
        super().__init__(f"{what}: {count} items exceeds budget {budget}")
        self.count = count
        self.budget = budget


class ConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"no convergence after {iterations} iterations (residual {residual:.3e})")
        self.residual = residual


class ImpossibleHistoryError(ValueError):
    def __init__(self, index: int, outcome: int):
        super().__init__(f"history has zero probability: outcome {outcome} at step {index + 1} is impossible")
        self.index = index
        self.outcome = outcome


@dataclass(frozen=True, eq=False)
class TransitionModel:
    unitary: ScatteringMatrix
    detector: Detector
    cutoff: int
    emission: np.ndarray  # P[x, m], shape (cutoff + 2, cutoff + 1)
    transition: np.ndarray  # Pi[m, m'], shape (cutoff + 1, cutoff + 1)
    observation: np.ndarray  # P_obs[o, m]
    kernels: np.ndarray  # K[o, m_new, m_old]
    leak: np.ndarray  # per-column mass that would land above the cutoff
    warning: str | None = None

    @property
    def n_obs(self) -> int:
        return self.kernels.shape[0]

    @property
    def size(self) -> int:
        return self.cutoff + 1

    def mean_count(self) -> np.ndarray:
        """Expected detected photons for each loop occupancy."""
        return np.arange(self.emission.shape[0]) @ self.emission


def build_transition(U, detector="pnrd", cutoff: int = DEFAULT_CUTOFF) -> TransitionModel:
    """Assemble the chain kernels for loop occupancies ``0..cutoff``.

    Probability that would push the loop above ``cutoff`` is not folded
    back; it is reported in ``leak`` and, when larger than ``1e-9``, as a
    warning string on the model (and a ``RuntimeWarning``).
    """
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    U = make_unitary(U)
    detector = Detector.parse(detector)
    size = cutoff + 1
    P = emission_table(U, cutoff)

    pnrd_kernels = np.zeros((cutoff + 2, size, size))
    leak = np.zeros(size)
    for m in range(size):
        for x in range(m + 2):
            target = m + 1 - x
            if target > cutoff:
                leak[m] += P[x, m]
            else:
                pnrd_kernels[x, target, m] = P[x, m]
    Pi = pnrd_kernels.sum(axis=0)

    if detector is Detector.PNRD:
        kernels = pnrd_kernels
        obs = P
    else:
        kernels = np.stack([pnrd_kernels[0], pnrd_kernels[1:].sum(axis=0)])
        obs = np.stack([P[0], P[1:].sum(axis=0)])

    warning = None
    if leak.max() > LEAK_WARN:
        warning = f"mass {leak.max():.3e} leaks above cutoff {cutoff}"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    for arr in (P, Pi, obs, kernels, leak):
        arr.setflags(write=False)
    return TransitionModel(U, detector, cutoff, P, Pi, obs, kernels, leak, warning)


def model_for_steps(U, detector, t: int) -> TransitionModel:
    """Smallest model that represents ``t`` steps without truncation."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return build_transition(U, detector, cutoff=max(t, 1) + 1)


@dataclass(frozen=True)
class PhotonNumberDistribution:
    probs: np.ndarray
    t: int

    def __len__(self):
        return len(self.probs)

    def __getitem__(self, m):
        return self.probs[m]

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)

    def mean(self) -> float:
        return float(np.arange(len(self.probs)) @ self.probs)


def occupancy_history(model: TransitionModel, t: int) -> np.ndarray:
    """Rows ``pi_1 .. pi_t`` of the exact occupancy distribution, shape ``(t, cutoff + 1)``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if t > model.cutoff + 1:
        raise CutoffError(f"t={t} needs cutoff >= {t - 1}, model has {model.cutoff}")
    out = np.zeros((t, model.size))
    out[0, 0] = 1.0
    for i in range(1, t):
        out[i] = model.transition @ out[i - 1]
    return out


def evolve_distribution(model: TransitionModel, t: int) -> PhotonNumberDistribution:
    """Occupancy distribution entering step ``t``, starting from an empty loop at ``t = 1``."""
    pi = occupancy_history(model, t)[-1]
    return PhotonNumberDistribution(pi[:t].copy(), t)


@dataclass(frozen=True)
class StationaryAnalysis:
    distribution: PhotonNumberDistribution
    lambda_max: float | None
    tau_sat: float | None
    degenerate: bool
    iterations: int
    residual: float

    @property
    def pi(self) -> np.ndarray:
        return self.distribution.probs

    @property
    def tau_sat_log2(self) -> float | None:
        """Saturation time with a base-2 logarithm, kept for comparison."""
        if self.lambda_max is None or not 0 < self.lambda_max < 1:
            return None
        return -1.0 / math.log2(self.lambda_max)


def _subdominant_eigenvalue(Pi: np.ndarray, pi_st: np.ndarray, tol=1e-13, max_iter=100_000):
    # zero-sum vectors are invariant under a column-stochastic matrix; project
    # out pi_st each step to stay in that complement
    n = len(pi_st)
    v = np.cos(np.arange(n) + 0.5)
    v -= v.sum() * pi_st
    v /= np.abs(v).sum()
    lam = 0.0
    for it in range(max_iter):
        w = Pi @ v
        w -= w.sum() * pi_st
        norm = np.abs(w).sum()
        if norm < 1e-300:
            return 0.0
        new_lam = norm
        v = w / norm
        if it > 10 and abs(new_lam - lam) < tol:
            return new_lam
        lam = new_lam
    return lam


def stationary(model: TransitionModel, tol: float = 1e-14, max_iter: int = 10**6) -> StationaryAnalysis:
    """Fixed point of the occupancy chain by power iteration, plus saturation time.

    ``tau_sat = -1 / ln(lambda_max)`` where ``lambda_max`` is the largest
    eigenvalue magnitude below one, found by deflated power iteration.
    Unitaries that make the chain reducible or periodic are flagged as
    degenerate and get ``tau_sat = None``.
    """
    Pi = np.asarray(model.transition)
    pi = np.zeros(model.size)
    pi[0] = 1.0
    residual = np.inf
    for it in range(1, max_iter + 1):
        nxt = Pi @ pi
        nxt /= nxt.sum()
        residual = np.abs(nxt - pi).sum()
        pi = nxt
        if residual < tol:
            break
    else:
        raise ConvergenceError(residual, max_iter)

    tail = pi[-1] + model.leak @ pi
    if tail > TAIL_TOL:
        raise CutoffError(f"stationary tail mass {tail:.3e} at cutoff {model.cutoff}; increase the cutoff")

    lam = _subdominant_eigenvalue(Pi, pi)
    degenerate = not (1e-12 < lam < 1 - 1e-9)
    tau = None if degenerate else -1.0 / math.log(lam)
    return StationaryAnalysis(
        PhotonNumberDistribution(pi, t=-1), None if lam >= 1 - 1e-9 else lam, tau, degenerate, it, residual
    )


@dataclass(frozen=True)
class TrajectoryRecord:
    outcomes: tuple
    probability: float | None = None
    detector: Detector = Detector.PNRD
    occupancy: tuple | None = None

    def __len__(self):
        return len(self.outcomes)


def count_trajectories(U, t: int, detector="pnrd") -> list[int]:
    """Number of nonzero-probability outcome histories after each step ``1..t``.

    For a PNRD histories and occupancy paths are in bijection, so this is a
    path count over ``m``.  Threshold histories are counted per reachable
    occupancy support set.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    detector = Detector.parse(detector)
    model = model_for_steps(U, "pnrd", t)
    P = model.emission
    counts = []
    if detector is Detector.PNRD:
        paths = [0] * (t + 2)
        paths[0] = 1
        for _ in range(t):
            nxt = [0] * (t + 2)
            for m, c in enumerate(paths):
                if c:
                    for x in range(m + 2):
                        if P[x, m] > 0:
                            nxt[m + 1 - x] += c
            paths = nxt
            counts.append(sum(paths))
        return counts

    groups: dict[frozenset, int] = {frozenset([0]): 1}
    for _ in range(t):
        nxt: dict[frozenset, int] = {}
        for support, c in groups.items():
            dark = frozenset(m + 1 for m in support if P[0, m] > 0)
            click = frozenset(m + 1 - x for m in support for x in range(1, m + 2) if P[x, m] > 0)
            for s in (dark, click):
                if s:
                    nxt[s] = nxt.get(s, 0) + c
        groups = nxt
        counts.append(sum(groups.values()))
    return counts


def iter_branches(
    model: TransitionModel,
    start: np.ndarray,
    steps: int,
    prob_floor: float = 0.0,
    chunk: int = 1 << 16,
    budget: int | None = None,
) -> Iterator[tuple[np.ndarray, np.ndarray, float]]:
    """Expand every observation sequence of length ``steps`` from ``start``.

    Yields ``(histories, forward, pruned)`` chunks: ``histories`` is an int
    array ``(n, steps)``, ``forward[i]`` is the unnormalised occupancy
    vector after history ``i`` (its sum is the history probability), and
    ``pruned`` is the probability mass dropped by ``prob_floor`` in the
    chunk.  Depth-first once a level exceeds ``chunk`` rows, so memory
    stays bounded.
    """
    kernels = model.kernels
    start = np.asarray(start, dtype=float)
    seen = [0]

    def expand(hist, alpha, remaining):
        if remaining == 0:
            seen[0] += len(alpha)
            if budget is not None and seen[0] > budget:
                raise BudgetError("history enumeration", seen[0], budget)
            yield hist, alpha, 0.0
            return
        new_h, new_a, pruned = [], [], 0.0
        for o in range(kernels.shape[0]):
            nxt = alpha @ kernels[o].T
            mass = nxt.sum(axis=1)
            keep = mass > prob_floor
            pruned += float(mass[~keep].sum())
            if keep.any():
                new_a.append(nxt[keep])
                new_h.append(np.column_stack([hist[keep], np.full(int(keep.sum()), o)]))
        if pruned:
            yield hist[:0], alpha[:0], pruned
        if not new_a:
            return
        hist = np.concatenate(new_h)
        alpha = np.concatenate(new_a)
        for lo in range(0, len(alpha), chunk):
            yield from expand(hist[lo:lo + chunk], alpha[lo:lo + chunk], remaining - 1)

    yield from expand(np.zeros((1, 0), dtype=np.int64), start[None, :], steps)


@dataclass
class Enumeration:
    records: list[TrajectoryRecord]
    pruned_mass: float

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def enumerate_trajectories(
    U, t: int, detector="pnrd", prob_floor: float = 0.0, budget: int = 2_000_000
) -> Enumeration:
    """Every history of length ``t`` with probability above ``prob_floor``."""
    detector = Detector.parse(detector)
    if detector is Detector.PNRD:
        expected = count_trajectories(U, t, detector)[-1]
    else:
        expected = 2**t
    if expected > budget:
        raise BudgetError(f"enumerating t={t} trajectories", expected, budget)
    model = model_for_steps(U, detector, t)
    start = np.zeros(model.size)
    start[0] = 1.0
    records, pruned = [], 0.0
    for hist, alpha, dropped in iter_branches(model, start, t, prob_floor):
        pruned += dropped
        for h, p in zip(hist.tolist(), alpha.sum(axis=1).tolist()):
            records.append(TrajectoryRecord(tuple(h), p, detector))
    return Enumeration(records, pruned)


def filter_posterior(model: TransitionModel, history: Sequence[int] | TrajectoryRecord) -> PhotonNumberDistribution:
    """Posterior over the loop occupancy entering the step after ``history``."""
    outcomes = history.outcomes if isinstance(history, TrajectoryRecord) else tuple(history)
    if len(outcomes) > model.cutoff:
        raise CutoffError(f"history of length {len(outcomes)} needs cutoff >= {len(outcomes)}")
    alpha = np.zeros(model.size)
    alpha[0] = 1.0
    for i, o in enumerate(outcomes):
        o = int(o)
        if not 0 <= o < model.n_obs:
            raise ImpossibleHistoryError(i, o)
        alpha = model.kernels[o] @ alpha
        total = alpha.sum()
        if total <= 0:
            raise ImpossibleHistoryError(i, o)
        alpha /= total
    t = len(outcomes) + 1
    return PhotonNumberDistribution(alpha[:t].copy(), t)


def two_step_joint(model: TransitionModel, pi: np.ndarray) -> np.ndarray:
    """Joint of consecutive observations ``(o_t, o_{t+1})`` given occupancy ``pi`` at step ``t``."""
    after_first = np.einsum("aij,j->ai", model.kernels, pi)
    return after_first @ model.observation.T


def joint_two_step(model: TransitionModel, analysis: StationaryAnalysis | None = None) -> np.ndarray:
    """Stationary joint table over two consecutive observations."""
    if analysis is None:
        analysis = stationary(model)
    return two_step_joint(model, analysis.pi)
