"""Entropies, mutual informations and count correlations, computed exactly.

All information quantities are in bits.  Quantities indexed by a step
``t`` are evaluated for a run that starts with an empty loop at ``t = 1``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .chain import (
    DEFAULT_CUTOFF,
    BudgetError,
    build_transition,
    count_trajectories,
    iter_branches,
    model_for_steps,
    occupancy_history,
    stationary,
    two_step_joint,
)
from .fock_core import Detector, make_unitary

THRESHOLD_MAX_T = 24
WINDOW_BUDGET = 5_000_000


@dataclass
class MeasureReport:
    name: str
    value: float
    t: int | None = None
    k: int | None = None
    detector: str | None = None
    metadata: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)

    def csv_row(self) -> str:
        meta = json.dumps(self.metadata, sort_keys=True, default=_json_default)
        return ",".join(
            [
                self.name,
                "" if self.t is None else str(self.t),
                "" if self.k is None else str(self.k),
                self.detector or "",
                format_float(self.value),
                '"' + meta.replace('"', '""') + '"',
            ]
        )


CSV_HEADER = "name,t,k,detector,value,metadata_json"


def format_float(value) -> str:
    return f"{float(value):.12g}"


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def write_reports(reports: Iterable[MeasureReport], fh) -> None:
    fh.write(CSV_HEADER + "\n")
    for r in reports:
        fh.write(r.csv_row() + "\n")


def shannon(p) -> float:
    """Shannon entropy in bits, with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float).ravel()
    if (p < -1e-12).any():
        raise ValueError("probabilities must be non-negative")
    total = p.sum()
    if abs(total - 1) > 1e-9:
        raise ValueError(f"probabilities sum to {total}, not 1")
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def _entropy_unchecked(p) -> float:
    p = np.asarray(p, dtype=float).ravel()
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def _row_entropies(P: np.ndarray) -> np.ndarray:
    # entropy of each column of a column-stochastic matrix
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, -P * np.log2(P), 0.0)
    return terms.sum(axis=0)


def _meta(U, **extra):
    meta = {"unitary": make_unitary(U).spec_string()}
    meta.update(extra)
    return meta


def event_distribution(U, detector, t: int) -> np.ndarray:
    """Marginal distribution of the observation at step ``t``."""
    model = model_for_steps(U, detector, t)
    pi = occupancy_history(model, t)[-1]
    return model.observation @ pi


def event_entropy_series(U, detector, t_max: int) -> np.ndarray:
    """``H(x_t)`` for ``t = 1..t_max``."""
    model = model_for_steps(U, detector, t_max)
    pis = occupancy_history(model, t_max)
    return np.array([_entropy_unchecked(model.observation @ pi) for pi in pis])


def event_entropy(U, detector, t: int) -> MeasureReport:
    value = event_entropy_series(U, detector, t)[-1]
    return MeasureReport("H(x_t)", value, t, None, Detector.parse(detector).value, _meta(U))


def conditional_entropy_series(U, detector, t_max: int) -> np.ndarray:
    """``H(x_t | y_{t-1})`` for ``t = 1..t_max``.

    For a PNRD the history fixes the occupancy, so the conditional entropy
    is the occupancy-averaged entropy of the emission columns.  Threshold
    histories are enumerated.
    """
    detector = Detector.parse(detector)
    if detector is Detector.PNRD:
        model = model_for_steps(U, detector, t_max)
        pis = occupancy_history(model, t_max)
        col_h = _row_entropies(model.observation)
        return pis @ col_h
    _check_threshold_t(t_max)
    return np.array([_history_conditional_entropy(U, detector, t) for t in range(1, t_max + 1)])


def _check_threshold_t(t):
    if t > THRESHOLD_MAX_T:
        raise BudgetError(
            f"threshold history enumeration at t={t} (use Monte Carlo beyond t={THRESHOLD_MAX_T})",
            2 ** (t - 1),
            2 ** (THRESHOLD_MAX_T - 1),
        )


def _window_conditional_entropy(model, start: np.ndarray, k: int, budget: int | None = WINDOW_BUDGET):
    """``H(o_next | window)`` for all length-``k`` windows starting from occupancy ``start``.

    Returns ``(conditional_entropy, n_windows)``.
    """
    h_joint = 0.0
    h_window = 0.0
    n = 0
    for _, alpha, _ in iter_branches(model, start, k, budget=budget):
        if not len(alpha):
            continue
        pred = alpha @ model.observation.T
        with np.errstate(divide="ignore", invalid="ignore"):
            h_joint -= np.where(pred > 0, pred * np.log2(pred), 0.0).sum()
            w = pred.sum(axis=1)
            h_window -= np.where(w > 0, w * np.log2(w), 0.0).sum()
        n += len(alpha)
    return h_joint - h_window, n


def _history_conditional_entropy(U, detector, t: int) -> float:
    model = model_for_steps(U, detector, t)
    start = np.zeros(model.size)
    start[0] = 1.0
    return _window_conditional_entropy(model, start, t - 1, budget=None)[0]


def trajectory_entropy(U, detector, t: int) -> MeasureReport:
    """``H(y_t)`` via the chain rule over conditional event entropies."""
    value = float(conditional_entropy_series(U, detector, t).sum())
    return MeasureReport("H(y_t)", value, t, None, Detector.parse(detector).value, _meta(U))


def trajectory_entropy_enumerated(U, detector, t: int) -> float:
    """``H(y_t)`` straight from the probabilities of all histories."""
    model = model_for_steps(U, detector, t)
    start = np.zeros(model.size)
    start[0] = 1.0
    h = 0.0
    for _, alpha, _ in iter_branches(model, start, t):
        h += _entropy_unchecked(alpha.sum(axis=1))
    return h


def iid_reference_entropy(t: int) -> float:
    """``log2((t+1)!)``: history entropy if each outcome were uniform and independent."""
    return math.lgamma(t + 2) / math.log(2)


def _mutual_information(joint: np.ndarray) -> float:
    return (
        _entropy_unchecked(joint.sum(axis=1))
        + _entropy_unchecked(joint.sum(axis=0))
        - _entropy_unchecked(joint)
    )


def event_event_joint(U, detector, t: int) -> np.ndarray:
    """Joint table of ``(x_{t-1}, x_t)``."""
    if t < 2:
        raise ValueError("t must be >= 2")
    model = model_for_steps(U, detector, t)
    pi = occupancy_history(model, t - 1)[-1]
    return two_step_joint(model, pi)


def mi_event_event(U, detector, t: int) -> MeasureReport:
    value = _mutual_information(event_event_joint(U, detector, t))
    return MeasureReport("J(x_t-1:x_t)", value, t, None, Detector.parse(detector).value, _meta(U))


def mi_event_event_stationary(U, detector="pnrd", cutoff: int = DEFAULT_CUTOFF) -> MeasureReport:
    model = build_transition(U, detector, cutoff)
    joint = two_step_joint(model, stationary(model).pi)
    value = _mutual_information(joint)
    return MeasureReport(
        "J(x_t-1:x_t)", value, None, None, model.detector.value, _meta(U, cutoff=cutoff, regime="stationary")
    )


def mi_event_history(U, detector, t: int) -> MeasureReport:
    """``J(y_{t-1} : x_t) = H(x_t) - H(x_t | y_{t-1})``."""
    if t < 2:
        raise ValueError("t must be >= 2")
    detector = Detector.parse(detector)
    h_x = event_entropy_series(U, detector, t)[-1]
    if detector is Detector.PNRD:
        h_cond = conditional_entropy_series(U, detector, t)[-1]
    else:
        _check_threshold_t(t)
        h_cond = _history_conditional_entropy(U, detector, t)
    return MeasureReport(
        "J(y_t-1:x_t)", h_x - h_cond, t, None, detector.value, _meta(U, conditional_entropy=h_cond)
    )


def mi_finite_depth(U, detector, t: int, k: int, budget: int = WINDOW_BUDGET) -> MeasureReport:
    """``J((x_{t-k}, ..., x_{t-1}) : x_t)`` for a window of the ``k`` latest outcomes."""
    if not 1 <= k <= t - 1:
        raise ValueError(f"depth k={k} must lie in 1..{t - 1}")
    detector = Detector.parse(detector)
    model = model_for_steps(U, detector, t)
    start = occupancy_history(model, t - k)[-1]
    h_cond, n_windows = _window_conditional_entropy(model, start, k, budget=budget)
    h_x = _entropy_unchecked(model.observation @ occupancy_history(model, t)[-1])
    return MeasureReport(
        "J(window:x_t)", h_x - h_cond, t, k, detector.value, _meta(U, windows=n_windows)
    )


def pairwise_covariances(U, t: int) -> np.ndarray:
    """``Cov(x_i, x_t)`` for ``i = 1..t-1`` (PNRD photon counts)."""
    model = model_for_steps(U, "pnrd", t)
    pis = occupancy_history(model, t)
    mu = model.mean_count()[: model.size]
    # weighted[m', m] = sum_x x P(x|m) [m' = m + 1 - x]
    weighted = np.einsum("x,xij->ij", np.arange(model.n_obs, dtype=float), model.kernels)
    mean_t = mu @ pis[t - 1]
    cov = np.zeros(t - 1)
    g = mu.copy()  # E[x_t | occupancy entering step i + 1]
    for i in range(t - 1, 0, -1):
        cov[i - 1] = g @ (weighted @ pis[i - 1]) - (mu @ pis[i - 1]) * mean_t
        g = g @ model.transition
    return cov


def correlation_exact(U, t: int, k: int) -> MeasureReport:
    """``C(k) = Cov(x_{t-k} + ... + x_{t-1}, x_t)``."""
    if not 1 <= k <= t - 1:
        raise ValueError(f"depth k={k} must lie in 1..{t - 1}")
    cov = pairwise_covariances(U, t)
    return MeasureReport("C(k)", float(cov[t - 1 - k:].sum()), t, k, "pnrd", _meta(U))


def correlation_stationary_limit(U, cutoff: int = DEFAULT_CUTOFF) -> MeasureReport:
    """Large-``k`` limit ``sum x (m - m') pi(m) pi(m') P(x|m')``."""
    model = build_transition(U, "pnrd", cutoff)
    pi = stationary(model).pi
    m = np.arange(model.size)
    x = np.arange(model.emission.shape[0])
    # sum_{m,m',x} x (m - m') pi(m) pi(m') P(x|m')
    mean_x_given = x @ model.emission
    value = (m @ pi) * (mean_x_given @ pi) - (m * pi) @ mean_x_given
    return MeasureReport("C(inf)", float(value), None, None, "pnrd", _meta(U, cutoff=cutoff))


@dataclass
class QuantumMI:
    value: float
    mixture_entropy: float
    conditional_state_entropy: float
    event_entropy: float
    t: int
    detector: str

    @property
    def discrepancy(self) -> float:
        """Mixture entropy minus ``H(x_t)``."""
        return self.mixture_entropy - self.event_entropy

    def report(self, U) -> MeasureReport:
        return MeasureReport(
            "I(y_t:phi_out)",
            self.value,
            self.t,
            None,
            self.detector,
            _meta(
                U,
                mixture_entropy=self.mixture_entropy,
                conditional_state_entropy=self.conditional_state_entropy,
                event_entropy=self.event_entropy,
                discrepancy=self.discrepancy,
            ),
        )


def quantum_mi(U, detector, t: int) -> QuantumMI:
    """Holevo-type information between the history and the loop state after step ``t``.

    Every conditional loop state is diagonal in the Fock basis, so both von
    Neumann entropies reduce to Shannon entropies of occupancy vectors.
    """
    detector = Detector.parse(detector)
    model = model_for_steps(U, detector, t)
    pis = occupancy_history(model, t + 1)
    first = _entropy_unchecked(pis[t])
    h_x = _entropy_unchecked(model.observation @ pis[t - 1])
    second = 0.0
    if detector is Detector.THRESHOLD:
        _check_threshold_t(t)
        start = pis[0]
        for _, alpha, _ in iter_branches(model, start, t):
            mass = alpha.sum(axis=1)
            post = alpha / mass[:, None]
            second += float(mass @ _row_entropies(post.T))
    return QuantumMI(first - second, first, second, h_x, t, detector.value)


@dataclass
class MemoryBound:
    t: int
    count: int
    bits_per_trajectory: float
    naive_bits_per_trajectory: int

    @property
    def total_bits(self) -> float:
        return self.count * self.bits_per_trajectory

    @property
    def total_kbytes(self) -> float:
        return self.total_bits / 8 / 1000


def memory_bound(U, t: int, detector="pnrd", naive_bits_per_event: int = 2) -> MemoryBound:
    """Trajectory count and Shannon storage bound at step ``t``.

    The naive baseline spends a fixed ``naive_bits_per_event`` per outcome
    (two bits covers a four-symbol alphabet).
    """
    count = count_trajectories(U, t, detector)[-1]
    bits = trajectory_entropy(U, detector, t).value
    return MemoryBound(t, count, bits, naive_bits_per_event * t)


# LZ77 token costs in bits
LZ_WINDOW = 32768
LZ_MIN_MATCH = 3
LZ_MAX_MATCH = LZ_MIN_MATCH + 255
LZ_LITERAL_BITS = 1 + 8
LZ_MATCH_BITS = 1 + 15 + 8
LZ_MAX_CANDIDATES = 256


@dataclass
class LZ77Estimate:
    bits: int
    n_events: int
    literals: int
    matches: int
    header_bits: int = 0

    @property
    def bits_per_event(self) -> float:
        return self.bits / self.n_events if self.n_events else 0.0


def lz77_tokens(data: bytes) -> list[tuple]:
    """Greedy LZ77 parse of ``data`` into ``("lit", byte)`` and ``("match", offset, length)`` tokens.

    Candidate matches come from a hash chain over 3-byte prefixes; at most
    ``LZ_MAX_CANDIDATES`` earlier positions inside the window are tried and
    the longest wins (earliest-found on ties).
    """
    n = len(data)
    heads: dict[bytes, list[int]] = {}
    tokens = []
    i = 0

    def insert(pos):
        if pos + LZ_MIN_MATCH <= n:
            heads.setdefault(data[pos:pos + LZ_MIN_MATCH], []).append(pos)

    while i < n:
        best_len = best_off = 0
        if i + LZ_MIN_MATCH <= n:
            chain = heads.get(data[i:i + LZ_MIN_MATCH], ())
            limit = min(LZ_MAX_MATCH, n - i)
            tried = 0
            for j in reversed(chain):
                if i - j > LZ_WINDOW or tried >= LZ_MAX_CANDIDATES:
                    break
                tried += 1
                length = LZ_MIN_MATCH
                while length < limit and data[j + length] == data[i + length]:
                    length += 1
                if length > best_len:
                    best_len, best_off = length, i - j
                    if length == limit:
                        break
        if best_len >= LZ_MIN_MATCH:
            tokens.append(("match", best_off, best_len))
            for p in range(i, i + best_len):
                insert(p)
            i += best_len
        else:
            tokens.append(("lit", data[i]))
            insert(i)
            i += 1
    return tokens


def lz77_decode(tokens) -> bytes:
    out = bytearray()
    for tok in tokens:
        if tok[0] == "lit":
            out.append(tok[1])
        else:
            _, off, length = tok
            for _ in range(length):
                out.append(out[-off])
    return bytes(out)


def lz77_size(data: bytes) -> tuple[int, int, int]:
    """Coded size of ``data`` in bits, with literal and match counts."""
    tokens = lz77_tokens(data)
    matches = sum(1 for t in tokens if t[0] == "match")
    literals = len(tokens) - matches
    return literals * LZ_LITERAL_BITS + matches * LZ_MATCH_BITS, literals, matches


def lz77_estimate(source) -> LZ77Estimate:
    """LZ77-coded size of the concatenated outcome stream of a trajectory file or sequences."""
    header_bits = 0
    if isinstance(source, (str, os.PathLike)):
        from .io import read_trajectories

        traj = read_trajectories(source)
        header_bits = 8 * len(traj.header_line.encode())
        sequences = traj.trajectories
    else:
        sequences = source
    stream = bytearray()
    for seq in sequences:
        outcomes = seq.outcomes if hasattr(seq, "outcomes") else seq
        stream.extend(int(x) for x in outcomes)
    bits, lit, mat = lz77_size(bytes(stream))
    return LZ77Estimate(bits, len(stream), lit, mat, header_bits)
