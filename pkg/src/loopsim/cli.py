"""Command-line entry point: ``loopsim <subcommand> [flags]``.

Every subcommand writes one data file (CSV with ``#`` header lines, or
JSON with a ``meta`` block) to ``--out`` or stdout.  Exit status is 0 on
success, 2 on usage errors and 1 on computational errors.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, chain, info, reconstruct, simulate
from .fock_core import NonUnitaryError, amplitude, make_unitary
from .io import format_trajectory_file, read_trajectories

DEFAULTS = {
    "unitary": "5050",
    "detector": "pnrd",
    "steps": None,
    "depth": None,
    "cutoff": chain.DEFAULT_CUTOFF,
    "seed": 0,
    "samples": None,
    "fragments": 10**6,
    "threads": 1,
    "input": None,
    "out": None,
    "timestamp": False,
}

SUBCOMMANDS = {
    "amplitudes": "CSV x,m,re,im,prob of scattering amplitudes for m = 0..steps",
    "evolve": "CSV t,m,prob of the loop occupancy distribution for t = 1..steps",
    "stationary": "JSON with stationary H, conditional entropy, J values, tau_sat and C limits",
    "entropy": "CSV t,H_x,H_y,H_cond,H_iid of event and history entropies",
    "mutual-info": "CSV t,J_event_event,J_event_history for t = 2..steps",
    "finite-depth": "CSV k,J_window,J_event_event,J_event_history at t = steps",
    "correlation": "CSV k,C_exact,C_stationary_limit at t = steps",
    "quantum-mi": "CSV t,I,mixture_entropy,conditional_state_entropy,H_x,discrepancy,J_event_history,H_cond",
    "count": "CSV t,count of nonzero-probability trajectories",
    "memory": "CSV t,count,bits_per_trajectory,total_bits,total_kbytes,naive_bits",
    "compress": "JSON LZ77 size of a trajectory file next to its Shannon bound",
    "sample": "trajectory file with --samples runs of --steps outcomes",
    "ensemble": "CSV t,mean_bits,std_bits,n of H(x_t) over --samples Haar unitaries",
    "estimate-correlation": "CSV k,estimate,stderr,n_samples sampled from a trajectory file",
    "reconstruct": "CSV trajectory,step,x,m_hat,added for each run in a trajectory file",
    "negative-stats": "CSV t,prob_last_negative,count; JSON summary to <out>.json or stderr",
}


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loopsim", description="Loop interferometer simulator and analysis.")
    p.add_argument("--version", action="version", version=f"loopsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name, help_text in SUBCOMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--unitary", help="'5050', 'identity' or 'explicit:re11,im11,...,re22,im22'")
        sp.add_argument("--detector", choices=["pnrd", "threshold"])
        sp.add_argument("--steps", type=int, help="time steps (fragment length for negative-stats)")
        sp.add_argument("--depth", type=int, help="history depth k")
        sp.add_argument("--cutoff", type=int, help="photon-number cutoff for stationary quantities")
        sp.add_argument("--seed", type=int, help="random seed (falls back to $LOOPSIM_SEED)")
        sp.add_argument("--samples", type=int, help="sample or ensemble size")
        sp.add_argument("--fragments", type=int, help="fragment count for negative-stats")
        sp.add_argument("--input", help="input trajectory file")
        sp.add_argument("--out", help="output path (default stdout)")
        sp.add_argument("--threads", type=int, help="worker cap")
        sp.add_argument("--config", help="JSON file of flag values; explicit flags win")
        sp.add_argument("--timestamp", action="store_true", default=None, help="add a timestamp header line")
    return p


def _resolve(ns: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if os.environ.get("LOOPSIM_SEED"):
        try:
            cfg["seed"] = int(os.environ["LOOPSIM_SEED"])
        except ValueError:
            raise UsageError("LOOPSIM_SEED must be an integer") from None
    if ns.config:
        try:
            loaded = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(loaded)
    for key in DEFAULTS:
        val = getattr(ns, key, None)
        if val is not None:
            cfg[key] = val
    cfg["command"] = ns.command
    if cfg["steps"] is None:
        if cfg["command"] == "sample":
            raise UsageError("sample needs --steps")
        cfg["steps"] = 40 if cfg["command"] == "negative-stats" else 12
    try:
        cfg["U"] = make_unitary(cfg["unitary"])
    except ValueError as exc:
        raise UsageError(f"invalid --unitary: {exc}") from None
    for key in ("steps", "cutoff", "fragments", "threads"):
        if cfg[key] is not None and cfg[key] < 1:
            raise UsageError(f"--{key} must be positive")
    if cfg["seed"] < 0 or cfg["seed"] >= 2**64:
        raise UsageError("--seed must be an unsigned 64-bit integer")
    return cfg


def _header(cfg) -> list[str]:
    shown = {k: cfg[k] for k in DEFAULTS if k not in ("out", "timestamp")}
    lines = [
        f"loopsim {__version__} {cfg['command']}",
        "config " + json.dumps(shown, sort_keys=True),
        f"seed={cfg['seed']} generator={simulate.GENERATOR}",
    ]
    if cfg["timestamp"]:
        lines.append("timestamp=" + _dt.datetime.now(_dt.timezone.utc).isoformat())
    return lines


def _csv(cfg, columns, rows) -> str:
    buf = io.StringIO()
    for h in _header(cfg):
        buf.write("# " + h + "\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return info.format_float(v)
    return str(v)


def _json(cfg, payload) -> str:
    meta = {"version": __version__, "command": cfg["command"], "config": {k: cfg[k] for k in DEFAULTS if k not in ("out", "timestamp")},
            "generator": simulate.GENERATOR}
    if cfg["timestamp"]:
        meta["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    return json.dumps({"meta": meta, **_round(payload)}, indent=2) + "\n"


def _round(obj):
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_round(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(info.format_float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _require_input(cfg) -> str:
    if not cfg["input"]:
        raise UsageError(f"{cfg['command']} needs --input")
    return cfg["input"]


def cmd_amplitudes(cfg):
    U = cfg["U"]
    rows = []
    for m in range(cfg["steps"] + 1):
        for x in range(m + 2):
            a = amplitude(x, m, U)
            rows.append((x, m, a.real, a.imag, abs(a) ** 2))
    return _csv(cfg, ["x", "m", "re", "im", "prob"], rows)


def cmd_evolve(cfg):
    model = chain.model_for_steps(cfg["U"], "pnrd", cfg["steps"])
    pis = chain.occupancy_history(model, cfg["steps"])
    rows = [(t, m, pis[t - 1, m]) for t in range(1, cfg["steps"] + 1) for m in range(t)]
    return _csv(cfg, ["t", "m", "prob"], rows)


def cmd_stationary(cfg):
    U, det, cutoff = cfg["U"], cfg["detector"], cfg["cutoff"]
    model = chain.build_transition(U, det, cutoff)
    st = chain.stationary(model)
    p_obs = model.observation @ st.pi
    cond = None
    j_hist = None
    if model.detector.value == "pnrd":
        cond = float(st.pi @ info._row_entropies(model.observation))
        j_hist = info._entropy_unchecked(p_obs) - cond
    joint = chain.two_step_joint(model, st.pi)
    payload = {
        "H": info._entropy_unchecked(p_obs),
        "H_cond": cond,
        "J_event_history": j_hist,
        "J_event_event": info._mutual_information(joint),
        "tau_sat": st.tau_sat,
        "tau_sat_log2": st.tau_sat_log2,
        "lambda_max": st.lambda_max,
        "degenerate": st.degenerate,
        "iterations": st.iterations,
        "residual": float(st.residual),
        "C_stationary_limit": info.correlation_stationary_limit(U, cutoff).value,
        "p_st": _trim(p_obs),
        "pi_st": _trim(st.pi),
    }
    return _json(cfg, payload)


def _trim(p, floor=1e-16):
    nz = np.flatnonzero(p > floor)
    return p[: nz[-1] + 1] if len(nz) else p[:1]


def cmd_entropy(cfg):
    U, det, T = cfg["U"], cfg["detector"], cfg["steps"]
    hx = info.event_entropy_series(U, det, T)
    hc = info.conditional_entropy_series(U, det, T)
    hy = np.cumsum(hc)
    rows = [(t, hx[t - 1], hy[t - 1], hc[t - 1], info.iid_reference_entropy(t)) for t in range(1, T + 1)]
    return _csv(cfg, ["t", "H_x", "H_y", "H_cond", "H_iid"], rows)


def cmd_mutual_info(cfg):
    U, det, T = cfg["U"], cfg["detector"], cfg["steps"]
    hx = info.event_entropy_series(U, det, T)
    hc = info.conditional_entropy_series(U, det, T)
    rows = [(t, info.mi_event_event(U, det, t).value, hx[t - 1] - hc[t - 1]) for t in range(2, T + 1)]
    return _csv(cfg, ["t", "J_event_event", "J_event_history"], rows)


def cmd_finite_depth(cfg):
    U, det, T = cfg["U"], cfg["detector"], cfg["steps"]
    if T < 2:
        raise UsageError("finite-depth needs --steps >= 2")
    ks = [cfg["depth"]] if cfg["depth"] else range(1, T)
    jee = info.mi_event_event(U, det, T).value
    jeh = info.mi_event_history(U, det, T).value
    rows = [(k, info.mi_finite_depth(U, det, T, k).value, jee, jeh) for k in ks]
    return _csv(cfg, ["k", "J_window", "J_event_event", "J_event_history"], rows)


def cmd_correlation(cfg):
    U, T = cfg["U"], cfg["steps"]
    if T < 2:
        raise UsageError("correlation needs --steps >= 2")
    cov = info.pairwise_covariances(U, T)
    limit = info.correlation_stationary_limit(U, cfg["cutoff"]).value
    ks = [cfg["depth"]] if cfg["depth"] else range(1, T)
    rows = [(k, float(cov[T - 1 - k:].sum()), limit) for k in ks]
    return _csv(cfg, ["k", "C_exact", "C_stationary_limit"], rows)


def cmd_quantum_mi(cfg):
    U, det, T = cfg["U"], cfg["detector"], cfg["steps"]
    rows = []
    hc = info.conditional_entropy_series(U, det, T)
    for t in range(1, T + 1):
        q = info.quantum_mi(U, det, t)
        j = q.event_entropy - hc[t - 1]
        rows.append((t, q.value, q.mixture_entropy, q.conditional_state_entropy, q.event_entropy, q.discrepancy, j, hc[t - 1]))
    cols = ["t", "I", "mixture_entropy", "conditional_state_entropy", "H_x", "discrepancy", "J_event_history", "H_cond"]
    return _csv(cfg, cols, rows)


def cmd_count(cfg):
    counts = chain.count_trajectories(cfg["U"], cfg["steps"], cfg["detector"])
    return _csv(cfg, ["t", "count"], list(enumerate(counts, start=1)))


def cmd_memory(cfg):
    U, det, T = cfg["U"], cfg["detector"], cfg["steps"]
    counts = chain.count_trajectories(U, T, det)
    hy = np.cumsum(info.conditional_entropy_series(U, det, T))
    rows = []
    for t in range(1, T + 1):
        mb = info.MemoryBound(t, counts[t - 1], float(hy[t - 1]), 2 * t)
        rows.append((t, mb.count, mb.bits_per_trajectory, mb.total_bits, mb.total_kbytes, mb.naive_bits_per_trajectory))
    return _csv(cfg, ["t", "count", "bits_per_trajectory", "total_bits", "total_kbytes", "naive_bits"], rows)


def cmd_compress(cfg):
    path = _require_input(cfg)
    traj = read_trajectories(path)
    est = info.lz77_estimate(path)
    rate = None
    try:
        U = make_unitary(traj.unitary)
        model = chain.build_transition(U, "pnrd", cfg["cutoff"])
        st = chain.stationary(model)
        if traj.detector.value == "pnrd":
            rate = float(st.pi @ info._row_entropies(model.observation))
    except (ValueError, chain.CutoffError, chain.ConvergenceError):
        pass
    payload = {
        "bits": est.bits,
        "header_bits": est.header_bits,
        "n_events": est.n_events,
        "bits_per_event": est.bits_per_event,
        "literals": est.literals,
        "matches": est.matches,
        "shannon_rate_bits_per_event": rate,
        "shannon_bound_bits": None if rate is None else rate * est.n_events,
    }
    return _json(cfg, payload)


def cmd_sample(cfg):
    n = cfg["samples"] or 1
    runs = [
        simulate.sample_trajectory(cfg["U"], cfg["detector"], cfg["steps"], cfg["seed"], stream=i) for i in range(n)
    ]
    return format_trajectory_file(runs, cfg["detector"], cfg["U"].spec_string(), cfg["seed"], _header(cfg))


def cmd_ensemble(cfg):
    spec = simulate.EnsembleSpec(cfg["samples"] or 1000, cfg["seed"], cfg["steps"], cfg["detector"])
    stats = simulate.ensemble_entropy_stats(spec, threads=cfg["threads"])
    rows = [(t, m, s, stats.n) for t, m, s in zip(stats.t, stats.mean, stats.std)]
    return _csv(cfg, ["t", "mean_bits", "std_bits", "n"], rows)


def cmd_estimate_correlation(cfg):
    path = _require_input(cfg)
    n = cfg["samples"] or 30000
    ks = [cfg["depth"]] if cfg["depth"] else range(1, 40)
    rows = []
    for k in ks:
        est = simulate.estimate_correlation(path, k, n, seed=cfg["seed"])
        rows.append((k, est.value, est.stderr, est.n_samples))
    return _csv(cfg, ["k", "estimate", "stderr", "n_samples"], rows)


def cmd_reconstruct(cfg):
    traj = read_trajectories(_require_input(cfg))
    if traj.detector.value != "pnrd":
        raise UsageError("reconstruct needs a PNRD trajectory file")
    rows = []
    for i, run in enumerate(traj.trajectories):
        res = reconstruct.reconstruct_m(run)
        added = dict(res.corrections)
        for step, m in enumerate(res.m_hat, start=1):
            x = run[step - 1] if step <= len(run) else None
            rows.append((i, step, x, m, added.get(step, 0)))
    return _csv(cfg, ["trajectory", "step", "x", "m_hat", "added"], rows)


def cmd_negative_stats(cfg):
    length = cfg["steps"]
    stats = reconstruct.negative_event_stats(
        cfg["U"], cfg["fragments"], length, seed=cfg["seed"], trajectory_length=cfg["samples"] or 100_000
    )
    rows = [(t, p, c) for t, p, c in zip(stats.steps, stats.probability, stats.counts)]
    summary = _json(cfg, {"max_last_negative_step": stats.max_last_negative_step, "n_fragments": stats.n_fragments,
                          "fragment_length": stats.fragment_length})
    if cfg["out"]:
        Path(str(cfg["out"]) + ".json").write_text(summary)
    else:
        sys.stderr.write(summary)
    return _csv(cfg, ["t", "prob_last_negative", "count"], rows)


COMMANDS = {name: globals()["cmd_" + name.replace("-", "_")] for name in SUBCOMMANDS}


def run(argv=None) -> int:
    parser = _parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _resolve(ns)
        text = COMMANDS[cfg["command"]](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"loopsim: error: {exc}", file=sys.stderr)
        return 2
    except (chain.BudgetError, chain.CutoffError, chain.ConvergenceError, NonUnitaryError, ValueError, OSError) as exc:
        print(f"loopsim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if cfg["out"]:
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
