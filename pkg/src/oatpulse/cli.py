"""Command-line entry point: ``oatpulse <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import experiments as ex
from .a3c import TrainerConfig, greedy_rollout, load_checkpoint, save_checkpoint, train
from .env import PhysicsConfig, PulseSequence, Scheme, run_episode, write_atomic
from .metrology import dicke_distribution, husimi_grid
from .ramsey import ramsey_result, prepare

CSV_HELP = """\
CSV outputs (one header row each):
  train     <tag>.curve.csv     episode,final_qfi,best_so_far
  rollout   rollout.qfi.csv     step,action,qfi
            rollout.dicke.csv   m,probability
            rollout.husimi.csv  theta,phi,q            (with --husimi)
  oracle    oracle.table.csv    sequence,qfi
  ramsey    ramsey.csv          phi0,n_atoms,qfi,qfi_inv_sqrt,mean_jz,var_jz,slope,delta_phi
  sweep     sweep.csv           fraction,n_actual,qfi,qfi_inv_sqrt,delta_phi,relative_qfi_loss
  scaling   scaling_<scheme>.csv n_atoms,qfi,qfi_inv_sqrt,delta_phi,seed,n_pulses,sequence
  nt-scan   nt_scan.csv         n_intervals,qfi,qfi_over_min,seed,sequence
"""

PHYSICS_FLAGS = {"n_atoms": "n_atoms", "chi": "chi", "total_time": "total_time",
                 "n_intervals": "n_intervals", "scheme": "scheme"}
TRAINER_FLAGS = {"seed": "seed", "workers": "workers", "episodes": "episodes"}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run config ({physics: {...}, trainer: {...}, out})")
    p.add_argument("--n-atoms", type=int)
    p.add_argument("--chi", type=float)
    p.add_argument("--total-time", type=float, help="default: optimal squeezing time for N")
    p.add_argument("--n-intervals", type=int)
    p.add_argument("--scheme", choices=[s.value for s in Scheme])
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oatpulse", description=__doc__, epilog=CSV_HELP,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
        _common(p)
        return p

    add("train", "train the actor-critic learner and save sequence, checkpoint and curve")
    p = add("rollout", "greedy rollout of a checkpoint (or replay of a sequence file)")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--sequence", type=Path)
    p.add_argument("--husimi", type=int, nargs=2, metavar=("N_THETA", "N_PHI"))
    p = add("oracle", "exhaustive search over all action strings")
    p.add_argument("--max-sequences", type=int, default=ex.DEFAULT_MAX_SEQUENCES)
    p = add("ramsey", "time-reversal Ramsey sensitivity of a sequence")
    p.add_argument("--sequence", type=Path, required=True)
    p.add_argument("--phi0", type=float, nargs="+", default=[1e-6])
    p = add("sweep", "atom-number robustness sweep of a fixed sequence")
    p.add_argument("--sequence", type=Path, required=True)
    p.add_argument("--fractions", type=float, nargs="+", default=list(ex.DEFAULT_SWEEP_FRACTIONS))
    p = add("scaling", "best-of-seeds training over several N with power-law fits")
    p.add_argument("--ns", type=int, nargs="+", default=list(ex.SCALING_NS))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--no-reuse", action="store_true", help="retrain even if stored results match")
    p = add("nt-scan", "best trained F_Q versus number of intervals")
    p.add_argument("--nts", type=int, nargs="+", default=[10, 20, 30, 50, 75, 100])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--no-reuse", action="store_true")
    return parser


def resolve_config(args) -> ex.RunConfig:
    """Config file first, then flag overrides; physics defaults fill the rest."""
    raw = {"physics": {}, "trainer": dict(ex.STUDY_TRAINER), "out": "runs"}
    if args.config is not None:
        loaded = json.loads(args.config.read_text())
        raw["physics"].update(loaded.get("physics", {}))
        raw["trainer"].update(loaded.get("trainer", {}))
        raw["out"] = loaded.get("out", raw["out"])
    for flag, key in PHYSICS_FLAGS.items():
        if getattr(args, flag, None) is not None:
            raw["physics"][key] = getattr(args, flag)
    for flag, key in TRAINER_FLAGS.items():
        if getattr(args, flag, None) is not None:
            raw["trainer"][key] = getattr(args, flag)
    if args.out is not None:
        raw["out"] = str(args.out)
    if "n_atoms" not in raw["physics"]:
        sequence = getattr(args, "sequence", None)
        if sequence is not None:
            seq = PulseSequence.load(sequence)
            raw["physics"].update(n_atoms=seq.n_atoms, chi=seq.chi, total_time=seq.total_time,
                                  n_intervals=seq.n_intervals, scheme=seq.scheme.value)
        else:
            raise ValueError("--n-atoms is required (or give it in --config)")
    return ex.RunConfig.from_dict(raw)


def _snapshot(cfg: ex.RunConfig, command: str, extra: dict | None = None) -> Path:
    out = Path(cfg.out)
    d = cfg.to_dict()
    d["command"] = command
    d.update(extra or {})
    write_atomic(out / f"{command}.config.json", json.dumps(d, indent=2, default=str))
    return out


def cmd_train(args, cfg):
    out = _snapshot(cfg, "train")
    result = train(cfg.physics, cfg.trainer)
    stem = out / cfg.tag()
    cfg.save(stem.with_suffix(".config.json"))
    result.best_sequence.save(stem.with_suffix(".sequence.json"))
    save_checkpoint(stem.with_suffix(".ckpt.npz"), result.store, cfg.physics.scheme)
    rows = [{"episode": i, "final_qfi": q, "best_so_far": b}
            for i, (q, b) in enumerate(zip(result.log.episode_qfi, result.log.best_so_far))]
    ex.write_csv(stem.with_suffix(".curve.csv"), rows, ("episode", "final_qfi", "best_so_far"))
    return {"best_qfi": result.best_qfi, "best_qfi_over_n2": result.best_qfi / cfg.physics.n_atoms ** 2,
            "sequence": result.best_sequence.as_string(), "wall_clock": result.log.wall_clock,
            "outputs": str(stem) + ".*"}


def cmd_rollout(args, cfg):
    out = _snapshot(cfg, "rollout")
    if args.sequence is not None:
        seq = PulseSequence.load(args.sequence)
        trace = run_episode(seq.physics(), seq.actions)
    elif args.checkpoint is not None:
        store, scheme = load_checkpoint(args.checkpoint)
        if scheme is not cfg.physics.scheme:
            raise ValueError(f"checkpoint was trained for scheme {scheme.value}")
        seq, trace = greedy_rollout(store.actor, cfg.physics)
    else:
        raise ValueError("rollout needs --checkpoint or --sequence")
    seq.save(out / "rollout.sequence.json")
    ex.write_csv(out / "rollout.qfi.csv",
                 [{"step": t, "action": (None if t == 0 else trace.actions[t - 1]), "qfi": q}
                  for t, q in enumerate(trace.qfi_series)], ("step", "action", "qfi"))
    probs = dicke_distribution(trace.final_state)
    ex.write_csv(out / "rollout.dicke.csv", [{"m": m, "probability": p} for m, p in zip(trace.final_state.m, probs)],
                 ("m", "probability"))
    if args.husimi:
        th, ph, q = husimi_grid(trace.final_state, *args.husimi)
        rows = [{"theta": th[i], "phi": ph[j], "q": q[i, j]} for i in range(len(th)) for j in range(len(ph))]
        ex.write_csv(out / "rollout.husimi.csv", rows, ("theta", "phi", "q"))
    return {"final_qfi": trace.final_qfi, "sequence": seq.as_string()}


def cmd_oracle(args, cfg):
    out = _snapshot(cfg, "oracle", {"max_sequences": args.max_sequences})
    res = ex.brute_force_oracle(cfg.physics, args.max_sequences)
    res.sequence.save(out / "oracle.sequence.json")
    ex.write_csv(out / "oracle.table.csv",
                 [{"sequence": "".join(map(str, a)), "qfi": q} for a, q in res.table], ("sequence", "qfi"))
    return {"best_qfi": res.qfi, "sequence": res.sequence.as_string(), "evaluated": res.n_evaluated}


def cmd_ramsey(args, cfg):
    out = _snapshot(cfg, "ramsey", {"sequence": str(args.sequence)})
    seq = PulseSequence.load(args.sequence)
    n = cfg.physics.n_atoms
    psi = prepare(seq, n)
    ev = ex.evaluate_sequence(seq, n)
    rows = []
    for phi0 in args.phi0:
        r = ramsey_result(psi, seq, phi0)
        rows.append({"phi0": phi0, "n_atoms": n, "qfi": ev["qfi"], "qfi_inv_sqrt": ev["qfi_inv_sqrt"],
                     **{k: v for k, v in asdict(r).items() if k != "phi"}})
    columns = ("phi0", "n_atoms", "qfi", "qfi_inv_sqrt", "mean_jz", "var_jz", "slope", "delta_phi")
    ex.write_csv(out / "ramsey.csv", rows, columns)
    return {"delta_phi": rows[0]["delta_phi"], "n_delta_phi": n * rows[0]["delta_phi"]}


def cmd_sweep(args, cfg):
    out = _snapshot(cfg, "sweep", {"sequence": str(args.sequence)})
    seq = PulseSequence.load(args.sequence)
    table = ex.robustness_sweep(seq, args.fractions, provenance=str(args.sequence))
    write_atomic(out / "sweep.csv", table.to_csv())
    return {"n_train": table.n_train, "rows": len(table.rows)}


def cmd_scaling(args, cfg):
    out = _snapshot(cfg, "scaling", {"ns": args.ns, "seeds": args.seeds})
    trainer = {k: v for k, v in asdict(cfg.trainer).items() if k != "seed"}
    res = ex.scaling_study(args.ns, cfg.physics.scheme, args.seeds, cfg.physics.n_intervals, cfg.physics.chi,
                           trainer, str(out), reuse=not args.no_reuse)
    write_atomic(out / f"scaling_{res.scheme.value}.csv", res.to_csv())
    fits = {"qfi_inv": dict(zip(("a", "b"), res.qfi_inv_fit)), "delta_phi": dict(zip(("a", "b"), res.delta_phi_fit))}
    write_atomic(out / f"scaling_{res.scheme.value}.fit.json", json.dumps(fits, indent=2))
    return fits


def cmd_nt_scan(args, cfg):
    out = _snapshot(cfg, "nt-scan", {"nts": args.nts, "seeds": args.seeds})
    trainer = {k: v for k, v in asdict(cfg.trainer).items() if k != "seed"}
    rows = ex.nt_scan(cfg.physics.n_atoms, args.nts, cfg.physics.scheme, args.seeds,
                      cfg.physics.total_time, trainer, str(out), reuse=not args.no_reuse)
    ex.write_csv(out / "nt_scan.csv", rows, ("n_intervals", "qfi", "qfi_over_min", "seed", "sequence"))
    return {str(r["n_intervals"]): r["qfi"] for r in rows}


COMMANDS = {"train": cmd_train, "rollout": cmd_rollout, "oracle": cmd_oracle, "ramsey": cmd_ramsey,
            "sweep": cmd_sweep, "scaling": cmd_scaling, "nt-scan": cmd_nt_scan}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
        summary = COMMANDS[args.command](args, cfg)
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable line
        print(json.dumps({"status": "error", "command": args.command, "type": type(exc).__name__,
                          "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps({"status": "ok", "command": args.command, **summary}, default=_jsonable))
    return 0


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return str(x)


if __name__ == "__main__":
    sys.exit(main())
