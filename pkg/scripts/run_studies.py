"""Run the training studies behind the acceptance suite and write plot-ready CSVs.

Trained sequences are cached under --runs (same layout and defaults the acceptance
tests use), so running this first makes `pytest tests/test_acceptance.py` fast.

    python scripts/run_studies.py --runs runs/acceptance --results results
"""
import argparse
import json
import logging
import os
import time
from pathlib import Path

from oatpulse.env import PhysicsConfig, Scheme, write_atomic
from oatpulse.experiments import (
    SCALING_NS,
    best_of_seeds,
    brute_force_oracle,
    nt_scan,
    robustness_sweep,
    scaling_study,
    write_csv,
)

DEFAULT_RUNS = os.environ.get("OATPULSE_RUNS", "runs/acceptance")


def oracle_study(runs, results, seeds):
    physics = PhysicsConfig(20, n_intervals=8)
    oracle = brute_force_oracle(physics)
    best, all_runs = best_of_seeds(physics, seeds, out=runs)
    rows = [{"seed": r.config.trainer.seed, "qfi": r.qfi, "ratio": r.qfi / oracle.qfi,
             "sequence": r.sequence.as_string()} for r in all_runs]
    rows.append({"seed": "oracle", "qfi": oracle.qfi, "ratio": 1.0, "sequence": oracle.sequence.as_string()})
    write_csv(results / "oracle_n20.csv", rows, ("seed", "qfi", "ratio", "sequence"))
    print(f"oracle N=20: F*={oracle.qfi:.4f}, best trained ratio {best.qfi / oracle.qfi:.4f}")


def scaling(runs, results, ns, seeds):
    out = {}
    for scheme in Scheme:
        t0 = time.time()
        res = scaling_study(ns, scheme, seeds, out=runs)
        write_atomic(results / f"scaling_{scheme.value}.csv", res.to_csv())
        out[scheme.value] = {"qfi_inv": res.qfi_inv_fit, "delta_phi": res.delta_phi_fit}
        a, b = res.delta_phi_fit
        print(f"{scheme.value}: delta_phi = {a:.3f} N^-{b:.3f}   ({time.time() - t0:.0f} s)")
        for r in res.rows:
            print(f"  N={r['n_atoms']:5d}  F/N^2={r['qfi'] / r['n_atoms'] ** 2:.4f}  "
                  f"N*dphi={r['n_atoms'] * r['delta_phi']:.3f}  {r['sequence']}")
    write_atomic(results / "scaling_fits.json", json.dumps(out, indent=2))


def robustness(runs, results, n_train, seeds):
    for scheme in Scheme:
        best, _ = best_of_seeds(PhysicsConfig(n_train, scheme=scheme), seeds, out=runs)
        table = robustness_sweep(best.sequence, provenance=f"{best.config.tag()} {best.sequence.as_string()}")
        write_atomic(results / f"robustness_{scheme.value}_N{n_train}.csv", table.to_csv())
        print(scheme.value, " ".join(f"{r['relative_qfi_loss']:+.3f}" for r in table.rows))


def nt(runs, results, n_atoms, nts, seeds):
    rows = nt_scan(n_atoms, nts, Scheme.ONLY_X, seeds, out=runs)
    write_csv(results / f"nt_scan_N{n_atoms}.csv", rows, ("n_intervals", "qfi", "qfi_over_min", "seed", "sequence"))
    for r in rows:
        print(f"n_t={r['n_intervals']:4d}  F/N^2={r['qfi'] / n_atoms ** 2:.4f}")


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--runs", default=DEFAULT_RUNS)
    p.add_argument("--results", type=Path, default=Path("results"))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--ns", type=int, nargs="+", default=list(SCALING_NS))
    p.add_argument("--nts", type=int, nargs="+", default=[50, 100])
    p.add_argument("--studies", nargs="+", default=["oracle", "scaling", "robustness", "nt"],
                   choices=["oracle", "scaling", "robustness", "nt"])
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    args.results.mkdir(parents=True, exist_ok=True)
    if "oracle" in args.studies:
        oracle_study(args.runs, args.results, args.seeds)
    if "scaling" in args.studies:
        scaling(args.runs, args.results, args.ns, args.seeds)
    if "robustness" in args.studies:
        robustness(args.runs, args.results, 1000, args.seeds)
    if "nt" in args.studies:
        nt(args.runs, args.results, 100, args.nts, args.seeds)


if __name__ == "__main__":
    main()
