"""Run the simulation studies and write one CSV of rates per experiment.

    python3 scripts/reproduce.py size power --replicates 200
    python3 scripts/reproduce.py all --full-scale --workers 8

Desk scale is n = 20000, L = 20; --full-scale switches to n = 100000,
L = 100 and 1000 replicates.
"""

import argparse
import csv
import logging
import time
from dataclasses import replace
from pathlib import Path

from mrrobust.simulation import DgpConfig, ExperimentConfig, direct_effect_vector, generate_dataset, replicate_rng, run_experiment

R_VALUES = (1.0, 4.0, 16.0, 25.0)
BETA0 = tuple(x / 4 for x in range(-8, 9))  # -2 .. 2
ALTERNATIVES = tuple(x / 4 for x in range(-4, 9))


def size_runs(dgp, reps):
    for r in R_VALUES:
        yield f"r={r:g}", ExperimentConfig("size", dgp=replace(dgp, r=r), beta0_grid=BETA0, replicates=reps), None


def power_runs(dgp, reps):
    # data drawn at each alternative, tested against H0: beta = 0 and H0: beta = 1
    for r in R_VALUES:
        for beta in ALTERNATIVES:
            cfg = ExperimentConfig("power", dgp=replace(dgp, r=r, beta=beta), beta0_grid=(0.0, 1.0), replicates=reps)
            yield f"r={r:g};beta={beta:g}", cfg, None


def invalid_runs(dgp, reps):
    alpha = direct_effect_vector(dgp.L, 0.05, 0.5)
    for r in R_VALUES:
        cfg = ExperimentConfig("invalid", dgp=replace(dgp, r=r, alpha_direct=alpha), beta0_grid=BETA0, replicates=reps)
        yield f"r={r:g}", cfg, None


def correlated_runs(dgp, reps):
    base = replace(dgp, r=1.0, corr_bandwidth=1, corr_rho=0.3)
    for rho_hat in (0.0, 0.2, 0.3, 0.4):
        cfg = ExperimentConfig("correlated", dgp=base, beta0_grid=BETA0, replicates=reps, corr_working="banded",
                               corr_working_rho=rho_hat, corr_working_bandwidth=1)
        yield f"rho_hat={rho_hat:g}", cfg, None


def stress_runs(dgp, reps):
    base = generate_dataset(replace(dgp, L=25, r=25.0, beta=0.3), replicate_rng(dgp.seed, 0, stream=99))
    for beta in (0.5, 1.5):
        cfg = ExperimentConfig("stress", dgp=replace(dgp, L=25, beta=beta), K_grid=(0.0, 0.25, 0.5, 0.75, 1.0),
                               replicates=reps)
        yield f"beta_true={beta:g}", cfg, base


EXPERIMENTS = {"size": size_runs, "power": power_runs, "invalid": invalid_runs,
               "correlated": correlated_runs, "stress": stress_runs}


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("experiments", nargs="+", choices=sorted(EXPERIMENTS) + ["all"])
    p.add_argument("--full-scale", action="store_true")
    p.add_argument("--replicates", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=2023)
    p.add_argument("--out", default="results")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    if args.full_scale:
        dgp = DgpConfig(n_outcome=100000, n_exposure=100000, L=100, seed=args.seed)
        reps = args.replicates or 1000
    else:
        dgp = DgpConfig(seed=args.seed)
        reps = args.replicates or 500
    names = sorted(EXPERIMENTS) if "all" in args.experiments else args.experiments
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in names:
        path = out / f"{name}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["setting", "grid_value", "series", "rate", "replicates", "seed"])
            for label, cfg, base in EXPERIMENTS[name](dgp, reps):
                t = time.perf_counter()
                res = run_experiment(cfg, base=base, workers=args.workers)
                for g, series, rate in res.rows():
                    w.writerow([label, g, series, rate, res.replicates, res.seed])
                fh.flush()
                logging.info("%s %s done in %.1f s", name, label, time.perf_counter() - t)
        logging.info("wrote %s", path)


if __name__ == "__main__":
    main()
