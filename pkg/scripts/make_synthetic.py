"""Regenerate the bundled synthetic CSVs under data/.

Each file is one draw from the simulation design with the true covariate
kept in column ``x``, so every CLI workflow can be checked against a known
answer.
"""
import os

from distcox.rng import Stream
from distcox.simulation import DistortionSpec, SimulationConfig, calibrate_tau, generate_dataset

HERE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")

FILES = {
    "synthetic_linear_n400_seed99.csv": SimulationConfig(n=400, seed=99, distortion=DistortionSpec("linear_shift", 3.0)),
    "synthetic_quadratic_n200_seed7.csv": SimulationConfig(n=200, seed=7, distortion=DistortionSpec("quadratic", 1.0)),
}


def main():
    os.makedirs(HERE, exist_ok=True)
    for name, cfg in FILES.items():
        tau = calibrate_tau(cfg)
        generate_dataset(cfg, tau, Stream(cfg.seed, 0)).to_csv(os.path.join(HERE, name))
        print(f"{name}: tau = {tau:.6g}")


if __name__ == "__main__":
    main()
