"""Monte Carlo check of the limit law for the scalar delay example.

Usage: python scripts/example5_ensemble.py [paths] [seed]
"""
import json
import sys

from volterra_asym.ensemble import EnsembleConfig, verify_ensemble
from volterra_asym.fixtures import get_fixture


def main(paths: int = 10_000, seed: int = 7) -> int:
    fx = get_fixture("example5")
    sd = fx.spectral()
    print(f"alpha={sd.alpha:.12g}  n={sd.n}  gap={sd.gap:.6g}")
    report, _ = verify_ensemble(fx.spec, sd, EnsembleConfig(seed=seed, paths=paths, h=1e-3, T=8.0))
    print(json.dumps(report.checks, indent=2, default=float))
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main(*(int(a) for a in sys.argv[1:3])))
