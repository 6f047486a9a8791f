"""Run every CLI recipe into one output tree (default ./artifacts)."""

import sys
from pathlib import Path

from siegel_lab.cli import main

RECIPES = {
    "classify_golden": ["classify", "--cf", "1,1,1,...", "--C", "2"],
    "orbit_golden": ["orbit", "--family", "quad", "--alpha", "golden", "--n", "5000",
                     "--K", "2000", "--emit-curve", "--check"],
    "partition_dg": ["partition", "--map", "dg", "--level-max", "10", "--check"],
    "blaschke_dg": ["blaschke", "--map", "dg", "--check"],
    "cells_dg": ["cells", "--map", "dg", "--level-min", "2", "--level-max", "8", "--svg", "--check"],
    "qc_m64": ["qc", "--m", "64", "--pieces", "1", "--svg", "--check"],
    "perturbation": ["experiment", "perturbation", "--alpha", "2,(3,2)", "--N", "4,8,16"],
    "saddle": ["experiment", "saddle", "--a", "20", "--level", "4"],
    "herman": ["experiment", "herman", "--level", "7", "--seed", "1"],
    "growth": ["experiment", "growth", "--check"],
}


def run(root: Path, only=None) -> int:
    worst = 0
    for name, args in RECIPES.items():
        if only and name not in only:
            continue
        print(f"== {name}")
        worst = max(worst, main([*args, "--out", str(root / name)]))
    return worst


if __name__ == "__main__":
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("artifacts")
    sys.exit(run(root, set(sys.argv[2:]) or None))
