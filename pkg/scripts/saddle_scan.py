"""Saddle-node exponent of the Douady-Ghys model against the spike coefficient.

Usage: python scripts/saddle_scan.py [level] > scan.csv
"""

import csv
import sys

from siegel_lab import blaschke as bl, circlemap as cm
from siegel_lab.contfrac import RotationNumber

level = int(sys.argv[1]) if len(sys.argv) > 1 else 4
w = csv.writer(sys.stdout, lineterminator="\n")
w.writerow(["a", "level", "pieces", "exponent", "residual"])
for a in (5, 10, 20, 40, 80):
    alpha = RotationNumber.from_coeffs((1,) * level + (a,), (1,))
    h = bl.tune_rotation(bl.build_dg(), alpha).model.handle()
    fit = cm.saddle_node_profile(cm.dynamical_partition(h, alpha, level - 1),
                                 cm.dynamical_partition(h, alpha, level))
    w.writerow([a, level, fit.m, repr(fit.exponent), repr(fit.residual)])
