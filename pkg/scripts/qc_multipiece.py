"""Dilatation of the recursive polygon map for l saddle pieces as m grows.

Usage: python scripts/qc_multipiece.py [l] [grid] > multi.csv
"""

import csv
import sys

from siegel_lab import qcgeom as qc

l = int(sys.argv[1]) if len(sys.argv) > 1 else 2
grid = int(sys.argv[2]) if len(sys.argv) > 2 else 128
w = csv.writer(sys.stdout, lineterminator="\n")
w.writerow(["m", "l", "max_dilatation", "piece_max_dilatation", "orientation"])
for per in (12, 24, 48):
    m = l * per + 1
    src = qc.make_saddle_partition(m, tuple(range(0, m, per)))
    ev, rep = qc.build_polygon_map(src, qc.linear_partition(m), grid=grid)
    w.writerow([m, l, repr(rep.max_dilatation), repr(rep.piece_max_dilatation),
                rep.orientation_certificate])
    sys.stdout.flush()
