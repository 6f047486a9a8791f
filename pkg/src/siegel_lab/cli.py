"""Command-line front end: ``siegel-lab <command> [flags]``.

Every command writes its artifacts under ``--out`` and a ``meta.json`` with
the resolved configuration. ``--config file.json`` overrides parsed flags.
With ``--check`` the touched invariants are verified and a failure gives
exit status 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigParse, IoFailure, SiegelLabError

COMMANDS = ("classify", "poly", "orbit", "partition", "blaschke", "cells", "qc", "experiment")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


@dataclass
class RunConfig:
    command: str
    precision_bits: int = 512
    output_dir: str = "out"
    seed: int = 0
    check: bool = False
    svg: bool = False
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigParse(f"unknown command {self.command!r}")
        if self.precision_bits < 64:
            raise ConfigParse("precision_bits must be >= 64")


def threads() -> int:
    raw = os.environ.get("SIEGEL_LAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigParse(f"SIEGEL_LAB_THREADS={raw!r} is not an integer") from None
    return max(n, 1)


class _Run:
    """Artifact sink and check bookkeeping for one command."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.failures: list[str] = []
        self.written: list[str] = []
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise IoFailure(f"cannot create {self.out}: {e}") from e

    @property
    def opts(self) -> dict:
        return self.cfg.options

    def write(self, name: str, text: str) -> None:
        try:
            with open(self.out / name, "w", newline="") as fh:
                fh.write(text)
        except OSError as e:
            raise IoFailure(f"cannot write {name}: {e}") from e
        self.written.append(name)

    def require(self, ok: bool, what: str) -> None:
        if self.cfg.check and not ok:
            self.failures.append(what)

    def say(self, line: str) -> None:
        print(line)


def _rotation(text: str, prec: int):
    from .contfrac import parse_cf
    try:
        return parse_cf(str(text), prec)
    except ValueError as e:
        raise ConfigParse(f"bad continued fraction {text!r}: {e}") from e


# ---------------------------------------------------------------- commands

def _classify(run: _Run) -> None:
    from . import contfrac as cf
    o = run.opts
    r = _rotation(o["cf"], run.cfg.precision_bits)
    depth = o.get("depth") or (len(r.prefix) or 1) + (len(r.period) if r.is_periodic else 0)
    rep = cf.classify(r, o.get("C", 2.0), o.get("bound", 10), depth)
    parts = [f"in Θ_{rep.C:g}" if rep.in_theta_C else f"not in Θ_{rep.C:g} (through depth {depth})"]
    if rep.bounded_type:
        parts.append("bounded type")
    parts.append(f"sup a = {rep.bounded_by}")
    run.say(", ".join(parts))
    run.write("classify.json", json.dumps(asdict(rep), indent=2) + "\n")
    n = min(depth, 40) if r.is_periodic else len(r.prefix)
    if n:
        run.write("convergents.csv", cf.to_csv(r, n))
    if run.cfg.check and n:
        conv = cf.convergents(r, n)
        p0, q0 = 1, 0
        for p, q in conv:
            run.require(abs(p * q0 - p0 * q) == 1, f"convergent determinant at q={q}")
            p0, q0 = p, q


def _parse_points(text: str | None) -> tuple[complex, ...]:
    if not text:
        return ()
    out = []
    try:
        for item in text.split(";"):
            re_, im_ = (float(t) for t in item.split(","))
            out.append(complex(re_, im_))
    except ValueError as e:
        raise ConfigParse(f"bad point list {text!r}; expected 're,im;re,im'") from e
    return tuple(out)


def _poly_from_opts(o: dict, prec: int):
    from . import polyfam
    if o.get("spec"):
        obj = _read_json(o["spec"])
        spec = polyfam.critical_spec_from_json(obj, prec)
    else:
        spec = polyfam.CriticalSpec(_rotation(o.get("alpha", "golden"), prec),
                                    _parse_points(o.get("points")))
    return polyfam.from_critical_points(spec, check=False), spec


def _poly(run: _Run) -> None:
    from . import polyfam
    f, spec = _poly_from_opts(run.opts, run.cfg.precision_bits)
    run.write("polynomial.json", polyfam.dumps(f) + "\n")
    run.say(f"degree {f.degree}, a_d = {f.coefficients[-1]:.12g}")
    if run.cfg.check:
        crit = spec.critical_set
        scale = max(polyfam.derivative_scale(f, c) for c in crit)
        res = max(abs(polyfam.derivative(f, c)) for c in crit) / scale
        run.require(res <= 1e-10, f"f'(c) residual {res:.3e}")
        err = polyfam.match_error(polyfam.critical_points(f), crit)
        run.require(err < 1e-8, f"critical-point round trip {err:.3e}")


def _orbit(run: _Run) -> None:
    from . import orbit, polyfam
    o = run.opts
    prec = run.cfg.precision_bits
    fam = o.get("family", "quad")
    if fam == "quad":
        theta = _rotation(o.get("alpha", "golden"), prec)
        f = polyfam.quadratic(theta)
    elif fam.startswith("poly:"):
        f = polyfam.polynomial_from_json(_read_json(fam[5:]), prec)
        theta = f.alpha
    else:
        raise ConfigParse(f"unknown family {fam!r}")
    K = int(o.get("K", 2000))
    table = orbit.oscillation_table(f, theta, K, int(o.get("bins", 32)))
    run.write("oscillation.csv", orbit.table_to_csv(table))
    n = int(o.get("n", 5000))
    if o.get("emit_curve") or run.cfg.svg:
        curve = orbit.boundary_curve(f, theta, n)
        run.write("curve.svg", orbit.curve_to_svg(curve))
        proxy = orbit.jordan_proxy(curve, 0.05)
        run.say(f"jordan_proxy(0.05) = {proxy!r}")
        run.require(proxy > 0, "boundary samples not separated")
    mins = [b.min_sigma for b in table.nonempty()]
    run.say(f"{len(mins)} nonempty bins, min |sigma| = {min(mins)!r}")
    run.require(all(m > 0 for m in mins), "a bin has min |sigma| = 0")
    if run.cfg.check:
        trip = [(K, K // 2, 0), (K // 2, K // 3, 1)]
        run.require(orbit.telescoping_residual(f, trip) <= 1e-10, "telescoping identity")


def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigParse(f"{path}: {e}") from e


def _circle_model(spec: str, alpha):
    """(handle, Blaschke model or None) for --map rotation|dg|blaschke:<file>."""
    from . import blaschke as bl, circlemap as cm
    if spec == "rotation":
        return cm.rigid(alpha), None
    if spec == "dg":
        B = bl.build_dg()
    elif spec.startswith("blaschke:"):
        B = bl.BlaschkeProduct.from_json(_read_json(spec[9:]))
    else:
        raise ConfigParse(f"unknown map {spec!r}")
    model = bl.tune_rotation(B, alpha).model
    return model.handle(), model


def _partition(run: _Run) -> None:
    from . import circlemap as cm
    o = run.opts
    alpha = _rotation(o.get("alpha", "golden"), run.cfg.precision_bits)
    h, _ = _circle_model(o.get("map", "rotation"), alpha)
    chunks = []
    for n in range(1, int(o.get("level_max", 10)) + 1):
        p = cm.dynamical_partition(h, alpha, n)
        text = p.to_csv()
        chunks.append(text if not chunks else text.split("\n", 1)[1])
        if run.cfg.check:
            rep = cm.closest_return_check(p)
            run.require(rep["adjacency_ok"] and rep["refinement_ok"], f"closest returns at level {n}")
            run.require(abs(p.lengths.sum() - 1) <= 1e-12, f"lengths do not sum to 1 at level {n}")
    run.write("partition.csv", "".join(chunks))
    run.say(f"levels 1..{o.get('level_max', 10)} written")


def _blaschke(run: _Run) -> None:
    from . import blaschke as bl
    o = run.opts
    alpha = _rotation(o.get("alpha", "golden"), run.cfg.precision_bits)
    h, B = _circle_model(o.get("map", "dg"), alpha)
    if B is None:
        B = bl.rotation_family(float(alpha))
    n = int(o.get("n_iter") or 4096)
    conj = bl.boundary_conjugacy(B, alpha, n)
    res = bl.conjugacy_residual(B, conj, alpha)
    run.write("model.json", bl.dumps(B) + "\n")
    run.say(f"t = {B.t!r}, conjugacy residual {res:.3e}")
    run.require(res <= 1e-6, f"conjugacy residual {res:.3e}")
    if run.cfg.check:
        glue = bl.glue_residual(bl.SurgeryModel(B, alpha, conj))
        run.require(glue <= 1e-8, f"surgery glue residual {glue:.3e}")


def _cells(run: _Run) -> None:
    from . import blaschke as bl
    o = run.opts
    alpha = _rotation(o.get("alpha", "golden"), run.cfg.precision_bits)
    h, _ = _circle_model(o.get("map", "dg"), alpha)
    lo = max(int(o.get("level_min") or 2), bl.first_cell_level(alpha, h))
    hi = int(o.get("level_max") or 8)
    cxs = [bl.yoccoz_cells(h, alpha, n) for n in range(lo, hi + 1)]
    run.write("cells.csv", bl.cells_to_csv(cxs))
    if run.cfg.svg:
        run.write("cells.svg", cxs[-1].to_svg())
    areas = [c.y_area for c in cxs]
    run.require(all(b < a for a, b in zip(areas, areas[1:])), "area(Y_n) not decreasing")
    if run.cfg.check:
        for c in cxs:
            t = bl.tiling_report(c)
            run.require(t["valid"] and t["overlap"] <= 1e-9, f"overlap at level {c.level}")
    run.say(f"levels {lo}..{hi}, area(Y) {areas[0]:.6g} -> {areas[-1]:.6g}")


def _qc(run: _Run) -> None:
    import numpy as np
    from . import qcgeom as qc
    o = run.opts
    m, l = int(o.get("m", 64)), int(o.get("pieces", 1))
    grid = int(o.get("grid", 512))
    rng = np.random.default_rng(run.cfg.seed) if float(o.get("C0", 1.0)) > 1 else None
    rows = qc.growth_sweep([m], l, grid=grid, C0=float(o.get("C0", 1.0)), rng=rng)
    r = rows[0]
    run.write("qc.csv", qc.growth_csv(rows))
    run.say(f"m={m} l={l} max_dilatation={r['max_dilatation']!r} "
            f"quotient={r['quotient']!r} orientation={r['orientation_certificate']}")
    run.require(r["orientation_certificate"], "non-positive Jacobian on the grid")
    run.require(r["edge_linearity_residual"] <= 1e-12, "boundary correspondence not linear")
    if run.cfg.svg:
        bp = tuple(range(0, m, (m - 1) // l)) if l > 1 else None
        src = qc.make_saddle_partition(m, bp, C0=float(o.get("C0", 1.0)),
                                       rng=np.random.default_rng(run.cfg.seed) if rng else None)
        run.write("qc.svg", qc.to_svg(qc.build_map(src, qc.linear_partition(m))))


# ---------------------------------------------------------------- experiments

def _exp_perturbation(run: _Run) -> None:
    from . import orbit, polyfam
    o = run.opts
    theta = _rotation(o.get("alpha", "2,(3,2)"), run.cfg.precision_bits)
    Ns = [int(v) for v in str(o.get("N", "4,8,16")).split(",")]
    spec = polyfam.CriticalSpec(theta, _parse_points(o.get("points")))
    rep = orbit.perturbation_experiment(theta, spec, Ns, int(o.get("n") or 5000),
                                        int(o.get("K") or 500), int(o.get("bins") or 32))
    run.write("perturbation.csv", rep.to_csv())
    succ = rep.successive()
    run.say("successive Hausdorff: " + ", ".join(f"{v:.3e}" for v in succ))


def _exp_growth(run: _Run) -> None:
    from . import qcgeom as qc
    o = run.opts
    ms = [int(v) for v in str(o.get("ms", "8,16,32,64,128,256")).split(",")]
    l = int(o.get("pieces", 1))
    grid = int(o.get("grid", 512))
    nthreads = threads()
    if nthreads > 1 and len(ms) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=min(nthreads, len(ms))) as ex:
            parts = list(ex.map(_growth_one, [(m, l, grid) for m in ms]))
        rows = [p[0] for p in parts]
        C = qc.fit_growth(ms, [r["max_dilatation"] for r in rows])
        for r in rows:
            r["fitted_C"] = C
    else:
        rows = qc.growth_sweep(ms, l, grid=grid)
    run.write("growth.csv", qc.growth_csv(rows))
    q = [r["quotient"] for r in rows]
    run.say(f"fitted C = {rows[0]['fitted_C']!r}, quotient spread {max(q) / min(q):.3f}")
    run.require(all(r["orientation_certificate"] for r in rows), "non-positive Jacobian")
    run.require(max(q) / min(q) <= 2.0, "growth quotient not stable within a factor 2")


def _growth_one(args):
    from . import qcgeom as qc
    m, l, grid = args
    return qc.growth_sweep([m], l, grid=grid)


def _exp_saddle(run: _Run) -> None:
    import csv
    import io
    from . import circlemap as cm
    from .contfrac import RotationNumber
    o = run.opts
    big = int(o.get("a", 20))
    n = int(o.get("level", 4))
    alpha = RotationNumber.from_coeffs((1,) * n + (big,), (1,), run.cfg.precision_bits)
    h, _ = _circle_model(o.get("map", "dg"), alpha)
    fit = cm.saddle_node_profile(cm.dynamical_partition(h, alpha, n - 1),
                                 cm.dynamical_partition(h, alpha, n))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "length"])
    for k, v in enumerate(fit.lengths, 1):
        w.writerow([k, repr(float(v))])
    run.write("saddle_lengths.csv", buf.getvalue())
    run.write("saddle_fit.json", json.dumps({"exponent": fit.exponent, "intercept": fit.intercept,
                                             "residual": fit.residual, "m": fit.m}, indent=2) + "\n")
    run.say(f"saddle-node exponent {fit.exponent:.6f} over {fit.m} subintervals")


def _exp_herman(run: _Run) -> None:
    import csv
    import io
    import numpy as np
    from . import circlemap as cm
    o = run.opts
    alpha = _rotation(o.get("alpha", "golden"), run.cfg.precision_bits)
    h, _ = _circle_model(o.get("map", "dg"), alpha)
    level = int(o.get("level", 7))
    p = cm.dynamical_partition(h, alpha, level)
    rng = np.random.default_rng(run.cfg.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["power", "a", "b", "c", "d", "distortion"])
    worst = 0.0
    for q, power in cm.herman_quadruples(p, rng, int(o.get("per_power", 5))):
        d = cm.distortion(*q, h, power)
        worst = max(worst, d, 1 / d)
        w.writerow([power, *(repr(v) for v in q), repr(d)])
    run.write("herman.csv", buf.getvalue())
    run.say(f"max distortion (or its inverse) {worst:.6g} up to power q_{level + 1} = {p.q_next}")
    run.require(np.isfinite(worst), "non-finite distortion")


def _exp_polysweep(run: _Run) -> None:
    import csv
    import io
    import numpy as np
    from . import polyfam
    from .contfrac import RotationNumber
    o = run.opts
    rng = np.random.default_rng(run.cfg.seed)
    alpha = RotationNumber.golden(run.cfg.precision_bits)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "degree", "derivative_residual", "match_error"])
    for i in range(int(o.get("count", 100))):
        d = int(rng.integers(3, int(o.get("max_degree", 6)) + 1))
        spec = polyfam.random_spec(rng, alpha, d)
        f = polyfam.from_critical_points(spec, check=False)
        crit = spec.critical_set
        res = max(abs(polyfam.derivative(f, c)) / polyfam.derivative_scale(f, c) for c in crit)
        err = polyfam.match_error(polyfam.critical_points(f), crit)
        w.writerow([i, d, repr(float(res)), repr(float(err))])
        run.require(res <= 1e-10 and err < 1e-8, f"spec {i} residual {res:.2e} match {err:.2e}")
    run.write("poly_sweep.csv", buf.getvalue())
    run.say(f"{o.get('count', 100)} random specs written")


EXPERIMENTS = {"perturbation": _exp_perturbation, "growth": _exp_growth,
               "saddle": _exp_saddle, "herman": _exp_herman, "poly-sweep": _exp_polysweep}


def _experiment(run: _Run) -> None:
    name = run.opts.get("name")
    if name not in EXPERIMENTS:
        raise ConfigParse(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    EXPERIMENTS[name](run)


HANDLERS = {"classify": _classify, "poly": _poly, "orbit": _orbit, "partition": _partition,
            "blaschke": _blaschke, "cells": _cells, "qc": _qc, "experiment": _experiment}


# ---------------------------------------------------------------- parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--precision-bits", type=int, default=512)
    common.add_argument("--out", default="out")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--check", action="store_true")
    common.add_argument("--svg", action="store_true")
    common.add_argument("--config", help="JSON file whose keys override the flags")

    ap = argparse.ArgumentParser(prog="siegel-lab", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", parents=[common])
    p.add_argument("--cf", required=True, help='"1,2,3", "1,1,1,..." or "2,(3,4)"')
    p.add_argument("--C", type=float, default=2.0)
    p.add_argument("--bound", type=int, default=10)
    p.add_argument("--depth", type=int)

    p = sub.add_parser("poly", parents=[common])
    p.add_argument("--alpha", default="golden")
    p.add_argument("--points", help='extra critical points "re,im;re,im"')
    p.add_argument("--spec", help="critical spec JSON file")

    p = sub.add_parser("orbit", parents=[common])
    p.add_argument("--family", default="quad", help="quad or poly:<file.json>")
    p.add_argument("--alpha", default="golden")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--K", type=int, default=2000)
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--escape", type=float)
    p.add_argument("--emit-curve", action="store_true")

    for name in ("partition", "blaschke", "cells"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--alpha", default="golden")
        p.add_argument("--map", default="rotation" if name == "partition" else "dg",
                       help="rotation, dg or blaschke:<file.json>")
        p.add_argument("--level-max", type=int)
        p.add_argument("--level-min", type=int)
        p.add_argument("--n-iter", type=int)

    p = sub.add_parser("qc", parents=[common])
    p.add_argument("--m", type=int, default=64)
    p.add_argument("--pieces", type=int, default=1)
    p.add_argument("--grid", type=int, default=512)
    p.add_argument("--C0", type=float, default=1.0)

    p = sub.add_parser("experiment", parents=[common])
    p.add_argument("name", help=", ".join(sorted(EXPERIMENTS)))
    p.add_argument("--alpha")
    p.add_argument("--map", default="dg")
    p.add_argument("--N", default="4,8,16")
    p.add_argument("--points")
    p.add_argument("--n", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--ms", default="8,16,32,64,128,256")
    p.add_argument("--pieces", type=int, default=1)
    p.add_argument("--grid", type=int, default=512)
    p.add_argument("--level", type=int)
    p.add_argument("--a", type=int, default=20)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--per-power", type=int, default=5)
    return ap


_TOP = {"precision_bits", "out", "seed", "check", "svg", "config", "command"}


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    vals = vars(ns).copy()
    if vals.get("config"):
        over = _read_json(vals["config"])
        if not isinstance(over, dict):
            raise ConfigParse("config file must hold a JSON object")
        for k, v in over.items():
            vals[k.replace("-", "_")] = v
    opts = {k: v for k, v in vals.items() if k not in _TOP and v is not None}
    try:
        return RunConfig(command=vals["command"], precision_bits=int(vals["precision_bits"]),
                         output_dir=str(vals["out"]), seed=int(vals["seed"]),
                         check=bool(vals["check"]), svg=bool(vals["svg"]), options=opts)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigParse):
            raise
        raise ConfigParse(str(e)) from e


def run(cfg: RunConfig) -> int:
    r = _Run(cfg)
    HANDLERS[cfg.command](r)
    meta = {"command": cfg.command, "precision_bits": cfg.precision_bits, "seed": cfg.seed,
            "generator": "numpy.random.default_rng (PCG64)", "check": cfg.check,
            "options": cfg.options, "artifacts": sorted(r.written)}
    r.write("meta.json", json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    for f in r.failures:
        print(f"CHECK FAILED: {f}", file=sys.stderr)
    return 1 if r.failures else 0


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        n = threads()
        for var in _THREAD_VARS:
            os.environ.setdefault(var, str(n))
        return run(config_from_args(ns))
    except SiegelLabError as e:
        print(f"siegel-lab: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
