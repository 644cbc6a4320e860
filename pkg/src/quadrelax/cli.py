"""Instance generation, batch metrics, and the command-line entry point.

Three subcommands: ``solve`` runs branch-and-bound on one instance file,
``gen`` writes a reproducible pseudo-random instance, and ``batch`` walks
a manifest of instances, records per-method root bounds (and optionally
full searches) and emits a CSV report with a shifted-geomean aggregate
row.  Everything here is deterministic except wall-clock columns.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import bnb
from .linalg import min_eigenvalue
from .model import MiqpInstance, VariableDomain, load_instance, save_instance
from .relax import (
    cutting_surface,
    initial_perturbation,
    select_alpha,
    solve_eigenvalue_relaxation,
)

__all__ = [
    "MetricsRow",
    "generate_instance",
    "main",
    "relative_gap",
    "root_gap",
    "run_batch",
    "shifted_geomean",
]

FAMILIES = ("boxqp", "binary_card", "eq_integer")


# ---------------------------------------------------------------------------
# Metric formulas


def root_gap(mu_sdp: float, mu_qcp: float, mu_qp: float) -> float:
    """Percent of the SDP-over-QP bound improvement the QCP achieves.

    100 * (mu_sdp - mu_qcp) / (mu_sdp - mu_qp); the reference bound must
    exceed the QP bound by more than 1e-9 or the gap is undefined.
    """
    den = mu_sdp - mu_qp
    if den <= 1e-9:
        raise ValueError("reference bound does not exceed the QP bound")
    return 100.0 * (mu_sdp - mu_qcp) / den


def relative_gap(lower: float, upper: float) -> float:
    """Termination gap in percent, denominator floored at 1e-3."""
    if not (np.isfinite(lower) and np.isfinite(upper)):
        raise ValueError("both bounds must be finite")
    return 100.0 * (upper - lower) / max(abs(lower), 1e-3)


def shifted_geomean(values, shift: float) -> float:
    """exp(mean(log(v + shift))) - shift over nonnegative values."""
    vals = np.asarray(list(values), dtype=float)
    if vals.size == 0:
        raise ValueError("empty value list")
    if shift <= 0:
        raise ValueError("shift must be positive")
    if np.any(vals < 0):
        raise ValueError("values must be nonnegative")
    return float(np.exp(np.mean(np.log(vals + shift))) - shift)


# ---------------------------------------------------------------------------
# Instance generation


def generate_instance(family: str, n: int, density: float,
                      seed: int) -> MiqpInstance:
    """Reproducible pseudo-random instance of one of three families.

    boxqp: unconstrained over [0,1] intervals.  binary_card: binaries with
    the single cardinality row sum(x) = n//2.  eq_integer: integer ranges
    [-3,3] with max(1, n//4) random equality rows anchored at a random
    admissible point, so the instance is always feasible.  Q is symmetric
    with approximately the requested fraction of nonzero entries, drawn
    uniformly from [-50, 50].
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; pick from {FAMILIES}")
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n)
    vals = rng.uniform(-50.0, 50.0, iu[0].size)
    mask = rng.random(iu[0].size) < density
    Q = np.zeros((n, n))
    Q[iu] = np.where(mask, vals, 0.0)
    Q = Q + np.triu(Q, 1).T
    q = rng.uniform(-10.0, 10.0, n)
    if family == "boxqp":
        doms = [VariableDomain("interval", 0.0, 1.0) for _ in range(n)]
        A = b = None
    elif family == "binary_card":
        doms = [VariableDomain("binary", 0.0, 1.0) for _ in range(n)]
        A = np.ones((1, n))
        b = np.array([float(max(1, n // 2))])
    else:
        doms = [VariableDomain("integer_range", -3.0, 3.0) for _ in range(n)]
        m = max(1, n // 4)
        A = rng.uniform(-2.0, 2.0, (m, n))
        x0 = rng.integers(-3, 4, n).astype(float)
        b = A @ x0
    return MiqpInstance.from_arrays(Q, q, A, b, doms)


# ---------------------------------------------------------------------------
# Batch runs


@dataclass
class MetricsRow:
    """One CSV line: root bounds per method plus optional search stats."""

    instance: str
    n: int | None = None
    m: int | None = None
    eig: float | None = None
    eigns: float | None = None
    qcp_smooth: float | None = None
    qcp_nonsmooth: float | None = None
    sdp: float | None = None
    root_gap_smooth: float | None = None
    root_gap_nonsmooth: float | None = None
    lower: float | None = None
    upper: float | None = None
    rel_gap: float | None = None
    nodes: int | None = None
    peak_nodes: int | None = None
    time_s: float | None = None
    status: str = ""
    error: str = ""


CSV_COLUMNS = [f.name for f in fields(MetricsRow)]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _root_bounds(inst: MiqpInstance, row: MetricsRow, max_nc: int) -> None:
    """Fill the four root-relaxation bounds (and gaps when SDP is given)."""
    sel = select_alpha(inst)
    mu_plain = max(0.0, -min_eigenvalue(inst.Q))
    row.eig = solve_eigenvalue_relaxation(inst, mu_plain).value
    row.eigns = solve_eigenvalue_relaxation(inst, max(0.0, sel.mu)).value
    if initial_perturbation(inst, sel.alpha) is None:
        # convex on the nullspace: every root relaxation collapses to the
        # continuous solve, and there is no cut loop to run
        row.qcp_smooth = row.qcp_nonsmooth = row.eigns
        return
    row.qcp_smooth = cutting_surface(inst, sel.alpha, max_cuts=max_nc,
                                     mode="smooth").bound
    row.qcp_nonsmooth = cutting_surface(inst, sel.alpha, max_cuts=max_nc,
                                        mode="nonsmooth").bound
    if row.sdp is not None and row.sdp > row.eigns + 1e-9:
        row.root_gap_smooth = root_gap(row.sdp, row.qcp_smooth, row.eigns)
        row.root_gap_nonsmooth = root_gap(row.sdp, row.qcp_nonsmooth,
                                          row.eigns)


def _aggregate(rows: list) -> MetricsRow:
    agg = MetricsRow(instance="geomean")

    def collect(name, shift):
        vals = [getattr(r, name) for r in rows]
        vals = [v for v in vals if v is not None and v >= 0]
        return shifted_geomean(vals, shift) if vals else None

    agg.root_gap_smooth = collect("root_gap_smooth", 1.0)
    agg.root_gap_nonsmooth = collect("root_gap_nonsmooth", 1.0)
    agg.rel_gap = collect("rel_gap", 1.0)
    agg.nodes = collect("nodes", 10.0)
    agg.peak_nodes = collect("peak_nodes", 10.0)
    agg.time_s = collect("time_s", 1.0)
    return agg


def run_batch(manifest_path: str, out_path: str, with_bnb: bool = False,
              max_nc: int = 20, time_limit: float = 60.0) -> list:
    """Run every manifest instance and write the CSV report.

    The manifest is JSON: {"instances": [{"path": ..., "sdp_bound": ...},
    ...]} with paths resolved relative to the manifest file.  Per-instance
    failures land in the error column and the batch continues.  Returns
    the data rows (aggregate excluded).
    """
    import json

    with open(manifest_path) as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(manifest_path))
    rows = []
    for item in manifest["instances"]:
        path = item["path"]
        full = path if os.path.isabs(path) else os.path.join(base, path)
        row = MetricsRow(instance=path, sdp=item.get("sdp_bound"))
        rows.append(row)
        try:
            inst = load_instance(full)
            row.n, row.m = inst.n, inst.m
            _root_bounds(inst, row, max_nc)
            if with_bnb:
                rep = bnb.solve(inst, bnb.BnbConfig(time_limit=time_limit,
                                                    max_nc=max_nc))
                row.status = rep.status
                row.nodes = rep.node_count
                row.peak_nodes = rep.max_stored
                row.time_s = rep.wall_time
                if np.isfinite(rep.lower_bound) and np.isfinite(rep.upper_bound):
                    row.lower, row.upper = rep.lower_bound, rep.upper_bound
                    row.rel_gap = relative_gap(rep.lower_bound,
                                               rep.upper_bound)
        except Exception as exc:  # noqa: BLE001 - batch must continue
            row.error = str(exc)
    out_rows = rows + [_aggregate(rows)]
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in out_rows:
            writer.writerow([_fmt(getattr(row, c)) for c in CSV_COLUMNS])
    return rows


# ---------------------------------------------------------------------------
# Entry point


def _cmd_solve(args) -> int:
    inst = load_instance(args.file)
    cfg = bnb.BnbConfig(time_limit=args.time_limit, rel_tol=args.rel_tol,
                        max_nc=args.maxnc, sep_mode=args.sep)
    rep = bnb.solve(inst, cfg)
    print(f"status        {rep.status}")
    print(f"lower bound   {_fmt(rep.lower_bound)}")
    print(f"upper bound   {_fmt(rep.upper_bound)}")
    print(f"relative gap  {_fmt(rep.relative_gap)}%")
    if rep.root_bound is not None:
        print(f"root bound    {_fmt(rep.root_bound)} ({rep.root_cuts} cuts)")
    print(f"nodes         {rep.node_count} (peak stored {rep.max_stored})")
    print(f"time          {rep.wall_time:.3f} s")
    if rep.best_point is not None:
        point = " ".join(_fmt(float(v)) for v in rep.best_point)
        print(f"best point    {point}")
    return 0 if rep.status in ("optimal", "infeasible") else 1


def _cmd_gen(args) -> int:
    inst = generate_instance(args.family, args.n, args.density, args.seed)
    save_instance(inst, args.output)
    print(f"wrote {args.family} n={args.n} density={args.density} "
          f"seed={args.seed} -> {args.output}")
    return 0


def _cmd_batch(args) -> int:
    rows = run_batch(args.manifest, args.output, with_bnb=args.bnb,
                     max_nc=args.maxnc, time_limit=args.time_limit)
    failed = sum(1 for r in rows if r.error)
    print(f"wrote {args.output}: {len(rows)} instances, {failed} failed")
    return 0 if failed == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="quadrelax",
        description="Global solver for bounded mixed-integer QPs via "
                    "diagonal-perturbation relaxations")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="branch-and-bound on one instance file")
    p.add_argument("file")
    p.add_argument("--time-limit", type=float, default=None, metavar="S")
    p.add_argument("--rel-tol", type=float, default=1e-6, metavar="T")
    p.add_argument("--maxnc", type=int, default=20, metavar="K")
    p.add_argument("--sep", choices=("smooth", "nonsmooth"), default="smooth")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("gen", help="write a pseudo-random instance file")
    p.add_argument("family", choices=FAMILIES)
    p.add_argument("n", type=int)
    p.add_argument("density", type=float)
    p.add_argument("seed", type=int)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("batch", help="run a manifest and write a CSV report")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--bnb", action="store_true",
                   help="also run the full search per instance")
    p.add_argument("--maxnc", type=int, default=20, metavar="K")
    p.add_argument("--time-limit", type=float, default=60.0, metavar="S")
    p.set_defaults(func=_cmd_batch)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
