"""Command-line interface.

Subcommands: simulate (ad-hoc Monte-Carlo run), figure (published-figure
presets), zeta (threshold table), analyze (closed-form tables),
calibrate-ell, validate (accuracy contract check).  A flat key=value config
file can preload any flag via --config.
"""

from __future__ import annotations

import argparse
import sys

from . import analysis, harness
from .core import ELL_TABLE, derive_config
from .harness import (
    ExperimentSpec,
    calibrate_ell,
    figure_preset,
    run_experiment,
    validate_accuracy,
    write_csv,
)


def _parse_n(text):
    """Parse "1=500,2=1000" or "500,1000" into a tuple in type order."""
    parts = [p for p in text.split(",") if p]
    if "=" in parts[0]:
        items = {}
        for p in parts:
            k, v = p.split("=")
            items[int(k)] = int(v)
        return tuple(items[b] for b in sorted(items))
    return tuple(int(p) for p in parts)


def _add_common(sub):
    sub.add_argument("--T", type=int, default=3)
    sub.add_argument("--eps", type=float, default=0.03)
    sub.add_argument("--delta", type=float, default=0.2)
    sub.add_argument("--D", type=int)
    sub.add_argument("--q", type=float)
    sub.add_argument("--n", type=_parse_n)
    sub.add_argument("--replicates", type=int)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out")
    sub.add_argument("--include-overhead", action="store_true")
    sub.add_argument("--config", help="key=value file preloading any flag")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hetcount",
        description="Per-type active-node cardinality estimation toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="ad-hoc Monte-Carlo run")
    _add_common(sim)
    sim.add_argument("--schemes", default="hsrc1,hsrc2,txsrcs")
    sim.add_argument("--sweep-var", default="none")
    sim.add_argument("--sweep-values", default="0")

    fig = subs.add_parser("figure", help="published-figure preset")
    fig.add_argument("name", choices=["fig7a", "fig7b", "fig8a", "fig8b",
                                      "fig9a", "fig9b", "fig10", "fig11a",
                                      "fig11b"])
    _add_common(fig)

    zet = subs.add_parser("zeta", help="threshold table")
    zet.add_argument("--t-min", type=int, default=2)
    zet.add_argument("--t-max", type=int, default=8)
    zet.add_argument("--ell", type=int, default=3009)

    ana = subs.add_parser("analyze", help="closed-form tables")
    _add_common(ana)
    ana.add_argument("--rough", type=_parse_n)

    cal = subs.add_parser("calibrate-ell", help="calibrate the trial length")
    _add_common(cal)
    cal.add_argument("--n-grid", type=_parse_n, default=(1000, 10000, 50000))

    val = subs.add_parser("validate", help="accuracy-contract check")
    _add_common(val)
    val.add_argument("--scheme", default="hsrc1")
    return parser


def _load_config(argv):
    """Pre-scan for --config and splice its key=value pairs right after the
    subcommand, so explicit flags (parsed later) still win."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    path = argv[i + 1]
    extra = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            extra.extend([f"--{key.strip()}", value.strip()])
    return argv[:2] + extra + argv[2:]


def _print_rows(rows):
    sys.stdout.write(",".join(harness.CSV_COLUMNS) + "\n")
    for r in rows:
        energy = ";".join(f"{e:.6g}" for e in r.energy_mean_per_type)
        vals = [r.sweep_var, f"{r.sweep_value}", r.scheme, str(r.replicates),
                f"{r.mean_slots:.6g}", f"{r.se_slots:.6g}", f"{r.stage1:.6g}",
                f"{r.stage2:.6g}", f"{r.stage3:.6g}", f"{r.bp:.6g}",
                f"{r.acc_rate_min:.6g}", energy]
        sys.stdout.write(",".join(vals) + "\n")


def main(argv=None):
    argv = list(sys.argv if argv is None else ["hetcount"] + list(argv))
    argv = _load_config(argv)
    args = build_parser().parse_args(argv[1:])

    if args.command == "simulate":
        fixed = {"T": args.T, "epsilon": args.eps, "delta": args.delta}
        if args.D is not None:
            fixed["D"] = args.D
        if args.q is not None:
            fixed["q"] = args.q
        if args.n is not None:
            fixed["n"] = args.n
        values = [float(v) for v in args.sweep_values.split(",")]
        spec = ExperimentSpec(
            schemes=args.schemes.split(","), sweep_var=args.sweep_var,
            sweep_values=values, fixed=fixed,
            replicates=args.replicates or 100, seed=args.seed, out=args.out,
            include_overhead=args.include_overhead)
        _print_rows(run_experiment(spec))
    elif args.command == "figure":
        rows = figure_preset(args.name, replicates=args.replicates,
                             seed=args.seed, out=args.out,
                             include_overhead=args.include_overhead)
        _print_rows(rows)
    elif args.command == "zeta":
        sys.stdout.write("T,zeta1,zeta2,n1_star_over_ell\n")
        for T in range(args.t_min, args.t_max + 1):
            z1 = analysis.zeta(T, 1)
            z2 = analysis.zeta(T, 2)
            star = analysis.n1_star(T, args.ell) / args.ell
            sys.stdout.write(f"{T},{z1:.4f},{z2:.4f},{star:.4f}\n")
    elif args.command == "analyze":
        n = args.n or (1000,) * args.T
        rough = args.rough or n
        config = derive_config(args.eps, args.delta,
                               tuple(max(x, 2) for x in n))
        ek, er = analysis.expected_K_R(n, rough, config.ell, args.T)
        lam = analysis.lambda_II(n, rough, config.ell, args.T, config.s_w)
        method, zone = analysis.select_phase2(rough, config.ell, args.T,
                                              config.s_w)
        sys.stdout.write(f"ell={config.ell} EK={ek:.4f} ER={er:.4f} "
                         f"lambda_II={lam:.4f} TRep={args.T * config.ell} "
                         f"phase2={method} zone={zone}\n")
        for b, comp in analysis.expected_energy_3ss(
                n, config, "bb", rough=rough).items():
            sys.stdout.write(
                f"type {b}: tx={comp['tx_slots']:.4f} "
                f"rx={comp['rx_slots']:.4f} idle={comp['idle_slots']:.4f} "
                f"energy={comp['energy']:.4f}\n")
    elif args.command == "calibrate-ell":
        ell = calibrate_ell(args.eps, args.delta, args.n_grid,
                            replicates=args.replicates or 300,
                            seed=args.seed)
        table = ELL_TABLE.get(round(args.eps, 6))
        ref = f" (table: {table})" if table else ""
        sys.stdout.write(f"calibrated ell={ell}{ref}\n")
    elif args.command == "validate":
        n = args.n or (1000,) * args.T
        rates = validate_accuracy(
            args.scheme, [n], {"T": args.T, "epsilon": args.eps,
                               "delta": args.delta},
            replicates=args.replicates or 300, seed=args.seed)
        for b, (rate, (lo, hi)) in sorted(rates.items()):
            sys.stdout.write(
                f"type {b}: rate={rate:.4f} wilson95=({lo:.4f},{hi:.4f})\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
