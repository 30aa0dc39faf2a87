"""Command line entry point.

Exit codes: 0 when every check passes, 1 when an inequality check
fails, 2 for unusable input (bad configuration, weight spec or run dir).
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .battery import lemma_battery
from .experiments import ConfigError, load_config, make_weight, read_run, reports_to_csv, run, write_run
from .grid import GridError, GridSpec
from .weights import a1_constant, ainf_fujii, ap_constant, reverse_holder_probe

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def parse_weight_spec(text: str) -> dict:
    """power:A[:EPS] | step:V1,V2,... | martingale:SEED:LEVELS:JUMP | const:C"""
    kind, _, rest = text.partition(":")
    args = rest.split(":") if rest else []
    try:
        if kind == "power" and len(args) in (1, 2):
            d = {"kind": "power", "a": float(args[0])}
            if len(args) == 2:
                d["eps"] = float(args[1])
            return d
        if kind == "step" and len(args) == 1:
            return {"kind": "step", "values": [float(x) for x in args[0].split(",")]}
        if kind == "martingale" and len(args) == 3:
            return {"kind": "martingale", "seed": int(args[0]), "levels": int(args[1]), "jump": float(args[2])}
        if kind == "const" and len(args) <= 1:
            return {"kind": "const", "c": float(args[0]) if args else 1.0}
    except ValueError as exc:
        raise ConfigError(f"bad weight spec {text!r}: {exc}") from None
    raise ConfigError(f"bad weight spec {text!r}; expected power:A[:EPS], step:V1,V2,..., "
                      "martingale:SEED:LEVELS:JUMP or const:C")


def cmd_constants(ns) -> int:
    spec = GridSpec(ns.n, ns.L)
    w = make_weight(spec, parse_weight_spec(ns.weight))
    fam = "base" if ns.family == "base" else "all-shifted"
    out = {
        "A1": a1_constant(w, fam).to_json(),
        "AinfFW": ainf_fujii(w, fam).to_json(),
        f"A{ns.p:g}": ap_constant(w, ns.p, fam).to_json(),
    }
    probe = reverse_holder_probe(w, 1.0, fam)
    out["reverse_holder"] = {"tau_min": probe.tau_min, "at_bound": probe.at_bound}
    print(json.dumps(out, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_lemma_battery(ns) -> int:
    results = lemma_battery(ns.seed, ns.level, full=ns.full)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_endpoint(ns) -> int:
    cfg = load_config(ns.config)
    reports = run(cfg)
    if ns.out:
        write_run(reports, ns.out)
    sys.stdout.write(reports_to_csv(reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_report(ns) -> int:
    try:
        reports = read_run(ns.run_dir)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read run directory {ns.run_dir!r}: {exc}") from None
    if ns.csv:
        sys.stdout.write(reports_to_csv(reports))
    else:
        for r in reports:
            status = "pass" if r.passed else "FAIL"
            failed = [k for k, ok in r.checks.items() if not ok]
            extra = f" failed checks: {', '.join(failed)}" if failed else ""
            print(f"{r.scenario_id}: {status} measured {r.measured:.6g} <= "
                  f"{r.c_used:.6g} x {r.theoretical:.6g}{extra}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparsemix", description="Mixed weak-type experiments for sparse operators.")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("constants", help="weight constants of a generated weight")
    c.add_argument("weight", help="power:A[:EPS] | step:V1,V2,... | martingale:SEED:LEVELS:JUMP | const:C")
    c.add_argument("--family", choices=["base", "all-shifted"], default="base")
    c.add_argument("--n", type=int, default=1)
    c.add_argument("--L", type=int, default=8)
    c.add_argument("--p", type=float, default=2.0)
    c.set_defaults(fn=cmd_constants)

    b = sub.add_parser("lemma-battery", help="seeded lemma suites")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--level", type=int, default=None)
    b.add_argument("--full", action="store_true", help="acceptance-size instance counts")
    b.set_defaults(fn=cmd_lemma_battery)

    e = sub.add_parser("endpoint", help="run a scenario configuration and print the CSV")
    e.add_argument("config")
    e.add_argument("--out", help="write reports.json and bounds.csv to this directory")
    e.set_defaults(fn=cmd_endpoint)

    r = sub.add_parser("report", help="summarise a run directory")
    r.add_argument("run_dir")
    r.add_argument("--csv", action="store_true")
    r.set_defaults(fn=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return ns.fn(ns)
    except (ConfigError, GridError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
