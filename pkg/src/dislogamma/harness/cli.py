"""Command-line entry point: ``dislogamma <subcommand> [--config ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from ..errors import DomainError, InfeasibleError, NonConvergence, ResolutionError
from .config import ExperimentConfig
from .experiments import RESULT_HEADER, run
from .io import write_csv, write_json, write_long

log = logging.getLogger("dislogamma")

SUBCOMMANDS = {
    "convergence": "energy convergence along an n ladder against the continuum reference",
    "reg-compare": "spread between regularizer families along an n ladder",
    "gamma-regime": "gamma_n under power and exponential delta schedules",
    "kernel-verify": "certify kernel identities; exits non-zero on any failure",
    "relax-demo": "relaxed-energy solver on the bundled cases",
}


def _parser():
    p = argparse.ArgumentParser(prog="dislogamma", description="Regularised dislocation energy experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in SUBCOMMANDS.items():
        s = sub.add_parser(name, help=help_, description=help_)
        s.add_argument("--config", type=Path, help="JSON configuration (merged over the defaults)")
        s.add_argument("--out", type=Path, help="output directory (default: out/<subcommand>)")
        s.add_argument("--seed", type=int, help="override the configuration seed")
        s.add_argument("--threads", type=int, help="worker threads for ladder steps")
        s.add_argument("--tolerance", type=float, help="override the pass/fail tolerance")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "kernel-verify":
            s.add_argument("--negative-control", action="store_true",
                           help="run the battery on a deliberately perturbed kernel (must fail)")
            s.add_argument("--quick", action="store_true", help="skip the slow regularized-kernel checks")
    return p


def build_config(args):
    kind = args.command.replace("-", "_")
    raw = {}
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        if raw.get("kind", kind).replace("-", "_") != kind:
            raise DomainError(f"configuration kind {raw['kind']!r} does not match subcommand {args.command!r}")
        raw.pop("kind", None)
    for key in ("seed", "threads", "tolerance"):
        v = getattr(args, key)
        if v is not None:
            raw[key] = v
    raw["out"] = str(args.out if args.out is not None else Path("out") / kind)
    extras = raw.setdefault("extras", {})
    if getattr(args, "negative_control", False):
        extras["negative_control"] = True
    if getattr(args, "quick", False):
        extras["full"] = False
    return ExperimentConfig.from_dict(raw, kind)


def write_outputs(cfg, bundle):
    """Results CSV, summary JSON, long CSV, timings, config snapshot, figures."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash
    paths = [write_json(out / "config.json", {"config": cfg.hashed_dict(), "config_hash": h})]
    if bundle.rows:
        paths.append(write_csv(out / "results.csv", RESULT_HEADER, [r.as_dict() for r in bundle.rows]))
        # timings vary run to run, so they live apart from the deterministic results
        paths.append(write_csv(out / "timings.csv", ("experiment", "series", "n", "wall_time", "config_hash"),
                               [r.as_dict() for r in bundle.rows]))
    paths.append(write_json(out / "summary.json", bundle.summary))
    paths.append(write_csv(out / "long.csv", ("experiment", "n", "series", "value", "config_hash"),
                           [tuple(r) + (h,) for r in bundle.long]))
    for name, art in bundle.artifacts.items():
        if name.endswith(".json"):
            paths.append(write_json(out / name, dict(art, config_hash=h)))
        elif name.endswith(".csv"):
            header, *rows = art
            paths.append(write_csv(out / name, tuple(header) + ("config_hash",), [tuple(r) + (h,) for r in rows]))
    from .plots import plot_bundle
    paths += plot_bundle(cfg.kind, bundle, out / "figures")
    return paths


def _report(cfg, bundle):
    s = bundle.summary
    if cfg.kind == "kernel_verify":
        for c in s["checks"]:
            print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']:<40s} err={c['worst_error']:.3e} "
                  f"tol={c['tolerance']:.1e}")
    elif cfg.kind == "gamma_regime":
        for lab, v in s["schedules"].items():
            print(f"{lab}: slope={v['log_log_slope']} min_gamma={v['min_gamma']:.4g} "
                  f"bounded_below={v['bounded_below']} outside_regime={v['outside_regime']}")
    elif cfg.kind == "relax_demo":
        for name, c in s["cases"].items():
            print(f"{'PASS' if c['pass'] else 'FAIL'}  {name}: {c.get('value', c.get('violated'))}")
    else:
        print(json.dumps({k: v for k, v in s.items() if k != "regime"}, indent=1, default=str))
    print(f"config_hash={cfg.config_hash} out={cfg.out}")


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        t0 = time.perf_counter()
        bundle = run(cfg)
        log.info("%s finished in %.2f s", cfg.kind, time.perf_counter() - t0)
        write_outputs(cfg, bundle)
    except (DomainError, ResolutionError, InfeasibleError, NonConvergence) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    _report(cfg, bundle)
    return bundle.exit_code


if __name__ == "__main__":
    sys.exit(main())
