"""Command-line entry point: ``cgmcl {train,eval,gradcheck,ablate,synth}``.

Exit codes: 0 success, 1 validation/usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from cgmcl.data import SyntheticSpec, generate_synthetic, write_cohort
from cgmcl.errors import (CGMCLError, ConfigError, DomainError, NumericalError,
                          ReproducibilityError, ValidationError)
from cgmcl.trainkit import exports
from cgmcl.trainkit.config import _build, apply_overrides, load_run_config

log = logging.getLogger("cgmcl")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cgmcl", description="Two-graph multimodal contrastive classifier.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one model and write logs, params and exports")
    t.add_argument("--config", required=True)
    t.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--out", help="output directory (default: output_dir from config)")

    e = sub.add_parser("eval", help="evaluate saved parameters on the test split")
    e.add_argument("--params", required=True)
    e.add_argument("--config", help="run config (default: config.json beside params)")
    e.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    e.add_argument("--out", help="where to write metrics.csv (default: params directory)")

    g = sub.add_parser("gradcheck", help="finite-difference check of every parameter")
    g.add_argument("--h", type=float, default=1e-5)
    g.add_argument("--tol", type=float, default=1e-4)

    a = sub.add_parser("ablate", help="run an ablation grid")
    a.add_argument("--axis", required=True, choices=("beta_sweep", "module", "loss_mode", "k_sweep"))
    a.add_argument("--config", required=True)
    a.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    a.add_argument("--repeats", type=int)
    a.add_argument("--out")

    s = sub.add_parser("synth", help="write a synthetic cohort as CSV files")
    s.add_argument("--spec", required=True)
    s.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--out", required=True)
    return p


def cmd_train(args) -> int:
    from cgmcl.trainkit.train import run_and_export

    run = load_run_config(args.config, args.overrides)
    out = Path(args.out or run.output_dir)
    _, ev = run_and_export(run, out)
    f = ev.fused
    print(f"acc={f.acc:.4f} sen={f.sen:.4f} spe={f.spe:.4f} ppv={f.ppv:.4f} "
          f"npv={f.npv:.4f} auc={f.auc:.4f} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from cgmcl.trainkit.train import evaluate, prepare_cohort

    params_path = Path(args.params)
    config_path = Path(args.config) if args.config else params_path.parent / "config.json"
    run = load_run_config(config_path, args.overrides)
    store = exports.read_params(params_path)
    cohort = prepare_cohort(run)
    ev = evaluate(store, cohort, run.train)
    out = Path(args.out) if args.out else params_path.parent
    out.mkdir(parents=True, exist_ok=True)
    exports.write_metrics(out / "metrics.csv", ev.by_scope())
    f = ev.fused
    print(f"acc={f.acc:.4f} auc={f.auc:.4f} -> {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from cgmcl.fixtures import run_gradient_suite

    reports = run_gradient_suite(h=args.h, tol=args.tol)
    ok = True
    for name, rep in reports.items():
        print(f"[{name}]")
        print(rep.summary())
        ok &= rep.passed
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_ablate(args) -> int:
    from cgmcl.trainkit.train import ablate, prepare_raw_cohort

    run = load_run_config(args.config, args.overrides)
    raw = prepare_raw_cohort(run)
    rows = ablate(raw, run.train, args.axis, args.repeats)
    out = Path(args.out or run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    exports.write_table(out / f"ablation_{args.axis}.csv", rows)
    for row in rows:
        print(f"{row['setting']:<22s} acc={row['acc']:.4f}±{row['acc_std']:.4f} "
              f"auc={row['auc']:.4f}±{row['auc_std']:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"spec file not found: {args.spec}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.spec}: invalid JSON ({exc})") from None
    raw = raw.get("synthetic", raw)
    spec = _build(SyntheticSpec, apply_overrides(raw, args.overrides), "synthetic")
    paths = write_cohort(generate_synthetic(spec), args.out)
    print(" ".join(str(p) for p in paths.values()))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
            "ablate": cmd_ablate, "synth": cmd_synth}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, DomainError, ReproducibilityError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CGMCLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
