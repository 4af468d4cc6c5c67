"""Command line: ``catnet gen | run | report``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Set CATNET_LOG_LEVEL (DEBUG, INFO, WARNING, ...) for log verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, SplitSpec, load_config, load_toml
from .dataset import DatasetFormatError, SyntheticSpec, dumps_dataset, generate_synthetic, split_by_group
from .report import MissingArtifact, compare_text, load_run, summary_text, write_report
from .runner import RunDirExists, atomic_write, execute

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("catnet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="catnet", description="Class-incremental learning runs with exemplar rehearsal.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset file and its group manifest")
    g.add_argument("--spec", required=True, help="TOML synthetic spec (with optional [split] section)")
    g.add_argument("--out", required=True, help="dataset path; the manifest goes to <out>.manifest.json")
    g.add_argument("--force", action="store_true", help="overwrite existing outputs")

    r = sub.add_parser("run", help="run an experiment config into a run directory")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True, help="run directory to create")
    r.add_argument("--force", action="store_true", help="replace an existing run directory")

    rep = sub.add_parser("report", help="summarize a run and write figures to <run>/report/")
    rep.add_argument("--run", required=True)
    rep.add_argument("--compare", metavar="RUN2", help="second run for a side-by-side table")
    rep.add_argument("--force", action="store_true", help="replace an existing report directory")
    rep.add_argument("--no-figures", action="store_true", help="skip the matplotlib PNGs")
    return p


def cmd_gen(args) -> int:
    doc = load_toml(args.spec)
    split = SplitSpec.from_dict(doc.pop("split", {}))
    try:
        spec = SyntheticSpec.from_dict(doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{args.spec}: {e}") from None
    out = Path(args.out)
    man_path = out.with_name(out.name + ".manifest.json")
    for p in (out, man_path):
        if p.exists() and not args.force:
            raise FileExistsError(f"{p} already exists (use --force to overwrite)")
    ds = generate_synthetic(spec)
    strata = None
    if split.stratify == "profile":
        prof = spec.profile()
        strata = {g: tuple(prof[g]) for g in range(spec.groups)}
    try:
        manifest = split_by_group(ds, split.fractions, split.seed, strata)
    except ValueError as e:
        raise ConfigError(f"{args.spec}: [split] {e}") from None
    blob = dumps_dataset(ds)
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write(out, blob)
    manifest.save(man_path)
    print(f"{hashlib.sha256(blob).hexdigest()}  {out}  ({len(ds)} samples)")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    doc = execute(cfg, args.out, args.force)
    print(summary_text(doc), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    doc = load_run(args.run)
    print(summary_text(doc), end="")
    write_report(args.run, args.force, figures=not args.no_figures)
    if args.compare:
        print()
        print(compare_text(doc, load_run(args.compare)), end="")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "report": cmd_report}


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CATNET_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileExistsError, RunDirExists) as e:
        print(f"catnet: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingArtifact, FileNotFoundError, DatasetFormatError) as e:
        print(f"catnet: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - exit-code contract for scripts
        log.debug("run failed", exc_info=True)
        print(f"catnet: runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
