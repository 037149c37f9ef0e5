"""Command-line entry point: ``ctfmatch {masks,synth,match,eval,selftest}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from pydantic import ValidationError

from .config import load_config
from .edges import load_gray, load_mask
from .errors import MatchError
from .pipeline import Matcher, evaluate, write_match_outputs
from .synth import make_masks, synth_dataset

log = logging.getLogger("ctfmatch")


def _cmd_masks(args) -> int:
    paths = make_masks(args.out, args.n, args.seed, args.height, args.width)
    log.info("wrote %d masks to %s", len(paths), args.out)
    return 0


def _cmd_synth(args) -> int:
    cfg = load_config(args.config)
    records = synth_dataset(args.masks, args.out, args.n, cfg, args.seed)
    log.info("wrote %d samples and manifest.json to %s", len(records), args.out)
    return 0


def _cmd_match(args) -> int:
    cfg = load_config(args.config)
    template = load_mask(args.template)
    source = load_gray(args.image).data
    result = Matcher(cfg).match(template, source)
    write_match_outputs(args.out, result, source, template)
    print(result.h.to_text(), end="")
    log.info("%d coarse / %d fine matches", len(result.coarse), len(result.fine))
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    report = evaluate(args.manifest, cfg, args.out, workers=args.workers, overlays=not args.no_overlays)
    summary = {"n_samples": len(report.rows), "auc": report.auc,
               "n_failed": sum(r.status != "ok" for r in report.rows)}
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_all

    return 0 if run_all(verbose=True) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctfmatch", description="Coarse-to-fine template matching by homography.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("masks", help="generate synthetic part masks")
    m.add_argument("--out", required=True)
    m.add_argument("--n", type=int, default=8)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--height", type=int, default=480)
    m.add_argument("--width", type=int, default=640)
    m.set_defaults(func=_cmd_masks)

    s = sub.add_parser("synth", help="render a synthetic dataset from masks")
    s.add_argument("--masks", required=True, help="directory of .pgm masks")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", default=None, help="flat JSON config")
    s.set_defaults(func=_cmd_synth)

    mt = sub.add_parser("match", help="match one template against one image")
    mt.add_argument("--template", required=True, help="template mask (.pgm)")
    mt.add_argument("--image", required=True, help="source image (.pgm)")
    mt.add_argument("--config", default=None)
    mt.add_argument("--out", required=True)
    mt.set_defaults(func=_cmd_match)

    e = sub.add_parser("eval", help="evaluate a manifest and write report.json / errors.csv")
    e.add_argument("--manifest", required=True)
    e.add_argument("--config", default=None)
    e.add_argument("--out", required=True)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--no-overlays", action="store_true")
    e.set_defaults(func=_cmd_eval)

    st = sub.add_parser("selftest", help="run the built-in numerical oracle checks")
    st.set_defaults(func=_cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (MatchError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
