"""Command-line interface.

Exit codes: 0 success (or verification match), 1 verification non-match,
2 usage or runtime error.
"""
import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as C
from . import evaluation as E
from .dataset import build_splits, make_verification_pairs, read_splits, write_splits
from .errors import IdsrError
from .image import read_pgm, write_pgm
from .losses import LOSS_KINDS
from .networks import super_resolve
from .training import (load_frozen_extractor, load_generator, save_checkpoint, train_extractor,
                       train_generator)

EXIT_OK, EXIT_NO_MATCH, EXIT_ERROR = 0, 1, 2
DATA_CONFIG = "config.txt"

log = logging.getLogger("idsr")


def _config(args):
    """Explicit --config wins; otherwise the config saved next to the data."""
    path = getattr(args, "config", None)
    if path is None and getattr(args, "data", None):
        saved = os.path.join(args.data, DATA_CONFIG)
        path = saved if os.path.exists(saved) else None
    return C.load(path) if path else C.RunConfig()


def cmd_gen_data(args):
    cfg = replace(_config(args), n_identities=args.ids, samples_per_id=args.per_id, seed=args.seed).validate()
    train, test = build_splits(cfg.n_identities, cfg.samples_per_id, cfg.train_fraction, cfg.seed,
                               cfg.render_settings())
    write_splits(args.out, train, test)
    C.save(os.path.join(args.out, DATA_CONFIG), cfg)
    print(f"wrote {len(train)} train and {len(test)} test samples to {args.out}")
    return EXIT_OK


def cmd_train_extractor(args):
    cfg = _config(args)
    train, _ = read_splits(args.data)
    ext_cfg = cfg.extractor_config(n_classes=len({s.y for s in train}))
    ext_cfg = replace(ext_cfg, input_size=train[0].x_H.shape[0])
    f, history = train_extractor(train, ext_cfg, cfg.extractor_train_config())
    save_checkpoint(args.out, f)
    if args.history:
        history.to_csv(args.history)
    print(f"training accuracy {history.rows[-1]['accuracy']:.4f}; saved {args.out}")
    return EXIT_OK


def cmd_train_sr(args):
    cfg = _config(args)
    train, _ = read_splits(args.data)
    f = load_frozen_extractor(args.extractor)
    gen_cfg = replace(cfg.generator_config(), scale=train[0].x_H.shape[0] // train[0].x_L.shape[0],
                      input_size=train[0].x_L.shape[0])
    G, history = train_generator(train, f, gen_cfg, cfg.generator_train_config(args.loss))
    save_checkpoint(args.out, G, extra={"loss": args.loss})
    if args.history:
        history.to_csv(args.history)
    row = history.rows[-1]
    print(f"final {args.loss} loss {row['loss_selected']:.6g}; saved {args.out}")
    return EXIT_OK


def cmd_superres(args):
    G = load_generator(args.model)
    write_pgm(args.output, super_resolve(G, read_pgm(args.input)))
    return EXIT_OK


def cmd_verify(args):
    G = load_generator(args.model)
    f = load_frozen_extractor(args.extractor)
    match, distance = E.verify_pair(read_pgm(args.probe), read_pgm(args.gallery), G, f, args.gamma)
    print(f"distance {distance:.6f}")
    print("match" if match else "no match")
    return EXIT_OK if match else EXIT_NO_MATCH


def cmd_evaluate(args):
    cfg = _config(args)
    _, test = read_splits(args.data)
    f = load_frozen_extractor(args.extractor)
    scale = test[0].x_H.shape[0] // test[0].x_L.shape[0]
    pairs = make_verification_pairs(test, cfg.pairs_negatives, cfg.seed)
    methods = [E.generator_method(os.path.splitext(os.path.basename(p))[0], load_generator(p))
               for p in args.models]
    methods += [E.bicubic_method(scale), E.hr_baseline_method()]
    reports = [E.evaluate_method(pairs, m, f, cfg.patch) for m in methods]
    E.write_metrics_csv(args.report, reports)
    if args.roc_dir:
        os.makedirs(args.roc_dir, exist_ok=True)
        for r in reports:
            r.roc.to_csv(os.path.join(args.roc_dir, f"roc_{r.method}.csv"))
    if args.matrix:
        probes = test[::max(1, cfg.samples_per_id // 2)]
        for m in methods:
            dist, same = E.distance_matrix(probes, probes, m, f)
            E.write_distance_matrix(f"{args.matrix}_{m.name}", dist, same)
    for r in reports:
        print(",".join(r.row()))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="idsr", description="Identity-preserving face super-resolution.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="render a synthetic face corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--ids", type=int, default=32)
    s.add_argument("--per-id", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train-extractor", help="stage one: identity classifier")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--history", help="write per-epoch CSV here")
    s.set_defaults(func=cmd_train_extractor)

    s = sub.add_parser("train-sr", help="stage two: super-resolution generator")
    s.add_argument("--data", required=True)
    s.add_argument("--extractor", required=True)
    s.add_argument("--loss", choices=LOSS_KINDS, required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--history", help="write per-epoch CSV here")
    s.set_defaults(func=cmd_train_sr)

    s = sub.add_parser("superres", help="upsample one PGM")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", dest="output", required=True)
    s.set_defaults(func=cmd_superres)

    s = sub.add_parser("verify", help="decide whether a probe and gallery show the same person")
    s.add_argument("--model", required=True)
    s.add_argument("--extractor", required=True)
    s.add_argument("--probe", required=True)
    s.add_argument("--gallery", required=True)
    s.add_argument("--gamma", type=float, required=True)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("evaluate", help="verification and image-quality report")
    s.add_argument("--data", required=True)
    s.add_argument("--models", nargs="+", required=True)
    s.add_argument("--extractor", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--config")
    s.add_argument("--roc-dir", help="also write one ROC CSV per method here")
    s.add_argument("--matrix", help="also write distance matrices with this path prefix")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("IDSR_THREADS")
    if threads is not None and not threads.strip().isdigit():
        print(f"idsr: error: IDSR_THREADS must be a non-negative integer, got {threads!r}", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except (IdsrError, OSError, ValueError, KeyError) as exc:
        print(f"idsr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
