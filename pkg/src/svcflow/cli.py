"""Command-line interface: ``svcflow <command> [options]``.

Exit codes: 0 ok, 1 invalid input (bad files, schemas, config), 2 internal
error (including a failing selfcheck).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON config file (SVCFLOW_<KEY> env vars override it)")
    p.add_argument("--seed", type=int, default=None, help="random seed (default: config seed)")
    p.add_argument("--json", action="store_true", help="print one machine-readable JSON object")
    p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread count")
    p.add_argument("--ablation", choices=("none", "no-spk", "no-att"), default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="svcflow", description="Flow-matching singing voice conversion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="melody features (F0 + loudness) from a WAV file")
    p.add_argument("audio")
    p.add_argument("out")

    p = sub.add_parser("pool", parents=[common], help="matching-pool operations")
    pool_sub = p.add_subparsers(dest="pool_command", required=True)
    b = pool_sub.add_parser("build", parents=[common], help="build a pool from reference SSL feature files")
    b.add_argument("refs", nargs="+")
    b.add_argument("--out", required=True)
    b.add_argument("--max-frames", type=int, default=None)

    p = sub.add_parser("convert", parents=[common], help="convert one utterance")
    p.add_argument("--source-features", required=True)
    p.add_argument("--source-audio", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--speaker-emb")
    p.add_argument("--target-melody", help="melody file of target-speaker audio, for the pitch shift")
    p.add_argument("--generator", choices=("model", "oracle-identity"), default="model")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-cfm", parents=[common], help="train from a manifest")
    p.add_argument("manifest")
    p.add_argument("out_dir")

    p = sub.add_parser("eval", parents=[common], help="score converted audio listed in a manifest")
    p.add_argument("manifest")
    p.add_argument("report_dir")

    sub.add_parser("selfcheck", parents=[common], help="run the oracle and invariant checks")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    p.add_argument("out_dir")
    p.add_argument("--n-train", type=int, default=24)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--steps", type=int, default=None, help="training steps recorded in train.json")
    return parser


def _config(args):
    from .config import load_config

    overrides = {} if args.seed is None else {"seed": args.seed}
    cfg = load_config(args.config, overrides)
    return cfg.with_ablation(args.ablation) if args.ablation else cfg


def _run(args) -> tuple[int, dict]:
    from . import pipeline
    from .selfcheck import run_selfcheck

    cfg = _config(args)
    seed = cfg.seed
    if args.command == "extract":
        return EXIT_OK, pipeline.extract(args.audio, args.out, cfg)
    if args.command == "pool":
        return EXIT_OK, pipeline.pool_build(args.refs, args.out, cfg, args.max_frames)
    if args.command == "convert":
        return EXIT_OK, pipeline.convert(args.source_features, args.source_audio, args.pool, args.out, cfg,
                                         checkpoint=args.checkpoint, speaker_emb=args.speaker_emb,
                                         target_melody=args.target_melody, generator=args.generator, seed=seed)
    if args.command == "train-cfm":
        return EXIT_OK, pipeline.train_cfm(args.manifest, args.out_dir, cfg, seed)
    if args.command == "eval":
        return EXIT_OK, pipeline.evaluate(args.manifest, args.report_dir)
    if args.command == "selfcheck":
        results = [r.to_dict() for r in run_selfcheck()]
        ok = all(r["passed"] for r in results)
        return (EXIT_OK if ok else EXIT_INTERNAL), {"checks": results, "passed": ok}
    if args.command == "synth":
        return EXIT_OK, pipeline.synth_corpus(args.out_dir, cfg, seed, args.n_train, args.duration, args.steps)
    raise AssertionError(f"unhandled command {args.command}")


def _print_human(command, result):
    if command == "selfcheck":
        for r in result["checks"]:
            print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['name']:<24} {r['detail']}")
        print("all checks passed" if result["passed"] else "some checks FAILED")
        return
    for key, value in result.items():
        print(f"{key}: {value}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        # effective when set before numpy loads BLAS, i.e. for a fresh process
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from .errors import InputError

    try:
        code, result = _run(args)
    except (InputError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        return _fail(args, EXIT_INPUT, exc)
    except Exception as exc:  # anything else is a bug or a numerical failure
        logging.getLogger(__name__).debug("internal error", exc_info=True)
        return _fail(args, EXIT_INTERNAL, exc)
    if args.json:
        print(json.dumps({"ok": code == EXIT_OK, "command": args.command, "result": result}, sort_keys=True))
    else:
        _print_human(args.command, result)
    return code


def _fail(args, code, exc) -> int:
    msg = f"{type(exc).__name__}: {exc}"
    if args.json:
        print(json.dumps({"ok": False, "command": args.command, "error": msg, "exit_code": code}, sort_keys=True))
    else:
        print(f"error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
