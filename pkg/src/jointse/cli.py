"""``jointse`` command line: corpus generation, training, inference, scoring.

Exit codes: 0 success, 1 check failure, 2 usage or I/O error, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from .errors import InvalidInputError, NumericDivergence

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("jointse")


def _add_workers(p):
    p.add_argument("--workers", type=int, default=1,
                   help="parallel worker processes (1 = sequential, fully deterministic)")


def build_parser():
    parser = argparse.ArgumentParser(prog="jointse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-corpus", help="write a synthetic paired clean/degraded corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--valid", type=int, default=20)
    p.add_argument("--test", type=int, default=20)
    p.add_argument("--snr-db", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    _add_workers(p)

    p = sub.add_parser("train", help="train a system from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=["baseline", "disjoint", "joint", "mtjl", "dc-mtjl"])
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--phase", choices=["preserve", "discard"])
    p.add_argument("--mask-act", choices=["relu", "mish", "metaacon"])
    p.add_argument("--speed-perturb", action="store_true", default=None)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--corpus", help="corpus directory (overrides corpus.dir)")
    p.add_argument("--run-dir", help="output directory (overrides run.dir)")
    p.add_argument("--resume", help="checkpoint to resume from")
    _add_workers(p)

    p = sub.add_parser("enhance", help="enhance one WAV file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("decode", help="transcribe one WAV file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--mode", choices=["ctc", "attention"], default="attention")

    p = sub.add_parser("evaluate", help="character error rate on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=["ctc", "attention"], default="attention")

    p = sub.add_parser("compare", help="run the multi-system comparison suite")
    p.add_argument("--plan", required=True)
    p.add_argument("--corpus", help="corpus directory (overrides corpus.dir in the plan)")
    p.add_argument("--out", help="report directory (overrides plan.out_dir)")
    _add_workers(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of all differentiable blocks")
    p.add_argument("--case", action="append", help="run only the named case (repeatable)")
    p.add_argument("--list", action="store_true", help="list case names and exit")
    return parser


def _require_file(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")


def cmd_gen_corpus(args):
    from .corpus import DegradeConfig, generate_corpus

    cfg = DegradeConfig(snr_db=args.snr_db, seed=args.seed)
    summary = generate_corpus(args.out, args.train, args.valid, args.test, cfg, args.seed,
                              workers=args.workers)
    snrs = summary.snr_db
    print(json.dumps({"out": os.path.abspath(args.out), "counts": summary.counts,
                      "manifests": summary.manifests,
                      "snr_db": {"target": args.snr_db, "min": min(snrs), "max": max(snrs)}}, indent=2))
    return EXIT_OK


def cmd_train(args):
    from .training import load_config, train

    _require_file(args.config)
    overrides = {"train.mode": args.mode, "weights.beta": args.beta, "weights.gamma": args.gamma,
                 "weights.lambda": args.lam, "se.phase": args.phase,
                 "se.mask_activation": args.mask_act, "train.speed_perturb": args.speed_perturb,
                 "train.steps": args.steps, "train.seed": args.seed, "corpus.dir": args.corpus,
                 "run.dir": args.run_dir, "train.workers": args.workers if args.workers != 1 else None}
    cfg = load_config(args.config, overrides)
    if not cfg.run_dir:
        raise InvalidInputError("no run directory: set run.dir in the config or pass --run-dir")
    if args.resume:
        _require_file(args.resume)

    def progress(r):
        if r.valid_cer is not None or r.step % 50 == 0:
            log.info("step %d loss %.4f%s", r.step, r.loss_joint,
                     "" if r.valid_cer is None else f" valid CER {r.valid_cer:.3f}")

    result = train(cfg, log_fn=progress, resume_from=args.resume)
    summary = {"run_dir": cfg.run_dir, "steps": result.steps_run, "best_valid_cer": result.best_cer,
               "best_step": result.best_step, "checkpoint": result.checkpoint}
    with open(os.path.join(cfg.run_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_enhance(args):
    from .se import enhance
    from .signal import read_wav, write_wav
    from .training import JointSystem

    _require_file(args.ckpt)
    _require_file(args.inp)
    system, _, _ = JointSystem.load(args.ckpt)
    if system.se is None:
        raise InvalidInputError("checkpoint has no enhancement front-end (baseline system)")
    cfg = dataclasses.replace(system.se_cfg, phase_mode="preserve")
    out = enhance(read_wav(args.inp), system.se, cfg)
    write_wav(args.out, out.enhanced_wave)
    print(args.out)
    return EXIT_OK


def cmd_decode(args):
    from .signal import read_wav
    from .training import JointSystem

    _require_file(args.ckpt)
    _require_file(args.inp)
    system, _, _ = JointSystem.load(args.ckpt)
    print(system.transcribe([read_wav(args.inp)], args.mode)[0])
    return EXIT_OK


def cmd_evaluate(args):
    from .corpus import load_pairs
    from .evaluation import corpus_wer
    from .training import JointSystem, prepare_pairs

    _require_file(args.ckpt)
    _require_file(args.manifest)
    system, _, _ = JointSystem.load(args.ckpt)
    utts = prepare_pairs(load_pairs(args.manifest), system.vocab, system._stft_params(),
                         system.asr_cfg.n_mels)
    hyps = system.transcribe_utterances(utts, args.mode)
    result = corpus_wer([u.transcript for u in utts], hyps)
    print(json.dumps({**result.to_dict(), "metric": "CER", "utterances": len(utts)}))
    return EXIT_OK


def cmd_compare(args):
    from .evaluation import format_report, load_plan, run_comparison

    _require_file(args.plan)
    plan = load_plan(args.plan)
    if args.out:
        plan.out_dir = args.out
    if args.workers != 1:
        plan.workers = args.workers
    report = run_comparison(plan, args.corpus)
    print(format_report(report))
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import case_names, run_suite

    if args.list:
        print("\n".join(case_names()))
        return EXIT_OK
    try:
        results = run_suite(args.case, log_fn=lambda r: print(r.line(), flush=True))
    except KeyError as exc:
        raise InvalidInputError(str(exc)) from exc
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


COMMANDS = {"gen-corpus": cmd_gen_corpus, "train": cmd_train, "enhance": cmd_enhance,
            "decode": cmd_decode, "evaluate": cmd_evaluate, "compare": cmd_compare,
            "gradcheck": cmd_gradcheck}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        if getattr(exc, "report", None) is not None:
            print(exc.report.to_json(), file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidInputError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
