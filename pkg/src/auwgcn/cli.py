"""Command line entry point: ``auwgcn {gen-synth,train,spot,eval,verify}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from . import model as M
from .config import ConfigError, RunConfig, load_config, parse_config
from .evaluation import evaluate, summarize
from .feature_io import load_annotations, load_dataset, save_dataset, validate_dataset
from .spotting import Proposal, read_proposals, spot_video, write_proposals
from .synthdata import SynthConfig, generate_dataset
from .training import loso, train_fold

log = logging.getLogger("auwgcn")

MANIFEST = "manifest.json"


class UsageError(Exception):
    """Bad flags or configuration (exit 2)."""


@dataclass
class RunManifest:
    command: str
    seed: int
    config: str
    checkpoints: dict[str, str] = field(default_factory=dict)
    seconds: float | None = None
    version: str = __version__

    def save(self, directory: Path) -> None:
        data = {k: v for k, v in asdict(self).items() if v is not None}
        (directory / MANIFEST).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: Path) -> "RunManifest":
        return cls(**json.loads((directory / MANIFEST).read_text(encoding="utf-8")))


def checkpoint_name(subject: str) -> str:
    return f"fold_{subject}.ckpt"


def _run_config(path: str | None) -> RunConfig:
    try:
        return load_config(path)
    except ConfigError as exc:
        raise UsageError(f"config: {exc}") from exc
    except OSError as exc:
        raise UsageError(f"config: {exc}") from exc


def cmd_gen_synth(args) -> int:
    try:
        cfg = SynthConfig(
            subjects=args.subjects,
            videos_per_subject=args.videos_per_subject,
            fps=args.fps,
            video_seconds=args.video_seconds,
            macro_rate=args.macro_rate,
            micro_rate=args.micro_rate,
            noise_sigma=args.noise_sigma,
            signal_amp=args.signal_amp,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ds = generate_dataset(cfg)
    out = Path(args.out)
    save_dataset(ds, out)
    # no timing here: two runs with the same flags must give identical directories
    config = "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())
    RunManifest("gen-synth", cfg.seed, config).save(out)
    n = sum(len(a) for a in ds.annotations.values())
    print(f"wrote {len(ds.videos)} videos, {n} instances to {out}")
    return 0


def cmd_train(args) -> int:
    run = _run_config(args.config)
    ds = load_dataset(args.data)
    problems = validate_dataset(ds)
    if problems:
        raise RuntimeError("invalid dataset:\n  " + "\n  ".join(problems))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if args.subject is not None:
        if args.subject not in ds.subjects:
            raise UsageError(f"unknown subject {args.subject!r}; have {', '.join(ds.subjects)}")
        folds = {args.subject: train_fold(ds, args.subject, run.train, run.model)}
    else:
        folds = loso(ds, run.train, run.model, workers=args.workers)
    paths = {}
    for subject, fold in folds.items():
        name = checkpoint_name(subject)
        M.save_checkpoint(fold.checkpoint, out / name)
        paths[subject] = name
        print(f"{subject}: loss {fold.initial_loss:.4f} -> {fold.final_loss:.4f}  {name}")
    seconds = round(time.perf_counter() - t0, 3)
    RunManifest("train", run.train.seed, run.to_text(), paths, seconds).save(out)
    (out / "config.txt").write_text(run.to_text(), encoding="utf-8")
    print(f"trained {len(folds)} fold(s) in {seconds:.1f}s")
    return 0


def cmd_spot(args) -> int:
    ckpt_dir = Path(args.checkpoints)
    if args.config is not None:
        run = _run_config(args.config)
    elif (ckpt_dir / MANIFEST).exists():
        run = parse_config(RunManifest.load(ckpt_dir).config)
    else:
        run = RunConfig()
    ds = load_dataset(args.data)
    missing = [s for s in ds.subjects if not (ckpt_dir / checkpoint_name(s)).exists()]
    if missing:
        raise RuntimeError(f"no fold checkpoint for subject(s): {', '.join(missing)} in {ckpt_dir}")
    proposals: list[Proposal] = []
    for subject in ds.subjects:
        ckpt = M.load_checkpoint(ckpt_dir / checkpoint_name(subject))
        # each video is spotted by the model that never saw its subject
        for v in ds.videos_of(subject):
            proposals += spot_video(ckpt.params, ckpt.adjacency, v, run.train, run.spot)
    write_proposals(proposals, args.out)
    print(f"wrote {len(proposals)} proposals to {args.out}")
    return 0


def cmd_eval(args) -> int:
    proposals = read_proposals(args.proposals)
    annotations: dict = {}
    for vid, inst in load_annotations(args.annotations):
        annotations.setdefault(vid, []).append(inst)
    unknown = sorted({p.video_id for p in proposals} - set(annotations))
    if unknown:
        log.warning("proposals for unannotated videos counted as false positives: %s", ", ".join(unknown))
        for vid in unknown:
            annotations[vid] = []
    summary = summarize(evaluate(proposals, annotations, k_iou=args.k_iou))
    print(summary.to_text(), end="")
    if args.out:
        Path(args.out).write_text(summary.to_kv(), encoding="utf-8")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(seeds=args.seeds)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="auwgcn", description="AU-aware graph network for expression spotting")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write a synthetic dataset directory")
    d = SynthConfig()
    g.add_argument("--out", required=True)
    g.add_argument("--subjects", type=int, default=d.subjects)
    g.add_argument("--videos-per-subject", type=int, default=d.videos_per_subject)
    g.add_argument("--fps", type=float, default=d.fps)
    g.add_argument("--video-seconds", type=float, default=d.video_seconds)
    g.add_argument("--macro-rate", type=float, default=d.macro_rate)
    g.add_argument("--micro-rate", type=float, default=d.micro_rate)
    g.add_argument("--noise-sigma", type=float, default=d.noise_sigma)
    g.add_argument("--signal-amp", type=float, default=d.signal_amp)
    g.add_argument("--seed", type=int, default=d.seed)
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="leave-one-subject-out training")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--subject", help="train only the fold holding out this subject")
    t.add_argument("--workers", type=int, default=1)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("spot", help="write proposals using per-fold checkpoints")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoints", required=True)
    s.add_argument("--config", help="defaults to the config recorded by train")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spot)

    e = sub.add_parser("eval", help="score proposals against annotations")
    e.add_argument("--proposals", required=True)
    e.add_argument("--annotations", required=True)
    e.add_argument("--out", help="also write key = value scores here")
    e.add_argument("--k-iou", type=float, default=0.5)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="gradient checks and oracle comparisons")
    v.add_argument("--seeds", type=int, default=100)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"auwgcn {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        log.debug("failure", exc_info=True)
        print(f"auwgcn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
