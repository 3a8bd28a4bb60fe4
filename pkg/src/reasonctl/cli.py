"""Command-line entry point: curate, train-sft, train-rft, infer, evaluate."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import PipelineConfig, build_backend, build_backends, load_config
from .control_maps import ControlType, load_control_map, load_image, save_image
from .curation import (
    CurationRequest,
    Dataset,
    curate,
    dataset_metadata,
    filter_dataset,
    read_dataset,
    write_dataset,
    write_failures,
)
from .errors import (
    BackendError,
    ConfigurationError,
    DataError,
    ReasonCtlError,
    StageError,
)
from .metrics import evaluate_suite, format_summary, write_report
from .rewards import make_rft_reward
from .selection import InferenceConfig, InferenceRequest, NoScorableCandidate, NoValidPrompt, run_inference
from .synthetic import oracle_script_from_manifest
from .training import Checkpoint, TrainingAborted, read_checkpoint, train_rft, train_sft, write_checkpoint
from .utils import read_jsonl

logger = logging.getLogger("reasonctl")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_DATA = 0, 2, 3, 4


def _stamp(cfg: PipelineConfig, seed: int) -> dict:
    return {"config_digest": cfg.digest, "tool_version": __version__, "seed": seed}


def _seed(args, cfg: PipelineConfig) -> int:
    return cfg.seed if args.seed is None else args.seed


# --------------------------------------------------------------------------
# curate
# --------------------------------------------------------------------------


def _relative_paths(rec, out: Path):
    # Keep datasets relocatable together with their corpus.
    def rel(p):
        return None if p is None else os.path.relpath(p, out.resolve())

    return replace(rec, control_image_path=rel(rec.control_image_path), gt_image_path=rel(rec.gt_image_path))


def cmd_curate(args, cfg: PipelineConfig) -> int:
    seed = _seed(args, cfg)
    manifest = Path(args.manifest)
    if not manifest.exists():
        raise DataError(f"manifest {manifest} does not exist")
    try:
        rows = read_jsonl(manifest)
    except ValueError as exc:
        raise DataError(f"manifest {manifest} is not valid JSON-Lines: {exc}") from exc
    base = manifest.resolve().parent
    requests = []
    for row in rows:
        ctype = ControlType(row["control_type"])
        if args.control_type and ctype != ControlType(args.control_type):
            continue
        gt = row.get("gt_image")
        requests.append(
            CurationRequest(
                id=str(row["id"]),
                control_type=ctype,
                control_image_path=str(base / row["control_image"]),
                gt_image_path=None if gt is None else str(base / gt),
                original_prompt=row.get("prompt", ""),
            )
        )
    oracle = build_backend(cfg, "oracle", seed, {"oracle_script": oracle_script_from_manifest(rows, seed)})
    c = cfg.curation
    records, failures = curate(
        requests, oracle, seed=seed, concurrency=c.concurrency, retries=c.retries, backoff=c.backoff
    )
    out = Path(args.out)
    records = [_relative_paths(r, out) for r in records]
    meta = dataset_metadata(**_stamp(cfg, seed))
    kept, rejected = filter_dataset(records, c.blocklist, meta)
    write_dataset(kept, out / "dataset.jsonl")
    write_dataset(Dataset(rejected, meta), out / "rejected.jsonl")
    write_failures([{**f, **_stamp(cfg, seed)} for f in failures], out / "failures.jsonl")
    print(f"kept {len(kept)}  rejected {len(rejected)}  failed {len(failures)}  -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


def _load_policy(cfg: PipelineConfig, seed: int, ckpt_path: str | None):
    policy = build_backend(cfg, "policy", seed)
    ckpt = None
    if ckpt_path:
        ckpt = read_checkpoint(ckpt_path)
        if not ckpt.state_ref:
            raise DataError(f"checkpoint {ckpt_path} has no state reference")
        if not hasattr(policy, "load_state"):
            raise ConfigurationError("the configured policy adapter cannot load checkpoints")
        policy.load_state(Path(ckpt_path).parent / ckpt.state_ref)
    return policy, ckpt


def _save_checkpoint(policy, ckpt: Checkpoint, cfg: PipelineConfig, out: Path, phase: str, seed: int) -> Checkpoint:
    if not hasattr(policy, "save_state"):
        raise ConfigurationError("the configured policy adapter cannot save checkpoints")
    state_name = f"policy_{phase}.npz"
    policy.save_state(out / state_name)
    metrics = {**ckpt.metrics, "train_config_digest": ckpt.config_digest, "seed": seed}
    ckpt = replace(ckpt, config_digest=cfg.digest, state_ref=state_name, metrics=metrics)
    write_checkpoint(ckpt, out / f"checkpoint_{phase}.json")
    return ckpt


def _start(args, log_path: Path, resume_ckpt: Checkpoint | None) -> int:
    if resume_ckpt is None and log_path.exists():
        log_path.unlink()
    return 0 if resume_ckpt is None else resume_ckpt.step


def cmd_train_sft(args, cfg: PipelineConfig) -> int:
    seed = _seed(args, cfg)
    dataset = read_dataset(args.dataset)
    policy, resumed = _load_policy(cfg, seed, args.resume)
    tc = cfg.sft_train_config(seed)
    if args.steps is not None:
        tc = replace(tc, steps=args.steps)
    out = Path(args.out)
    log_path = out / "sft_log.jsonl"
    start = _start(args, log_path, resumed)
    ckpt = train_sft(dataset.records, policy, tc, log_path=log_path, start_step=start, log_extra=_stamp(cfg, seed))
    ckpt = _save_checkpoint(policy, ckpt, cfg, out, "sft", seed)
    print(f"sft: step {ckpt.step}  last loss {ckpt.metrics.get('last_loss', float('nan')):.4f}")
    return EXIT_OK


def _reference(cfg: PipelineConfig, seed: int, policy):
    ref = cfg.training.rft.reference
    if ref is None:
        raise ConfigurationError("training.rft.reference is not set; use 'init', 'base' or a checkpoint path")
    if ref == "init":
        return policy.snapshot()
    if ref == "base":
        return build_backend(cfg, "policy", seed).snapshot()
    ref_policy, _ = _load_policy(cfg, seed, ref)
    return ref_policy.snapshot()


def cmd_train_rft(args, cfg: PipelineConfig) -> int:
    seed = _seed(args, cfg)
    if cfg.training.rft.reference is None:
        raise ConfigurationError("training.rft.reference is not set; use 'init', 'base' or a checkpoint path")
    dataset = read_dataset(args.dataset)
    policy, resumed = _load_policy(cfg, seed, args.resume or args.init)
    if args.resume is None:
        resumed = None
    reference = _reference(cfg, seed, policy)
    scorer = build_backend(cfg, "alignment_scorer", seed)
    tc = cfg.rft_train_config(seed)
    if args.steps is not None:
        tc = replace(tc, steps=args.steps)
    out = Path(args.out)
    log_path = out / "rft_log.jsonl"
    start = _start(args, log_path, resumed)
    ckpt = train_rft(
        dataset.records, policy, reference, make_rft_reward(scorer), tc,
        log_path=log_path, start_step=start, log_extra=_stamp(cfg, seed),
    )  # fmt: skip
    ckpt = _save_checkpoint(policy, ckpt, cfg, out, "rft", seed)
    last = ckpt.metrics.get("last", {})
    print(f"rft: step {ckpt.step}  reward {last.get('reward_mean', float('nan')):.4f}  format {last.get('format_rate', float('nan')):.2f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# infer / evaluate
# --------------------------------------------------------------------------


def cmd_infer(args, cfg: PipelineConfig) -> int:
    seed = _seed(args, cfg)
    control_path = Path(args.control)
    if not control_path.exists():
        raise DataError(f"control image {control_path} does not exist")
    cmap = load_control_map(control_path, ControlType(args.control_type))
    backends = build_backends(cfg, seed, roles=["policy", "generator", "scorer", "perceptual", "extractor"])
    if args.checkpoint:
        backends.policy, _ = _load_policy(cfg, seed, args.checkpoint)
    k = 1 if args.no_scaling else (args.k or cfg.inference.k)
    inf = cfg.inference
    icfg = InferenceConfig(
        k=k, temperature=inf.temperature, retry_budget=inf.retry_budget,
        semantic_weight=inf.semantic_weight, structural_weight=inf.structural_weight,
        normalize=inf.normalize, fallback_to_original=inf.fallback_to_original,
    )  # fmt: skip
    out = Path(args.out)
    result = run_inference(
        InferenceRequest(args.prompt, cmap, k, seed), backends, icfg,
        audit_path=out / "audit.jsonl",
        audit_extra={**_stamp(cfg, seed), "output": args.name},
    )  # fmt: skip
    save_image(result.image, out / args.name)
    print(f"winner {result.selection.winner.index} of {len(result.selection.all_candidates)}  -> {out / args.name}")
    return EXIT_OK


_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


def _image_files(d: Path) -> list[Path]:
    if not d.is_dir():
        raise DataError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    seed = _seed(args, cfg)
    ctype = ControlType(args.control_type)
    gen_files = _image_files(Path(args.generated))
    if not gen_files:
        raise DataError(f"no images in {args.generated}")
    ref_dir = Path(args.reference)
    ref_files = [ref_dir / p.name for p in gen_files]
    missing = [str(p) for p in ref_files if not p.exists()]
    if missing:
        raise DataError(f"missing reference images: {missing}")
    ref_maps = None
    if args.reference_maps:
        ref_maps = [load_control_map(Path(args.reference_maps) / p.name, ctype) for p in gen_files]
    backends = build_backends(cfg, seed, roles=["extractor", "features"])
    report = evaluate_suite(
        [load_image(p) for p in gen_files], [load_image(p) for p in ref_files], ctype,
        backends.extractor, backends.features, reference_maps=ref_maps,
        names=[p.name for p in gen_files], edge_tolerance=cfg.metrics.edge_tolerance,
        config_digest=cfg.digest,
    )  # fmt: skip
    report.extra["seed"] = seed
    out = Path(args.out)
    write_report(report, out / "eval_report.jsonl")
    print(format_summary(report, cfg.metrics.scale100))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reasonctl", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML pipeline config")
        p.add_argument("--seed", type=int, help="root seed (overrides config)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = common(sub.add_parser("curate", help="build the reasoning dataset"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--control-type", choices=[t.value for t in ControlType])
    p.set_defaults(func=cmd_curate)

    p = common(sub.add_parser("train-sft", help="supervised fine-tuning"))
    p.add_argument("--dataset", required=True)
    p.add_argument("--resume", help="checkpoint metadata to continue from")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train_sft)

    p = common(sub.add_parser("train-rft", help="group-relative reinforcement fine-tuning"))
    p.add_argument("--dataset", required=True)
    p.add_argument("--init", help="checkpoint metadata of the starting policy")
    p.add_argument("--resume", help="checkpoint metadata to continue from")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train_rft)

    p = common(sub.add_parser("infer", help="best-of-K generation for one prompt"))
    p.add_argument("--prompt", required=True)
    p.add_argument("--control", required=True)
    p.add_argument("--control-type", default="CANNY", choices=[t.value for t in ControlType])
    p.add_argument("--k", type=int)
    p.add_argument("--no-scaling", action="store_true", help="force K = 1")
    p.add_argument("--checkpoint", help="policy checkpoint metadata")
    p.add_argument("--name", default="image.png", help="output image file name")
    p.set_defaults(func=cmd_infer)

    p = common(sub.add_parser("evaluate", help="consistency metric and FID"))
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--reference-maps")
    p.add_argument("--control-type", required=True, choices=[t.value for t in ControlType])
    p.set_defaults(func=cmd_evaluate)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return _exit_code(exc.cause)
    if isinstance(exc, ConfigurationError):
        return EXIT_CONFIG
    if isinstance(exc, (BackendError, TrainingAborted, NoValidPrompt, NoScorableCandidate)):
        return EXIT_BACKEND
    return EXIT_DATA


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ReasonCtlError, ValueError, KeyError) as exc:
        stage = exc.stage if isinstance(exc, StageError) else args.command
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return _exit_code(exc) if isinstance(exc, ReasonCtlError) else EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
