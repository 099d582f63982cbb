"""Command-line entry point: every pipeline stage as one subcommand.

All stage commands share a JSON run config plus a few overrides; user
input problems surface as one-line errors with exit code 2, never a
stack trace.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_run_config
from .dataset.records import DatasetError, load_manifest, load_scene
from .dataset.synth import build_tuples, read_tuple, tuple_dirs, write_tuple
from .dataset.toy import generate_toy_dataset
from .evaluation import EvaluationError, evaluate_dataset, write_report
from .imaging import save_image, save_mask
from .ranking import RankingError, bt_scores, matrix_from_votes, read_votes_csv

USER_ERRORS = (ConfigError, DatasetError, EvaluationError, RankingError,
               ValueError, OSError)


def _scene_dirs(cfg: RunConfig, split: str) -> list[Path]:
    split_path = cfg.data_root / "split.json"
    doc = json.loads(split_path.read_text())
    if split not in doc:
        raise ConfigError(f"{split_path} has no '{split}' entry")
    return [cfg.data_root / "scenes" / sid for sid in doc[split]]


def _load_tuples(root: Path):
    dirs = tuple_dirs(root)
    if not dirs:
        raise DatasetError(f"no tuples under {root}; run 'shadowlab build' first")
    return [read_tuple(d) for d in dirs]


def cmd_gen_toy(cfg: RunConfig, dry_run: bool) -> int:
    n_train, n_test = cfg.toy.n_train, cfg.toy.n_test
    if dry_run:
        print(f"plan: generate {n_train} train + {n_test} test scenes "
              f"({cfg.toy.scene.image_size}px) under {cfg.data_root}, seed {cfg.seed}")
        return 0
    split = generate_toy_dataset(cfg.data_root, n_train, n_test, cfg.toy.scene, seed=cfg.seed)
    print(f"generated {len(split['train'])} train + {len(split['test'])} test scenes "
          f"under {cfg.data_root}")
    return 0


def cmd_build(cfg: RunConfig, dry_run: bool) -> int:
    if dry_run:
        print(f"plan: build tuples from {cfg.data_root}/scenes into {cfg.data_root}/tuples")
        return 0
    total = 0
    for split in ("train", "test"):
        for scene_dir in _scene_dirs(cfg, split):
            scene = load_scene(load_manifest(scene_dir / "manifest.json"))
            for instance_id, t in build_tuples(scene):
                out = (cfg.data_root / "tuples" / split
                       / scene.manifest.scene_id / f"instance_{instance_id}")
                write_tuple(t, out)
                total += 1
    print(f"built {total} tuples under {cfg.data_root}/tuples")
    return 0


def cmd_train(cfg: RunConfig, dry_run: bool) -> int:
    from .diffusion.model import ShadowDiffusionModel

    if dry_run:
        print(f"plan: train {cfg.diffusion.steps} steps (batch {cfg.diffusion.batch}, "
              f"T={cfg.diffusion.T}) on {cfg.data_root}/tuples/train; "
              f"checkpoint -> {cfg.checkpoint_path}")
        return 0
    tuples = _load_tuples(cfg.data_root / "tuples" / "train")
    cfg.output_root.mkdir(parents=True, exist_ok=True)
    model = ShadowDiffusionModel(cfg.diffusion)
    model.fit(tuples, log_path=cfg.output_root / "loss_log.csv")
    model.save(cfg.checkpoint_path)
    (cfg.output_root / "train_config.json").write_text(
        json.dumps(cfg.diffusion.to_json_dict(), indent=2, sort_keys=True) + "\n")
    print(f"trained on {len(tuples)} tuples; checkpoint at {cfg.checkpoint_path}")
    return 0


def _candidate_seed(base_seed: int, tuple_index: int, candidate: int) -> int:
    return int(np.random.SeedSequence((base_seed, tuple_index, candidate)).generate_state(1)[0])


def cmd_sample(cfg: RunConfig, dry_run: bool) -> int:
    from .diffusion.model import ShadowDiffusionModel

    if dry_run:
        print(f"plan: sample {cfg.eval_k} candidates per test tuple from "
              f"{cfg.checkpoint_path} into {cfg.output_root}/samples")
        return 0
    test_root = cfg.data_root / "tuples" / "test"
    dirs = tuple_dirs(test_root)
    if not dirs:
        raise DatasetError(f"no tuples under {test_root}; run 'shadowlab build' first")
    model = ShadowDiffusionModel(cfg.diffusion).load(cfg.checkpoint_path)
    count = 0
    for i, d in enumerate(dirs):
        t = read_tuple(d)
        out_dir = cfg.output_root / "samples" / d.relative_to(test_root)
        out_dir.mkdir(parents=True, exist_ok=True)
        for j in range(cfg.eval_k):
            res = model.sample_tuple(t, seed=_candidate_seed(cfg.seed, i, j))
            save_image(res.image, out_dir / f"cand_{j}.png")
            save_mask(res.mask, out_dir / f"cand_{j}_mask.png")
            count += 1
    print(f"wrote {count} candidates under {cfg.output_root}/samples")
    return 0


def cmd_postprocess(cfg: RunConfig, dry_run: bool) -> int:
    from .imaging import load_image, load_mask
    from .postprocess import PostProcessor, final_blend, fit_lut, lut_to_text, make_post_samples

    if dry_run:
        print(f"plan: train rectifier on {cfg.data_root}/tuples/train, rectify "
              f"{cfg.output_root}/samples into {cfg.output_root}/rectified, "
              f"fit LUTs into {cfg.output_root}/luts")
        return 0
    train_tuples = _load_tuples(cfg.data_root / "tuples" / "train")
    post = PostProcessor(seed=cfg.seed)
    post.fit(make_post_samples(train_tuples, seed=cfg.seed))
    cfg.output_root.mkdir(parents=True, exist_ok=True)
    post.save(cfg.output_root / "post.shlb")

    test_root = cfg.data_root / "tuples" / "test"
    samples_root = cfg.output_root / "samples"
    dirs = tuple_dirs(test_root)
    if not dirs:
        raise DatasetError(f"no tuples under {test_root}; run 'shadowlab build' first")
    luts_dir = cfg.output_root / "luts"
    luts_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for d in dirs:
        rel = d.relative_to(test_root)
        t = read_tuple(d)
        src = samples_root / rel
        if not src.is_dir():
            raise DatasetError(f"no samples under {src}; run 'shadowlab sample' first")
        out_dir = cfg.output_root / "rectified" / rel
        out_dir.mkdir(parents=True, exist_ok=True)
        for j in range(cfg.eval_k):
            cand = load_image(src / f"cand_{j}.png")
            rectified, matte = post.predict(cand, t.composite, t.fg_object)
            final = final_blend(rectified, t.composite, matte)
            save_image(final, out_dir / f"cand_{j}.png")
            save_mask(matte, out_dir / f"cand_{j}_mask.png")
            if j == 0:
                lut = fit_lut(t.target, cand)
                (luts_dir / f"{'_'.join(rel.parts)}.txt").write_text(lut_to_text(lut))
            count += 1
    print(f"rectified {count} candidates under {cfg.output_root}/rectified")
    return 0


def cmd_eval(cfg: RunConfig, dry_run: bool) -> int:
    rectified = cfg.output_root / "rectified"
    samples = cfg.output_root / "samples"
    outputs = rectified if rectified.is_dir() else samples
    if dry_run:
        print(f"plan: evaluate {outputs} against {cfg.data_root}/tuples/test "
              f"(best of {cfg.eval_k}) -> {cfg.output_root}/report.json")
        return 0
    report = evaluate_dataset(outputs, cfg.data_root / "tuples" / "test", k=cfg.eval_k)
    write_report(report, cfg.output_root / "report.json")
    for split, row in sorted(report.items()):
        print(f"{split}: " + " ".join(f"{k}={row[k]:.4f}" for k in ("GR", "LR", "GS", "LS", "GB", "LB"))
              + f" n={row['n']}")
    return 0


def cmd_bt(votes_path: Path, smoothing: bool, out_dir: Path | None, dry_run: bool) -> int:
    if dry_run:
        print(f"plan: aggregate {votes_path} into a win matrix and solve for scores")
        return 0
    rows = read_votes_csv(votes_path)
    if not rows:
        raise RankingError(f"{votes_path} holds no votes")
    scores = bt_scores(matrix_from_votes(rows), smoothing=smoothing)
    text = json.dumps(scores, indent=2, sort_keys=True)
    print(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "bt_scores.json").write_text(text + "\n")
    return 0


def cmd_serve(study_path: Path, votes_path: Path, host: str, port: int, dry_run: bool) -> int:
    from .service import build_app

    if dry_run:
        print(f"plan: serve rating study {study_path} on {host}:{port}, votes -> {votes_path}")
        return 0
    import uvicorn

    app = build_app(study_path, votes_path)
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shadowlab",
        description="shadow generation pipeline: toy data, diffusion training, "
                    "rectification, metrics, and pairwise ranking")
    sub = parser.add_subparsers(dest="command", required=True)

    def stage(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output root")
        p.add_argument("--dry-run", action="store_true",
                       help="validate config and print the plan without writing")
        return p

    stage("gen-toy", "generate synthetic scenes and the train/test split")
    stage("build", "assemble training tuples from scenes")
    stage("train", "train the shadow diffusion model")
    stage("sample", "sample candidates for every test tuple")
    stage("postprocess", "train the rectifier and post-process sampled candidates")
    stage("eval", "score candidates against ground truth")

    bt = sub.add_parser("bt", help="Bradley-Terry scores from a votes CSV")
    bt.add_argument("votes", help="votes CSV path")
    bt.add_argument("--smoothing", action="store_true",
                    help="add 0.5 pseudo-counts to every method pair")
    bt.add_argument("--out", default=None, help="also write bt_scores.json here")
    bt.add_argument("--dry-run", action="store_true")

    serve = sub.add_parser("serve", help="run the pairwise rating service")
    serve.add_argument("--study", required=True, help="study definition JSON")
    serve.add_argument("--votes", required=True, help="votes CSV path (appended, replayed on start)")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8008)
    serve.add_argument("--dry-run", action="store_true")

    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "bt":
            out_dir = Path(args.out) if args.out else None
            return cmd_bt(Path(args.votes), args.smoothing, out_dir, args.dry_run)
        if args.command == "serve":
            return cmd_serve(Path(args.study), Path(args.votes), args.host, args.port,
                             args.dry_run)
        cfg = load_run_config(args.config, seed_override=args.seed, out_override=args.out)
        handler = {
            "gen-toy": cmd_gen_toy,
            "build": cmd_build,
            "train": cmd_train,
            "sample": cmd_sample,
            "postprocess": cmd_postprocess,
            "eval": cmd_eval,
        }[args.command]
        return handler(cfg, args.dry_run)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
