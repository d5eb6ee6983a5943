"""Command-line entry point: ``viewdvc <subcommand> [options]``.

Every subcommand writes its outputs and a ``manifest.json`` into ``--out``.
Settings resolve as built-in defaults, then the ``--config`` TOML file, then
flags. Exit status: 0 success, 2 usage error, 3 invalid input, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import AnnotationError, LabeledDataset, ValidationError, build_vocab
from .manifest import RunManifest, expand_outputs, hash_inputs, tree_hash
from .preproc import SegmentationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION = 1, 2, 3

log = logging.getLogger("viewdvc")


# ---------------------------------------------------------------------------
# run context

@dataclass
class Context:
    args: argparse.Namespace
    toml: dict
    inputs: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def input(self, path, kind: str = "file") -> Path:
        """Register an input path; missing paths are validation errors."""
        p = Path(path)
        ok = p.is_dir() if kind == "dir" else p.is_file()
        if not ok:
            raise ValidationError(f"{path}: no such {'directory' if kind == 'dir' else 'file'}")
        self.inputs.append(str(path))
        return p

    @property
    def out(self) -> Path:
        return Path(self.args.out)

    def train_config(self, **forced):
        from .trainer import SECTIONS, TrainConfig

        a = self.args
        flags = {
            "stage": getattr(a, "stage", None), "epochs": getattr(a, "epochs", None),
            "lr_model": getattr(a, "lr_model", None), "lr_classifier": getattr(a, "lr_classifier", None),
            "lambda_src": getattr(a, "lambda_src", None), "lambda_adv": getattr(a, "lambda_adv", None),
            "t": getattr(a, "t", None), "mode": getattr(a, "mode", None),
            "d_model": getattr(a, "d_model", None), "num_queries": getattr(a, "num_queries", None),
            "nhead": getattr(a, "nhead", None), "threads": getattr(a, "threads", None),
            "seed": a.seed,
        }
        sections = {k: v for k, v in self.toml.items() if k in SECTIONS}
        cfg = TrainConfig.from_sections(sections, origin=a.config or "config", **(flags | forced))
        self.seeds.append(cfg.seed)
        self.config["train"] = cfg.to_dict()
        return cfg

    def synth_config(self, **flags):
        from .synthdata import SynthConfig

        raw = dict(self.toml.get("synth", {}))
        raw.update({k: v for k, v in flags.items() if v is not None})
        if self.args.seed is not None:
            raw["seed"] = self.args.seed
        for k in ("step_frames", "gap_frames", "shot_frames"):
            if k in raw:
                raw[k] = tuple(raw[k])
        try:
            cfg = SynthConfig(**raw)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"[synth]: {exc}") from None
        self.seeds.append(cfg.seed)
        self.config["synth"] = cfg.to_dict()
        return cfg


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True))
    return path


def _sort_params(a):
    from .preproc import SortParams

    return SortParams(iou_threshold=a.iou_threshold, max_age=a.max_age, min_hits=a.min_hits)


def _load_corpus(ctx: Context, root, t: int, mode: str):
    from .core import load_corpus

    ctx.input(root, "dir")
    try:
        return load_corpus(root, t, mode)
    except FileNotFoundError as exc:
        raise ValidationError(f"{root}: incomplete corpus ({exc.filename} missing)") from None


def _select(ds: LabeledDataset, split: str) -> LabeledDataset:
    return ds if split == "all" else ds.split(split)


def _domain_items(source, target, domain: str) -> list[LabeledDataset]:
    return {"source": [source], "target": [target], "all": [source, target]}[domain]


def _checkpoint(ctx: Context, path):
    from .checkpoint import load_checkpoint

    ctx.input(path, "dir")
    return load_checkpoint(path)


def _log_epoch(msg: str):
    log.info(msg)


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_synth(args, ctx: Context) -> list[Path]:
    from .synthdata import frames_and_views, gap_probe, gen_synthetic_corpus, write_corpus

    cfg = ctx.synth_config(n_source=args.n_source, n_target=args.n_target, gap=args.gap, t=args.t, d=args.d)
    corpus = gen_synthetic_corpus(cfg)
    written = write_corpus(corpus, ctx.out)
    probed = [corpus.source, corpus.target["VC"]]
    probe = gap_probe(probed, probe_seed=cfg.seed)
    n_views = len(np.unique(frames_and_views(probed)[1]))
    written.append(_write_json(ctx.out / "gap_probe.json", {"accuracy": probe, "chance": 1.0 / n_views}))
    log.info("wrote %d source and %d target videos; raw view probe %.3f",
             len(corpus.source), len(corpus.target["V"]), probe)
    return written


def cmd_label_views(args, ctx: Context) -> list[Path]:
    from .core import write_view_track
    from .preproc import label_views, load_detections, track_sort, tracks_to_json

    dets = [d for d in load_detections(ctx.input(args.detections)) if d.kind == "face"]
    n = args.num_frames if args.num_frames is not None else max((d.frame_index + 1 for d in dets), default=0)
    tracks = track_sort(dets, _sort_params(args), kind="face")
    views = label_views(tracks, n, args.window)
    ctx.config["label_views"] = {"num_frames": n, "window": args.window}
    views_path = ctx.out / "views.json"
    write_view_track(views_path, views)
    return [views_path, _write_json(ctx.out / "face_tracks.json", tracks_to_json(tracks))]


def cmd_track_crop(args, ctx: Context) -> list[Path]:
    from .preproc import hand_crop_boxes, load_detections, track_sort, tracks_to_json

    dets = [d for d in load_detections(ctx.input(args.detections)) if d.kind == "hand"]
    tracks = track_sort(dets, _sort_params(args), kind="hand")
    crops = hand_crop_boxes(tracks, tuple(args.frame_size), args.margin, args.num_frames)
    return [
        _write_json(ctx.out / "crops.json", {"frame_size": list(args.frame_size), "margin": args.margin,
                                             "crops": [list(c) for c in crops]}),
        _write_json(ctx.out / "hand_tracks.json", tracks_to_json(tracks)),
    ]


def cmd_refine_masks(args, ctx: Context) -> list[Path]:
    from .preproc import load_mask_file, refine_frame, save_mask_file

    frames, shape = load_mask_file(ctx.input(args.masks))
    refined = [refine_frame(f, args.min_overlap) for f in frames]
    path = ctx.out / "refined_masks.json"
    save_mask_file(path, refined, shape)
    return [path]


def _load_crops(path, n: int):
    data = json.loads(Path(path).read_text())
    crops = data["crops"] if isinstance(data, dict) else data
    if len(crops) != n:
        raise ValidationError(f"{path}: {len(crops)} crops for {n} frames")
    return [tuple(c) for c in crops]


def cmd_extract_features(args, ctx: Context) -> list[Path]:
    from .core import write_features
    from .features import extract_video_features, toy_encoder
    from .preproc import load_mask_file

    frames = np.load(ctx.input(args.frames))
    if frames.ndim not in (3, 4):
        raise ValidationError(f"{args.frames}: expected T×H×W or T×H×W×C frames, got shape {frames.shape}")
    crops = _load_crops(ctx.input(args.crops), len(frames)) if args.crops else None
    masks = None
    if args.masks:
        masks, shape = load_mask_file(ctx.input(args.masks))
        if len(masks) != len(frames) or tuple(shape) != frames.shape[1:3]:
            raise ValidationError(f"{args.masks}: masks do not match the frame stack")
    elif args.mode == "VC+HO":
        raise ValidationError("mode VC+HO needs --masks")
    enc = toy_encoder(args.encoder_seed, args.dim)
    ctx.seeds.append(args.encoder_seed)
    X = extract_video_features(enc, frames, args.mode, crops, masks)
    vid = args.video_id or Path(args.frames).stem
    stem = ctx.out / vid
    write_features(stem, vid, X, args.fps, mode=args.mode)
    ctx.config["extract_features"] = {"mode": args.mode, "dim": args.dim, "fps": args.fps}
    return [stem.with_suffix(".bin"), stem.with_suffix(".json")]


def cmd_segment_markers(args, ctx: Context) -> list[Path]:
    from .preproc import load_markers, segment_by_markers

    flags = load_markers(ctx.input(args.markers), args.num_frames)
    segs = segment_by_markers(flags, args.fps, args.debounce)
    return [_write_json(ctx.out / "segments.json", {"fps": args.fps, "segments": [s.as_list() for s in segs]})]


def _history(result) -> dict:
    return {"losses": result.losses, "selection": result.selection, "best_epoch": result.best_epoch,
            "diverged": result.diverged, "best_report": result.reports[result.best_epoch]
            if result.best_epoch is not None and result.reports else None}


def cmd_pretrain(args, ctx: Context) -> list[Path]:
    from .trainer import run_stage

    cfg = ctx.train_config(stage=args.stage)
    source, target = _load_corpus(ctx, args.corpus, cfg.t, cfg.mode)
    if not len(source):
        raise ValidationError(f"{args.corpus}: no source videos")
    vocab = build_vocab([source, target])
    result = run_stage(cfg, source, None, vocab, out_dir=ctx.out / "checkpoint", log=_log_epoch)
    return [result.checkpoint, _write_json(ctx.out / "history.json", _history(result))]


def cmd_finetune(args, ctx: Context) -> list[Path]:
    from .trainer import SECTIONS, run_stage

    _, ck_cfg, vocab, _, tag = _checkpoint(ctx, args.init)
    if tag != "pt":
        raise ValidationError(f"{args.init}: stage tag {tag!r}; fine-tuning starts from a pre-training checkpoint")
    cfg = ctx.train_config(stage=args.stage, **{k: getattr(ck_cfg, k) for k in SECTIONS["model"]})
    source, target = _load_corpus(ctx, args.corpus, cfg.t, cfg.mode)
    if not len(target):
        raise ValidationError(f"{args.corpus}: no target videos")
    result = run_stage(cfg, source, target, vocab, init=args.init, out_dir=ctx.out / "checkpoint", log=_log_epoch)
    return [result.checkpoint, _write_json(ctx.out / "history.json", _history(result))]


def cmd_evaluate(args, ctx: Context) -> list[Path]:
    from .core import load_annotations
    from .metrics import evaluate, load_predictions, save_predictions
    from .trainer import predict

    outputs = []
    if args.pred:
        if not args.ref:
            raise ValidationError("--pred needs --ref")
        preds = load_predictions(ctx.input(args.pred))
        ref_path = ctx.input(args.ref)
        domains = ("source", "target") if args.domain == "all" else (args.domain,)
        refs = {it.video_id: it.annotation for d in domains
                for it in _select(load_annotations(ref_path, d), args.split or "all")}
    elif args.checkpoint and args.corpus:
        model, cfg, vocab, _, _ = _checkpoint(ctx, args.checkpoint)
        source, target = _load_corpus(ctx, args.corpus, cfg.t, args.mode or cfg.mode)
        split = args.split or "eval"
        preds, refs = {}, {}
        for ds in _domain_items(source, target, args.domain):
            sel = _select(ds, split)
            preds.update(predict(model, sel, vocab, cfg))
            refs.update({it.video_id: it.annotation for it in sel})
        outputs.append(ctx.out / "predictions.json")
        save_predictions(outputs[-1], preds)
    else:
        raise ValidationError("evaluate needs --pred/--ref or --checkpoint/--corpus")
    unknown = sorted(set(preds) - set(refs))
    if unknown:
        log.warning("%d predicted videos have no reference and are ignored: %s", len(unknown), unknown[:5])
    report = evaluate(preds, refs)
    report.save(ctx.out / "metrics.json")
    print(report.summary_header() + "\tsum_METEOR")
    print(report.summary_row() + f"\t{report.sum_meteor:.6f}")
    return outputs + [ctx.out / "metrics.json", ctx.out / "metrics.tsv"]


def cmd_eval_gt_proposals(args, ctx: Context) -> list[Path]:
    import torch

    from .captioner import denormalize, generate_with_gt_proposals, gt_proposal_queries
    from .metrics import evaluate, save_predictions, tiou
    from .core import TimeSegment
    from .trainer import frame_features

    model, cfg, vocab, _, _ = _checkpoint(ctx, args.checkpoint)
    source, target = _load_corpus(ctx, args.corpus, cfg.t, args.mode or cfg.mode)
    assignments, preds, refs = {}, {}, {}
    model.eval()
    with torch.no_grad():
        for ds in _domain_items(source, target, args.domain):
            for it in _select(ds, args.split):
                ann = it.annotation
                out = model.captioner(frame_features(model, it))
                se = denormalize(out.segments, ann.duration)
                queries = gt_proposal_queries(out, ann.segments, ann.duration)
                assignments[it.video_id] = [
                    {"gt": g.as_list(), "query": q, "query_segment": [float(se[q, 0]), float(se[q, 1])],
                     "tiou": tiou(g, TimeSegment(float(se[q, 0]), float(se[q, 1])))}
                    for g, q in zip(ann.segments, queries)
                ]
                preds[it.video_id] = generate_with_gt_proposals(out, ann.segments, ann.duration, vocab,
                                                                cfg.max_caption_len)
                refs[it.video_id] = ann
    report = evaluate(preds, refs)
    report.save(ctx.out / "metrics.json")
    save_predictions(ctx.out / "predictions.json", preds)
    return [_write_json(ctx.out / "assignments.json", assignments), ctx.out / "predictions.json",
            ctx.out / "metrics.json", ctx.out / "metrics.tsv"]


def cmd_dump_embeddings(args, ctx: Context) -> list[Path]:
    from .trainer import dump_embeddings

    model, cfg, _, _, _ = _checkpoint(ctx, args.checkpoint)
    source, target = _load_corpus(ctx, args.corpus, cfg.t, args.mode or cfg.mode)
    datasets = [_select(ds, args.split) for ds in _domain_items(source, target, args.domain)]
    path = ctx.out / "embeddings.tsv"
    n = dump_embeddings(model, datasets, path)
    log.info("wrote %d embedding rows", n)
    return [path]


def cmd_plot_timeline(args, ctx: Context) -> list[Path]:
    from . import plots

    if args.embeddings:
        from .trainer import load_embeddings

        _, _, labels, X = load_embeddings(ctx.input(args.embeddings))
        return plots.projection_figure(labels, X, ctx.out)
    if not (args.pred and args.ref and args.video):
        raise ValidationError("plot-timeline needs --embeddings, or --pred, --ref and --video")
    from .core import load_annotations
    from .metrics import load_predictions

    preds = load_predictions(ctx.input(args.pred))
    ref_path = ctx.input(args.ref)
    refs = {it.video_id: it.annotation for d in ("source", "target") for it in load_annotations(ref_path, d)}
    if args.video not in refs:
        raise ValidationError(f"{args.ref}: no video {args.video!r}")
    return plots.timeline_figure(args.video, refs[args.video], preds.get(args.video, []), ctx.out)


def cmd_sweep_adv(args, ctx: Context) -> list[Path]:
    from .trainer import run_stage

    cfg = ctx.train_config(stage="VI-PT")
    if args.corpus:
        source, target = _load_corpus(ctx, args.corpus, cfg.t, cfg.mode)
    else:
        from .synthdata import gen_synthetic_corpus

        corpus = gen_synthetic_corpus(ctx.synth_config(t=cfg.t))
        source, target = corpus.source, corpus.target[cfg.mode]
    vocab = build_vocab([source, target])
    rows = []
    for lam in args.values:
        r = run_stage(cfg.replace(lambda_adv=lam), source, None, vocab, log=_log_epoch)
        rep = r.reports[r.best_epoch] if r.best_epoch is not None and r.reports else None
        rows.append({"lambda_adv": lam, "best_epoch": r.best_epoch, "report": rep,
                     "sum_METEOR": rep["sum_METEOR"] if rep else float("-inf")})
    best = max(range(len(rows)), key=lambda i: (rows[i]["sum_METEOR"], -i))
    cols = ["lambda_adv", "dvc_B4", "dvc_METEOR", "dvc_CIDEr", "soda_METEOR", "soda_CIDEr", "sum_METEOR", "selected"]
    lines = ["\t".join(cols)]
    for i, row in enumerate(rows):
        rep = row["report"] or {"dvc_eval": {"B4": 0, "METEOR": 0, "CIDEr": 0}, "soda": {"METEOR": 0, "CIDEr": 0}}
        vals = [rep["dvc_eval"]["B4"], rep["dvc_eval"]["METEOR"], rep["dvc_eval"]["CIDEr"],
                rep["soda"]["METEOR"], rep["soda"]["CIDEr"], row["sum_METEOR"]]
        lines.append("\t".join([repr(row["lambda_adv"])] + [f"{v:.6f}" for v in vals] + ["*" if i == best else ""]))
    table = "\n".join(lines) + "\n"
    print(table, end="")
    (ctx.out / "sweep.tsv").write_text(table)
    ctx.config["sweep"] = {"values": list(args.values)}
    return [ctx.out / "sweep.tsv",
            _write_json(ctx.out / "sweep.json", {"rows": rows, "selected": rows[best]["lambda_adv"]})]


HANDLERS = {
    "gen-synth": cmd_gen_synth,
    "label-views": cmd_label_views,
    "track-crop": cmd_track_crop,
    "refine-masks": cmd_refine_masks,
    "extract-features": cmd_extract_features,
    "segment-markers": cmd_segment_markers,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "eval-gt-proposals": cmd_eval_gt_proposals,
    "dump-embeddings": cmd_dump_embeddings,
    "plot-timeline": cmd_plot_timeline,
    "sweep-adv": cmd_sweep_adv,
}


# ---------------------------------------------------------------------------
# parser

def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("need one or more non-negative values")
    return vals


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _Usage(f"{self.prog}: error: {message}")


class _Usage(Exception):
    pass


def _train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr-model", type=float)
    g.add_argument("--lr-classifier", type=float)
    g.add_argument("--lambda-src", type=float)
    g.add_argument("--lambda-adv", type=float)
    g.add_argument("--t", type=int, help="frames per video after resampling")
    g.add_argument("--mode", choices=("V", "VC", "VC+HO"), help="target feature representation")
    g.add_argument("--d-model", type=int)
    g.add_argument("--num-queries", type=int)
    g.add_argument("--nhead", type=int)
    g.add_argument("--threads", type=int, help="torch worker threads")


def _sort_flags(p):
    p.add_argument("--iou-threshold", type=float, default=0.3)
    p.add_argument("--max-age", type=int, default=5)
    p.add_argument("--min-hits", type=int, default=1)


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML file with [data]/[model]/[train]/[adv], [synth] "
                                         "and per-subcommand sections")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default=".", help="output directory (manifest.json goes here)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="viewdvc", description="View-invariant dense video captioning toolkit.")
    parser.add_argument("--version", action="version", version=f"viewdvc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subs = {}

    def add(name, help_):
        subs[name] = sub.add_parser(name, parents=[common], help=help_, description=help_)
        return subs[name]

    p = add("gen-synth", "Generate a synthetic exo/ego corpus.")
    p.add_argument("--n-source", type=int)
    p.add_argument("--n-target", type=int)
    p.add_argument("--gap", type=float, help="view gap severity")
    p.add_argument("--t", type=int, help="frames per resampled video")
    p.add_argument("--d", type=int, help="feature width")

    p = add("label-views", "Track faces and label frames Exo / EgoLike.")
    p.add_argument("--detections", required=True, help="JSONL detections (kind 'face' is used)")
    p.add_argument("--num-frames", type=int)
    p.add_argument("--window", type=int, default=9, help="majority smoothing window")
    _sort_flags(p)

    p = add("track-crop", "Track hands and emit stabilized per-frame crops.")
    p.add_argument("--detections", required=True, help="JSONL detections (kind 'hand' is used)")
    p.add_argument("--frame-size", type=int, nargs=2, metavar=("W", "H"), required=True)
    p.add_argument("--num-frames", type=int)
    p.add_argument("--margin", type=float, default=0.25)
    _sort_flags(p)

    p = add("refine-masks", "Swap interaction masks for best-overlapping proposals.")
    p.add_argument("--masks", required=True)
    p.add_argument("--min-overlap", type=float, default=0.5)

    p = add("extract-features", "Encode a frame stack with the reference encoder.")
    p.add_argument("--frames", required=True, help=".npy array, T×H×W or T×H×W×C")
    p.add_argument("--mode", choices=("V", "VC", "VC+HO"), default="V")
    p.add_argument("--crops", help="crops.json from track-crop")
    p.add_argument("--masks", help="mask file with hands/obj1/obj2 per frame")
    p.add_argument("--dim", type=int, default=2048)
    p.add_argument("--encoder-seed", type=int, default=0)
    p.add_argument("--fps", type=float, default=1.0)
    p.add_argument("--video-id")

    p = add("segment-markers", "Cut step segments at marker bursts.")
    p.add_argument("--markers", required=True, help="JSON list of booleans or marker frame indices")
    p.add_argument("--fps", type=float, required=True)
    p.add_argument("--debounce", type=int, default=3)
    p.add_argument("--num-frames", type=int)

    p = add("pretrain", "PT or VI-PT on the source videos of a corpus.")
    p.add_argument("--corpus", required=True)
    p.add_argument("--stage", choices=("PT", "VI-PT"), default="VI-PT")
    _train_flags(p)

    p = add("finetune", "FT or VI-FT on target plus under-sampled source videos.")
    p.add_argument("--corpus", required=True)
    p.add_argument("--init", required=True, help="pre-training checkpoint directory")
    p.add_argument("--stage", choices=("FT", "VI-FT"), default="VI-FT")
    _train_flags(p)

    p = add("evaluate", "dvc_eval and SODA for a prediction file or a checkpoint.")
    p.add_argument("--pred")
    p.add_argument("--ref")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--mode", choices=("V", "VC", "VC+HO"))
    p.add_argument("--domain", choices=("source", "target", "all"), default="target")
    p.add_argument("--split", choices=("train", "eval", "all"),
                   help="default: all videos for --pred, the eval split for --checkpoint")

    p = add("eval-gt-proposals", "Caption ground-truth segments with their best-overlapping queries.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=("V", "VC", "VC+HO"))
    p.add_argument("--domain", choices=("source", "target", "all"), default="target")
    p.add_argument("--split", choices=("train", "eval", "all"), default="eval")

    p = add("dump-embeddings", "Write converter outputs with view labels.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=("V", "VC", "VC+HO"))
    p.add_argument("--domain", choices=("source", "target", "all"), default="all")
    p.add_argument("--split", choices=("train", "eval", "all"), default="all")

    p = add("plot-timeline", "Plot a caption timeline or a 2-D projection of embeddings.")
    p.add_argument("--pred")
    p.add_argument("--ref")
    p.add_argument("--video")
    p.add_argument("--embeddings")

    p = add("sweep-adv", "VI-PT once per lambda_adv value; select by sum_METEOR.")
    p.add_argument("--values", type=_float_list, default=[0.01, 0.1, 1.0])
    p.add_argument("--corpus", help="corpus root; a synthetic corpus is generated when omitted")
    _train_flags(p)

    p = sub.add_parser("replay", help="Re-run a manifest and compare outputs bit for bit.")
    p.add_argument("manifest", help="manifest.json or the directory holding it")
    p.add_argument("--out", help="where the re-run writes (default: <original out>.replay)")
    p.add_argument("-v", "--verbose", action="store_true")
    subs["replay"] = p
    return parser, subs


def _load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"{path}: no such config file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _apply_config_defaults(toml: dict, command: str, subs: dict, origin: str):
    from .trainer import SECTIONS

    for section in toml:
        if section not in SECTIONS and section != "synth" and section not in HANDLERS:
            raise ValidationError(f"{origin}: unknown section [{section}]")
    values = toml.get(command, {})
    if not isinstance(values, dict):
        raise ValidationError(f"{origin}: [{command}] must be a table")
    p = subs[command]
    dests = {a.dest for a in p._actions} - {"help", "config", "out"}
    norm = {k.replace("-", "_"): v for k, v in values.items()}
    bad = sorted(set(norm) - dests)
    if bad:
        raise ValidationError(f"{origin}: [{command}] has no option(s) {bad}")
    for action in p._actions:
        if action.dest in norm:
            action.required = False
    p.set_defaults(**norm)


# ---------------------------------------------------------------------------
# execution

def _execute(argv: list[str]) -> int:
    parser, subs = build_parser()
    # the config file must be read first so its sections can act as option defaults
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in subs), None)
    toml = {}
    if known.config and command in HANDLERS:
        toml = _load_toml(known.config)
        _apply_config_defaults(toml, command, subs, known.config)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    if args.command == "replay":
        return _replay(args)
    ctx = Context(args, toml)
    if args.config:
        ctx.inputs.append(args.config)
    ctx.config["options"] = {k: v for k, v in sorted(vars(args).items())
                             if k not in ("command", "verbose")}
    ctx.out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    written = HANDLERS[args.command](args, ctx)
    manifest = RunManifest(
        command=args.command, argv=list(argv), cwd=os.getcwd(), config=ctx.config,
        seeds=sorted(set(ctx.seeds)), inputs=hash_inputs(ctx.inputs),
        outputs=expand_outputs([w for w in written if w is not None], ctx.out),
        started_utc=started, wall_clock_s=round(time.perf_counter() - t0, 3), version=__version__,
    )
    manifest.save(ctx.out)
    log.info("wrote %d output files and %s", len(manifest.outputs), ctx.out / "manifest.json")
    return 0


def _with_out(argv: list[str], out: str) -> list[str]:
    res, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        res.append(a)
    return res + ["--out", out]


def _original_out(argv: list[str]) -> str:
    out = "."
    for i, a in enumerate(argv):
        if a == "--out" and i + 1 < len(argv):
            out = argv[i + 1]
        elif a.startswith("--out="):
            out = a.split("=", 1)[1]
    return out


def _replay(args) -> int:
    try:
        m = RunManifest.load(args.manifest)
    except FileNotFoundError:
        raise ValidationError(f"{args.manifest}: no manifest found") from None
    here = os.getcwd()
    out = args.out or os.path.join(m.cwd, _original_out(m.argv).rstrip("/\\") + ".replay")
    out = os.path.abspath(out)
    os.chdir(m.cwd)
    try:
        for path, digest in m.inputs.items():
            if not os.path.exists(path):
                raise ValidationError(f"{path}: input recorded in the manifest is missing")
            if tree_hash(path) != digest:
                raise ValidationError(f"{path}: input content changed since the recorded run")
        code = _execute(_with_out(m.argv, out))
    finally:
        os.chdir(here)
    if code:
        return code
    again = RunManifest.load(out)
    diff = sorted(k for k in set(m.outputs) | set(again.outputs) if m.outputs.get(k) != again.outputs.get(k))
    if diff:
        for k in diff:
            print(f"differs: {k}")
        print(f"replay of {m.command}: {len(diff)} of {len(m.outputs)} outputs differ")
        return EXIT_RUNTIME
    print(f"replay of {m.command}: {len(m.outputs)} outputs bit-identical")
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return _execute(argv)
    except _Usage as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:          # --help / --version
        return int(exc.code or 0) if isinstance(exc.code, int) else EXIT_USAGE
    except (ValidationError, AnnotationError, SegmentationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:           # noqa: BLE001 - the runtime category
        log.debug("traceback", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
