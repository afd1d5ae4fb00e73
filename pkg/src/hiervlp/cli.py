"""Command-line entry point: ``hiervlp <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .data import Dataset, SynthSpec, load_manifest, save_manifest, synthesize_dataset, synthetic_label_names
from .encoders import load_checkpoint, pixel_features
from .errors import EmptyBank, HierVLPError
from .frames import load_frames
from .io import atomic_write_json

log = logging.getLogger("hiervlp")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # single-line usage errors, exit 2
        self.exit(2, f"error: UsageError: {message}\n")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise argparse.ArgumentTypeError(f"no such file: {path}")
    return p


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hiervlp", description="Clip- and video-level contrastive pretraining with a silent-video memory bank.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic manifest")
    s.add_argument("--n-narrative", type=int, required=True, help="number of narrative videos")
    s.add_argument("--n-silent", type=int, required=True, help="number of silent videos")
    s.add_argument("--clips", type=int, required=True, help="clips per video")
    s.add_argument("--concepts", type=int, required=True, help="number of latent concepts")
    s.add_argument("--seed", type=int, default=0, help="generator seed")
    s.add_argument("--out", required=True, help="manifest path to write")
    s.add_argument("--labels-out", help="also write a labels/templates file for eval-zeroshot")

    s = sub.add_parser("pretrain", help="run hierarchical pretraining")
    s.add_argument("--manifest", type=_existing, required=True, help="training manifest (JSON lines)")
    s.add_argument("--config", type=_existing, required=True, help="flat YAML training config")
    s.add_argument("--out", required=True, help="output directory for checkpoints and metrics")
    s.add_argument("--resume", action="store_true", help="continue from the newest checkpoint in --out")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.add_argument("--total-epochs", type=int, help="override total_epochs")
    s.add_argument("--lr", type=float, help="override the peak learning rate")
    s.add_argument("--eq7-literal", "--within-query-only", dest="within_query_only", action="store_true",
                   default=None, help="silent-video loss over the query's own retrieved entries only")

    kb = sub.add_parser("kb", help="memory bank commands, also spelled kb-build / kb-retrieve")
    kb_sub = kb.add_subparsers(dest="kb_command", required=True, parser_class=_Parser)
    for build in (sub.add_parser("kb-build", help="build the silent-video memory bank"),
                  kb_sub.add_parser("build", help="build the silent-video memory bank")):
        build.add_argument("--manifest", type=_existing, required=True, help="manifest with the silent videos")
        build.add_argument("--checkpoint", type=_existing, required=True, help="encoder checkpoint")
        build.add_argument("--out", required=True, help="bank file to write")
    for ret in (sub.add_parser("kb-retrieve", help="query a memory bank with a title"),
                kb_sub.add_parser("retrieve", help="query a memory bank with a title")):
        ret.add_argument("--bank", type=_existing, required=True, help="bank file from kb-build")
        ret.add_argument("--title", required=True, help="video title used as the query")
        ret.add_argument("--k", type=int, default=1, help="number of entries to return")

    s = sub.add_parser("eval-zeroshot", help="zero-shot frame classification")
    s.add_argument("--checkpoint", type=_existing, required=True, help="encoder checkpoint")
    s.add_argument("--manifest", type=_existing, required=True, help="manifest whose clips carry frame_labels")
    s.add_argument("--labels", type=_existing, required=True,
                   help='JSON {"labels": [...], "task": "phase"|"instrument", "templates": {...}}')
    s.add_argument("--prompt-style", choices=["caption", "keyword", "mix"], default="caption",
                   help="prompt template style")
    s.add_argument("--mode", choices=["single", "multi"], default="single",
                   help="single: argmax phase; multi: independent per-class decisions")
    s.add_argument("--threshold", type=float, default=0.5, help="multi mode: positive if sigmoid > threshold")
    s.add_argument("--tau-eval", type=float, default=0.1, help="temperature before the sigmoid (multi mode)")
    s.add_argument("--out", required=True, help="results JSON to write")

    s = sub.add_parser("probe", help="linear-probe frozen visual features")
    s.add_argument("--checkpoint", type=_existing, required=True, help="encoder checkpoint")
    s.add_argument("--manifest", type=_existing, required=True, help="manifest whose clips carry frame_labels")
    s.add_argument("--fraction", type=float, default=1.0, help="share of training videos to sample")
    s.add_argument("--test-fraction", type=float, default=0.3, help="share of videos held out for testing")
    s.add_argument("--seed", type=int, default=0, help="seed for the split and the video sample")
    s.add_argument("--out", required=True, help="results JSON to write")
    return p


# ---------------------------------------------------------------------------

def _frame_table(dataset: Dataset):
    """All labelled frames as (ref, label, video_id) rows."""
    rows = []
    for clip in dataset.clips.values():
        if clip.frame_labels is None:
            continue
        rows.extend((ref, lab, clip.video_id) for ref, lab in zip(clip.frame_refs, clip.frame_labels))
    if not rows:
        raise HierVLPError("manifest has no frame_labels to evaluate against")
    return rows


def _frame_embeddings(encoders, refs: Sequence[str], chunk: int = 256) -> np.ndarray:
    out = []
    for i in range(0, len(refs), chunk):
        frames = load_frames(refs[i : i + chunk], encoders.cfg.image_size)
        out.append(encoders.visual.forward(pixel_features(frames, encoders.cfg.grid))[0])
    return np.concatenate(out)


def cmd_synth(args) -> int:
    spec = SynthSpec(args.n_narrative, args.n_silent, args.clips, args.concepts)
    ds = synthesize_dataset(spec, args.seed)
    save_manifest(ds, args.out)
    if args.labels_out:
        labels = synthetic_label_names(args.concepts)
        templates = {
            lab: {
                "caption": f"A surgical video of {lab}.",
                "phase": lab, "instrument": "unspecified", "medication": "None",
                "goal": f"Complete {lab}",
            }
            for lab in labels
        }
        atomic_write_json(args.labels_out, {"version": __version__, "task": "phase", "labels": labels, "templates": templates})
    print(f"{args.out}\t{len(ds.videos)} videos\t{len(ds.clips)} clips")
    return 0


def cmd_pretrain(args) -> int:
    from .trainer import load_train_config, run_pretraining

    overrides = {
        "seed": args.seed, "total_epochs": args.total_epochs, "lr": args.lr,
        "within_query_only": args.within_query_only,
    }
    cfg = load_train_config(args.config, overrides)
    dataset = load_manifest(args.manifest)
    result = run_pretraining(dataset, cfg, args.out, resume=args.resume)
    print(result.checkpoint)
    return 0


def cmd_kb_build(args) -> int:
    from .memory_bank import build_bank, save_bank

    dataset = load_manifest(args.manifest)
    encoders, meta, _ = load_checkpoint(args.checkpoint)
    bank = build_bank(dataset.silent_videos(), encoders, dataset)
    save_bank(bank, args.out, provenance={
        "version": __version__, "manifest": str(args.manifest), "checkpoint": str(args.checkpoint),
        "config_hash": meta.get("config_hash"),
    })
    print(f"{args.out}\t{len(bank)} entries")
    return 0


def cmd_kb_retrieve(args) -> int:
    from .memory_bank import load_bank

    bank = load_bank(args.bank)
    if len(bank) == 0:
        raise EmptyBank(f"bank {args.bank} has no entries")
    res = bank.retrieve(bank.embed_query(args.title), args.k)
    for eid, score in res.entries:
        print(f"{eid}\t{score:.6f}")
    return 0


def _load_label_spec(path):
    import json

    from .evaluation import load_templates

    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(doc, list):
        doc = {"labels": doc}
    labels = list(doc["labels"])
    templates = doc.get("templates") or load_templates(doc.get("task", "phase"))
    return labels, templates


def cmd_eval_zeroshot(args) -> int:
    from .evaluation import build_prompts, compute_metrics, embed_prompts, zero_shot_classify

    labels, templates = _load_label_spec(args.labels)
    dataset = load_manifest(args.manifest)
    encoders, meta, _ = load_checkpoint(args.checkpoint)
    prompt_set = build_prompts(labels, args.prompt_style, templates)
    rows = _frame_table(dataset)
    index = {lab: i for i, lab in enumerate(labels)}
    emb = _frame_embeddings(encoders, [r[0] for r in rows])
    res = zero_shot_classify(emb, embed_prompts(prompt_set, encoders), args.mode, args.threshold, args.tau_eval)
    if args.mode == "single":
        truth = np.array([index[r[1]] for r in rows])
        metrics = compute_metrics(res.predictions, truth, "single", n_classes=len(labels))
    else:
        truth = np.zeros((len(rows), len(labels)), dtype=bool)
        for i, r in enumerate(rows):
            for lab in (r[1] if isinstance(r[1], tuple) else (r[1],)):
                truth[i, index[lab]] = True
        metrics = compute_metrics(res.predictions, truth, "multi", scores=res.scores)
    per_class = {labels[c]: v for c, v in metrics.pop("per_class").items()}
    atomic_write_json(args.out, {
        "version": __version__, "command": "eval-zeroshot", "n_frames": len(rows),
        "config": {k: str(v) for k, v in vars(args).items() if k != "func"},
        "checkpoint_config_hash": meta.get("config_hash"),
        "metrics": metrics, "per_class": per_class,
    })
    print(" ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    return 0


def cmd_probe(args) -> int:
    from .evaluation import linear_probe, split_videos

    dataset = load_manifest(args.manifest)
    encoders, meta, _ = load_checkpoint(args.checkpoint)
    rows = _frame_table(dataset)
    names = sorted({r[1] for r in rows})
    y = np.array([names.index(r[1]) for r in rows])
    groups = np.array([r[2] for r in rows])
    x = _frame_embeddings(encoders, [r[0] for r in rows])
    train, test = split_videos(groups, y, args.test_fraction, args.seed)
    metrics = linear_probe(x[train], y[train], groups[train], x[test], y[test], args.fraction, args.seed)
    per_class = {names[c]: v for c, v in metrics.pop("per_class").items()}
    atomic_write_json(args.out, {
        "version": __version__, "command": "probe",
        "config": {k: str(v) for k, v in vars(args).items() if k != "func"},
        "checkpoint_config_hash": meta.get("config_hash"),
        "metrics": metrics, "per_class": per_class,
    })
    print(f"accuracy={metrics['accuracy']:.4f} macro_f1={metrics['macro_f1']:.4f}")
    return 0


COMMANDS = {
    "synth": cmd_synth, "pretrain": cmd_pretrain, "kb-build": cmd_kb_build,
    "kb-retrieve": cmd_kb_retrieve, "eval-zeroshot": cmd_eval_zeroshot, "probe": cmd_probe,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        command = f"kb-{args.kb_command}" if args.command == "kb" else args.command
        return COMMANDS[command](args)
    except HierVLPError as exc:
        print(f"error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
