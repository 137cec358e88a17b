"""Command-line entry point wiring every pipeline stage.

Stages: synth, propose, pretrain-embed, train, detect, postprocess, eval,
render, plus `run` which chains them. Exit codes: 0 success, 2 usage error,
3 config validation failure, 4 missing input file. `--help` on any subcommand
lists every config key with its default.
"""

import os

# stages are sequential and single threaded; force serial numeric kernels
# before numpy loads so fixed-seed runs are byte reproducible
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
             "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ[_var] = "1"

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import nn
from .classifier import Detection, Model, build_labeled_page, detect, \
    load_detections, save_detections, train_model
from .config import ConfigError, RunConfig, describe_keys, load_config, \
    stage_rng, stage_seed
from .embeddings import EmbeddingNet, PageSample, evaluate_pairs, pretrain
from .features import Backbone
from .metrics import evaluate_corpus, load_annotations, save_report
from .neighbors import build_graph
from .page import load_page
from .postprocess import load_tokens, postprocess_detections
from .proposals import load_proposals, propose_page, save_proposals
from .synth import generate_corpus, load_corpus

EXIT_CONFIG = 3
EXIT_MISSING = 4

RUN_STAGES = ("synth", "propose", "pretrain", "train",
              "detect", "postprocess", "eval")

_PALETTE = [
    (220, 38, 38), (37, 99, 235), (5, 150, 105), (217, 119, 6),
    (124, 58, 237), (219, 39, 119), (8, 145, 178), (101, 163, 13),
    (190, 18, 60), (2, 132, 199), (120, 113, 108), (77, 124, 15),
]


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _parse_value(raw: str):
    """Interpret an override value as TOML; fall back to a bare string."""
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def _load_cfg(args) -> RunConfig:
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key.strip()] = _parse_value(raw.strip())
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _page_samples(cfg: RunConfig, bundles) -> list[PageSample]:
    samples = []
    for b in bundles:
        props = propose_page(b.page, cfg.grid, cfg.binarize)
        graph = build_graph(props, cfg.model.delta_neighbor)
        samples.append(PageSample(b.page, props, graph))
    return samples


def _new_model(cfg: RunConfig, rng: np.random.Generator) -> Model:
    m = cfg.model
    return Model(classes=m.classes, feature_cfg=cfg.features, n_heads=m.n_heads,
                 head_dim=m.head_dim, embed_hidden=m.embed_hidden,
                 head_hidden=tuple(m.head_hidden), dropout=m.dropout,
                 delta_neighbor=m.delta_neighbor, use_context=m.use_context,
                 grid_cfg=cfg.grid, bin_cfg=cfg.binarize, rng=rng)


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    seed = stage_seed(cfg.seed, "synth")
    manifest = generate_corpus(cfg.synth, args.pages, seed, args.out)
    print(f"wrote {manifest['n_pages']} pages ({cfg.synth.mode}) to {args.out}")
    return 0


def cmd_propose(args) -> int:
    cfg = _load_cfg(args)
    page = load_page(_require(args.image, "page image"))
    props = propose_page(page, cfg.grid, cfg.binarize)
    neighbors = None
    if args.neighbors:
        neighbors = build_graph(props, cfg.model.delta_neighbor).adjacency
    save_proposals(props, args.out, neighbors)
    print(f"{len(props)} proposals -> {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    bundles = load_corpus(_require(args.corpus, "corpus directory"))
    samples = _page_samples(cfg, bundles)
    rng = stage_rng(cfg.seed, "pretrain")
    backbone = Backbone(cfg.features, rng)
    net = EmbeddingNet(cfg.features.flat_dim, cfg.model.embed_hidden, rng)
    p = cfg.pretrain
    losses = pretrain(samples, net, backbone, rng, epochs=p.epochs,
                      k_neg=p.k_neg, lr=p.lr, weight_decay=p.weight_decay,
                      freeze_backbone=p.freeze_backbone, log=print)
    mean_pos, mean_neg = evaluate_pairs(samples, net, backbone, rng, p.k_neg)
    tensors = {**backbone.tensors(), **net.tensors()}
    meta = {"stage": "pretrain", "warp_size": cfg.features.warp_size,
            "conv_channels": list(cfg.features.conv_channels),
            "kernel": cfg.features.kernel, "stride": cfg.features.stride,
            "pool_grid": cfg.features.pool_grid,
            "embed_hidden": cfg.model.embed_hidden,
            "epochs": p.epochs, "k_neg": p.k_neg, "losses": losses,
            "train_mean_pos": mean_pos, "train_mean_neg": mean_neg}
    nn.save_checkpoint(args.out, tensors, meta)
    print(f"pretrained embeddings -> {args.out} "
          f"(pos {mean_pos:.3f}, neg {mean_neg:.3f})")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    bundles = load_corpus(_require(args.corpus, "corpus directory"))
    rng = stage_rng(cfg.seed, "train")
    model = _new_model(cfg, rng)
    if args.pretrained:
        model.load_pretrained(_require(args.pretrained, "pretraining checkpoint"))
    items = [build_labeled_page(model, b.page, b.annots) for b in bundles]
    val_items = None
    if args.val_corpus:
        val_bundles = load_corpus(_require(args.val_corpus, "corpus directory"))
        val_items = [build_labeled_page(model, b.page, b.annots) for b in val_bundles]
    t = cfg.train
    train_model(model, items, rng, epochs=t.epochs, batch_size=t.batch_size,
                lr=t.lr, weight_decay=t.weight_decay, val_items=val_items,
                log=print)
    model.save(args.out)
    print(f"model -> {args.out}")
    return 0


def cmd_detect(args) -> int:
    _load_cfg(args)  # validates config even though the checkpoint wins
    model = Model.load(_require(args.model, "model checkpoint"))
    page = load_page(_require(args.image, "page image"))
    dets = detect(model, page)
    save_detections(dets, args.out)
    print(f"{len(dets)} detections -> {args.out}")
    return 0


def cmd_postprocess(args) -> int:
    _load_cfg(args)
    dets = load_detections(_require(args.detections, "detections file"))
    tokens = None
    if args.tokens:
        tokens = load_tokens(_require(args.tokens, "tokens file"))
    out = postprocess_detections(dets, tokens)
    save_detections(out, args.out)
    print(f"{len(dets)} detections -> {len(out)} after rules -> {args.out}")
    return 0


def _paired_files(det_path: Path, ann_path: Path) -> list[tuple[Path, Path]]:
    """Same-stem pairing between a detections dir and an annotations dir."""
    if det_path.is_file() and ann_path.is_file():
        return [(det_path, ann_path)]
    if not (det_path.is_dir() and ann_path.is_dir()):
        raise ValueError("detections and annotations must both be files or both directories")
    pairs = []
    for ann in sorted(ann_path.glob("*.json")):
        det = det_path / ann.name
        if not det.exists():
            raise FileNotFoundError(f"detections for {ann.stem} not found: {det}")
        pairs.append((det, ann))
    if not pairs:
        raise ValueError(f"no annotation files under {ann_path}")
    return pairs


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    det_path = _require(args.detections, "detections path")
    ann_path = _require(args.annotations, "annotations path")
    pages = [(load_detections(d), load_annotations(a))
             for d, a in _paired_files(det_path, ann_path)]
    report = evaluate_corpus(pages, cfg.model.classes,
                             iou_thresh=cfg.eval.iou_thresh,
                             strict_fp=cfg.eval.strict_fp)
    save_report(report, args.out)
    agg = report.aggregate
    map_txt = "n/a" if report.map_value is None else f"{report.map_value:.4f}"
    print(f"{len(pages)} pages: mAP {map_txt}, F1 {agg['f1']:.4f} -> {args.out}")
    return 0


def _class_colors(classes: list[str]) -> dict:
    return {c: _PALETTE[i % len(_PALETTE)] for i, c in enumerate(classes)}


def _render_boxes(page, boxes: list) -> Image.Image:
    """boxes: (BBox, label or None, color). Rectangles sit on exact box pixels."""
    img = Image.fromarray(page.pixels).convert("RGB")
    draw = ImageDraw.Draw(img)
    for box, label, color in boxes:
        if box.x1 > page.width or box.y1 > page.height:
            raise ValueError(f"box {box.to_list()} exceeds page "
                             f"{page.width}x{page.height}")
        draw.rectangle([box.x0, box.y0, box.x1 - 1, box.y1 - 1], outline=color)
        if label:
            draw.text((box.x0 + 2, box.y0 + 1), label, fill=color)
    return img


def cmd_render(args) -> int:
    cfg = _load_cfg(args)
    page = load_page(_require(args.image, "page image"))
    boxes = []
    if args.detections:
        dets = load_detections(_require(args.detections, "detections file"))
        colors = _class_colors(list(cfg.model.classes)
                               + sorted({d.cls for d in dets} - set(cfg.model.classes)))
        boxes = [(d.bbox, f"{d.cls} {d.score:.2f}", colors[d.cls]) for d in dets]
    else:
        props, _ = load_proposals(_require(args.proposals, "proposals file"))
        if (props.page_width, props.page_height) != (page.width, page.height):
            raise ValueError(
                f"proposals are for a {props.page_width}x{props.page_height} page, "
                f"image is {page.width}x{page.height}")
        boxes = [(b, None, _PALETTE[1]) for b in props]
    _render_boxes(page, boxes).save(args.out, format="PNG")
    print(f"{len(boxes)} boxes -> {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    stages = [s.strip() for s in args.stages.split(",") if s.strip()]
    unknown = [s for s in stages if s not in RUN_STAGES]
    if unknown:
        raise ConfigError(f"unknown stage(s) {unknown}; valid: {', '.join(RUN_STAGES)}")
    stages = [s for s in RUN_STAGES if s in stages]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = {name: out / "corpus" / name for name in ("pretrain", "train", "test")}
    embed_path = out / "embed.json"
    model_path = out / "model.json"

    if "synth" in stages:
        base = stage_seed(cfg.seed, "synth")
        sizes = {"pretrain": cfg.run.pretrain_pages, "train": cfg.run.train_pages,
                 "test": cfg.run.test_pages}
        for k, name in enumerate(("pretrain", "train", "test")):
            generate_corpus(cfg.synth, sizes[name], base + (k,), corpus[name])
            print(f"[synth] {sizes[name]} pages -> {corpus[name]}")

    if "propose" in stages:
        prop_dir = out / "proposals"
        prop_dir.mkdir(exist_ok=True)
        bundles = load_corpus(_require(corpus["test"], "test corpus"))
        for b in bundles:
            props = propose_page(b.page, cfg.grid, cfg.binarize)
            adj = build_graph(props, cfg.model.delta_neighbor).adjacency
            save_proposals(props, prop_dir / f"{b.page_id}.json", adj)
        print(f"[propose] {len(bundles)} pages -> {prop_dir}")

    if "pretrain" in stages:
        bundles = load_corpus(_require(corpus["pretrain"], "pretraining corpus"))
        samples = _page_samples(cfg, bundles)
        rng = stage_rng(cfg.seed, "pretrain")
        backbone = Backbone(cfg.features, rng)
        net = EmbeddingNet(cfg.features.flat_dim, cfg.model.embed_hidden, rng)
        p = cfg.pretrain
        pretrain(samples, net, backbone, rng, epochs=p.epochs, k_neg=p.k_neg,
                 lr=p.lr, weight_decay=p.weight_decay,
                 freeze_backbone=p.freeze_backbone,
                 log=lambda msg: print(f"[pretrain] {msg}"))
        nn.save_checkpoint(embed_path, {**backbone.tensors(), **net.tensors()},
                           {"stage": "pretrain"})
        print(f"[pretrain] embeddings -> {embed_path}")

    if "train" in stages:
        bundles = load_corpus(_require(corpus["train"], "training corpus"))
        rng = stage_rng(cfg.seed, "train")
        model = _new_model(cfg, rng)
        model.load_pretrained(_require(embed_path, "pretraining checkpoint"))
        items = [build_labeled_page(model, b.page, b.annots) for b in bundles]
        t = cfg.train
        train_model(model, items, rng, epochs=t.epochs, batch_size=t.batch_size,
                    lr=t.lr, weight_decay=t.weight_decay,
                    log=lambda msg: print(f"[train] {msg}"))
        model.save(model_path)
        print(f"[train] model -> {model_path}")

    if "detect" in stages:
        model = Model.load(_require(model_path, "model checkpoint"))
        det_dir = out / "detections"
        det_dir.mkdir(exist_ok=True)
        bundles = load_corpus(_require(corpus["test"], "test corpus"))
        total = 0
        for b in bundles:
            dets = detect(model, b.page)
            save_detections(dets, det_dir / f"{b.page_id}.json")
            total += len(dets)
        print(f"[detect] {total} detections over {len(bundles)} pages -> {det_dir}")

    if "postprocess" in stages:
        det_dir = _require(out / "detections", "detections directory")
        post_dir = out / "postprocessed"
        post_dir.mkdir(exist_ok=True)
        bundles = load_corpus(_require(corpus["test"], "test corpus"))
        combined = {}
        for b in bundles:
            dets = load_detections(_require(det_dir / f"{b.page_id}.json",
                                            "detections file"))
            final = postprocess_detections(dets, b.tokens)
            save_detections(final, post_dir / f"{b.page_id}.json")
            combined[b.page_id] = [d.to_dict() for d in final]
        (out / "detections.json").write_text(
            json.dumps(combined, indent=1, sort_keys=True) + "\n")
        print(f"[postprocess] {len(bundles)} pages -> {post_dir}")

    if "eval" in stages:
        post_dir = _require(out / "postprocessed", "postprocessed directory")
        bundles = load_corpus(_require(corpus["test"], "test corpus"))
        pages = []
        for b in bundles:
            dets = load_detections(_require(post_dir / f"{b.page_id}.json",
                                            "detections file"))
            pages.append((dets, b.annots))
        report = evaluate_corpus(pages, cfg.model.classes,
                                 iou_thresh=cfg.eval.iou_thresh,
                                 strict_fp=cfg.eval.strict_fp)
        save_report(report, out / "report.json")
        agg = report.aggregate
        map_txt = "n/a" if report.map_value is None else f"{report.map_value:.4f}"
        print(f"[eval] mAP {map_txt}, F1 {agg['f1']:.4f} -> {out / 'report.json'}")
    return 0


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pagedet",
        description="Page object detection: grid proposals, pretrained region "
                    "embeddings, attention classification and VOC evaluation.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_text, fn):
        p = sub.add_parser(name, help=help_text, description=help_text,
                           epilog=describe_keys(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", metavar="FILE", help="TOML config file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="override one config key, e.g. --set train.epochs=5")
        p.set_defaults(func=fn)
        return p

    p = add("synth", "generate a labeled synthetic corpus", cmd_synth)
    p.add_argument("--spec", dest="config", metavar="FILE",
                   help="alias for --config")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--pages", "--n", type=int, default=20, metavar="N")

    p = add("propose", "write grid proposals for one page image", cmd_propose)
    p.add_argument("image", metavar="IMAGE")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--neighbors", action="store_true",
                   help="include the neighbor adjacency lists")

    p = add("pretrain-embed", "pretrain region embeddings on a corpus", cmd_pretrain)
    p.add_argument("--corpus", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="FILE")

    p = add("train", "train the attention classifier end to end", cmd_train)
    p.add_argument("--corpus", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--val-corpus", metavar="DIR",
                   help="held-out corpus reported each epoch")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--pretrained", metavar="FILE",
                   help="initialize backbone and embeddings from this checkpoint")
    g.add_argument("--from-scratch", action="store_true",
                   help="random initialization for all weights")

    p = add("detect", "run the full detector on one page image", cmd_detect)
    p.add_argument("image", metavar="IMAGE")
    p.add_argument("--model", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")

    p = add("postprocess", "apply caption rules and figure/table merging",
            cmd_postprocess)
    p.add_argument("detections", metavar="DETECTIONS")
    p.add_argument("--tokens", metavar="FILE", help="OCR token sidecar")
    p.add_argument("--out", required=True, metavar="FILE")

    p = add("eval", "score detections against ground-truth annotations", cmd_eval)
    p.add_argument("--detections", required=True, metavar="PATH",
                   help="detections file, or directory paired with annotations by stem")
    p.add_argument("--annotations", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="FILE")

    p = add("render", "draw detections or proposals onto a page image", cmd_render)
    p.add_argument("image", metavar="IMAGE")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--detections", metavar="FILE")
    g.add_argument("--proposals", metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")

    p = add("run", "chain the pipeline stages under one output directory", cmd_run)
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--stages", default=",".join(RUN_STAGES), metavar="LIST",
                   help=f"comma-separated subset of: {', '.join(RUN_STAGES)}")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
