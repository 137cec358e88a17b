"""End-to-end pipeline at miniature scale.

Generates three corpora, pretrains embeddings, trains the attention
classifier on top of them, detects regions on held-out pages, applies the
merge/caption rules, and prints the evaluation report. Mirrors what
`pagedet run` does, but through the library API. Takes a minute or two. Run
from the repository root:

    python3 demos/05_full_pipeline.py
"""

import tempfile
from pathlib import Path

import numpy as np

from pagedet import nn
from pagedet.classifier import Model, build_labeled_page, detect, train_model
from pagedet.embeddings import EmbeddingNet, PageSample, pretrain
from pagedet.features import Backbone, FeatureConfig
from pagedet.metrics import evaluate_corpus
from pagedet.neighbors import build_graph
from pagedet.postprocess import postprocess_detections
from pagedet.proposals import propose_page
from pagedet.synth import default_spec, generate_pages, pretrain_spec

print("== corpora ==")
pretrain_pages = generate_pages(pretrain_spec(), 40, seed=(11, 0))
train_pages = generate_pages(default_spec(), 12, seed=(11, 1))
test_pages = generate_pages(default_spec(), 6, seed=(11, 2))
print(f"pretrain {len(pretrain_pages)}, train {len(train_pages)}, "
      f"test {len(test_pages)} pages")

print("\n== stage 1: unsupervised embedding pretraining ==")
rng = np.random.default_rng(11)
fc = FeatureConfig()
backbone = Backbone(fc, rng)
net = EmbeddingNet(fc.flat_dim, 512, rng)
samples = []
for b in pretrain_pages:
    props = propose_page(b.page)
    samples.append(PageSample(b.page, props, build_graph(props, 20)))
losses = pretrain(samples, net, backbone, rng, epochs=6)
print(f"pair loss {losses[0]:.3f} -> {losses[-1]:.3f} over {len(losses)} epochs")

print("\n== stage 2: supervised attention classifier ==")
model = Model(rng=rng)
with tempfile.TemporaryDirectory() as tmp:
    ckpt = Path(tmp) / "embed.json"
    nn.save_checkpoint(ckpt, {**backbone.tensors(), **net.tensors()},
                       {"stage": "pretrain"})
    model.load_pretrained(ckpt)
items = [build_labeled_page(model, b.page, b.annots) for b in train_pages]
history = train_model(model, items, rng, epochs=10, batch_size=6)
print(f"train accuracy {history[0]['train_acc']:.3f} -> "
      f"{history[-1]['train_acc']:.3f} over {len(history)} epochs")

print("\n== stage 3: detect, postprocess, evaluate ==")
pages = []
for b in test_pages:
    dets = detect(model, b.page)
    final = postprocess_detections(dets, b.tokens)
    pages.append((final, b.annots))
report = evaluate_corpus(pages, model.classes)
print(f"mAP {report.map_value:.3f}, aggregate F1 {report.aggregate['f1']:.3f}")
print("per-class AP:")
for cls in model.classes:
    ap = report.per_class[cls]["ap"]
    shown = "no GT" if ap is None else f"{ap:.3f}"
    print(f"  {cls:<15} {shown}")
