"""Synthetic labeled-page generator: determinism, layout invariants, corpora."""

import json

import numpy as np
import pytest

from conftest import pairwise_max_iou
from pagedet.geometry import expand, intersection_area
from pagedet.metrics import PageAnnotations
from pagedet.synth import (
    BODY_FIRST_TOKENS,
    FIG_FIRST_TOKENS,
    GRAMMAR_SEQUENCE,
    TAB_FIRST_TOKENS,
    TABLE1_TRAIN_COUNTS,
    LayoutSpec,
    column_ranges,
    context_pair_spec,
    default_spec,
    generate_corpus,
    generate_page,
    generate_pages,
    load_corpus,
    pretrain_spec,
)


def test_identical_seed_reproduces_page_bitwise():
    a = generate_page(default_spec(), (3, 4), "p")
    b = generate_page(default_spec(), (3, 4), "p")
    assert np.array_equal(a.page.pixels, b.page.pixels)
    assert a.annots == b.annots
    assert a.tokens == b.tokens
    assert a.textures == b.textures


def test_pages_derive_per_index_seeds():
    pages = generate_pages(default_spec(), 2, 9)
    assert [b.page_id for b in pages] == ["page_0000", "page_0001"]
    direct = generate_page(default_spec(), (9, 1), "page_0001")
    assert np.array_equal(pages[1].page.pixels, direct.page.pixels)
    assert pages[1].annots == direct.annots


def test_single_class_weights_emit_only_that_class():
    spec = LayoutSpec(class_weights={"Figure": 2.0})
    for bundle in generate_pages(spec, 5, 13):
        assert bundle.annots.annotations
        assert all(a.cls == "Figure" for a in bundle.annots.annotations)


def test_class_frequencies_track_weights():
    bundles = generate_pages(default_spec(), 500, 11)
    counts = {c: 0 for c in TABLE1_TRAIN_COUNTS}
    total = 0
    for b in bundles:
        for a in b.annots.annotations:
            counts[a.cls] += 1
            total += 1
    weight_sum = sum(TABLE1_TRAIN_COUNTS.values())
    worst = max(abs(counts[c] / total - TABLE1_TRAIN_COUNTS[c] / weight_sum)
                for c in TABLE1_TRAIN_COUNTS)
    assert worst < 0.02


def test_blocks_stay_inside_margins_and_never_overlap():
    spec = default_spec()
    for bundle in generate_pages(spec, 20, 21):
        assert (bundle.page.width, bundle.page.height) == (640, 880)
        boxes = [a.bbox for a in bundle.annots.annotations]
        assert boxes
        for b in boxes:
            assert b.x0 >= spec.margin and b.x1 <= spec.page_width - spec.margin
            assert b.y0 >= spec.margin and b.y1 <= spec.page_height - spec.margin
        assert pairwise_max_iou(boxes) == 0.0


def test_single_column_gaps_match_spec_and_fill_budget():
    spec = LayoutSpec(columns=1)
    for bundle in generate_pages(spec, 10, 23):
        boxes = sorted((a.bbox for a in bundle.annots.annotations),
                       key=lambda b: b.y0)
        assert boxes[0].y0 == spec.margin
        assert boxes[-1].y1 == spec.page_height - spec.margin
        for prev, nxt in zip(boxes, boxes[1:]):
            gap = nxt.y0 - prev.y1
            assert spec.min_gap <= gap <= spec.max_gap


def test_block_edges_are_inked_full_width():
    for bundle in generate_pages(default_spec(), 5, 27):
        ink = bundle.page.pixels < 128
        for a in bundle.annots.annotations:
            b = a.bbox
            for y in (b.y0, b.y0 + 1, b.y1 - 2, b.y1 - 1):
                assert ink[y, b.x0:b.x1].all()


def test_column_ranges_split_at_exact_dividers():
    assert column_ranges(640, 36, 1) == [(36, 604)]
    assert column_ranges(640, 36, 2) == [(36, 312), (328, 604)]
    assert column_ranges(640, 36, 3) == [(36, 205), (221, 418), (434, 604)]


def test_proposals_recover_generated_blocks():
    from pagedet.geometry import iou
    from pagedet.proposals import propose_page

    hits = 0
    total = 0
    for bundle in generate_pages(default_spec(), 5, 51):
        props = propose_page(bundle.page)
        for a in bundle.annots.annotations:
            total += 1
            if any(iou(a.bbox, p) >= 0.8 for p in props):
                hits += 1
    assert hits / total >= 0.9


def test_empty_corpus_writes_empty_manifest(tmp_path):
    manifest = generate_corpus(default_spec(), 0, 3, tmp_path)
    assert manifest["n_pages"] == 0
    assert manifest["pages"] == []
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk["pages"] == []
    assert load_corpus(tmp_path) == []


def test_corpus_round_trips_through_files(tmp_path):
    spec = default_spec()
    manifest = generate_corpus(spec, 3, 7, tmp_path)
    assert [e["seed"] for e in manifest["pages"]] == [[7, 0], [7, 1], [7, 2]]
    bundles = generate_pages(spec, 3, 7)
    loaded = load_corpus(tmp_path)
    assert len(loaded) == 3
    for mem, disk in zip(bundles, loaded):
        assert np.array_equal(mem.page.pixels, disk.page.pixels)
        assert mem.annots == disk.annots
        assert mem.tokens == disk.tokens
        assert mem.textures == disk.textures
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / "nowhere")


def test_grammar_pages_follow_the_class_sequence():
    for bundle in generate_pages(pretrain_spec(), 20, 31):
        classes = [a.cls for a in bundle.annots.annotations]
        assert len(set(classes)) == len(classes)  # each class at most once
        order = [GRAMMAR_SEQUENCE.index(c) for c in classes]
        assert order == sorted(order)


def test_context_pair_label_matches_figure_proximity():
    spec = context_pair_spec()
    delta = 20
    for bundle in generate_pages(spec, 15, 41):
        anns = bundle.annots.annotations
        for a, t in zip(anns, bundle.textures):
            if t != "caption":
                assert (a.cls == "Figure") == (t == "figure")
        caption_rows = [(a, t) for a, t in zip(anns, bundle.textures)
                        if t == "caption"]
        assert caption_rows
        figures = [a.bbox for a in anns if a.cls == "Figure"]
        for a, _ in caption_rows:
            assert a.cls in ("Figure Caption", "Body Text")
            grown = expand(a.bbox, delta, spec.page_width, spec.page_height)
            near_figure = any(intersection_area(grown, f) > 0 for f in figures)
            assert (a.cls == "Figure Caption") == near_figure
        # caption-look blocks use one texture regardless of their label
        assert {t for _, t in caption_rows} == {"caption"}


def test_context_pair_units_are_separated_beyond_delta():
    spec = context_pair_spec()
    for bundle in generate_pages(spec, 10, 43):
        boxes = [a.bbox for a in bundle.annots.annotations]
        # blocks alternate context, caption; units are caption -> next context
        for k in range(1, len(boxes) - 1, 2):
            separation = boxes[k + 1].y0 - boxes[k].y1
            assert separation > 20
            in_unit_gap = boxes[k].y0 - boxes[k - 1].y1
            assert spec.min_gap <= in_unit_gap <= spec.max_gap


def test_caption_first_tokens_with_certain_probability():
    spec = LayoutSpec(columns=1, mode="grammar", caption_token_prob=1.0,
                      presence_prob=1.0)
    for bundle in generate_pages(spec, 10, 47):
        for ann, entry in zip(bundle.annots.annotations, bundle.tokens.entries):
            assert entry.bbox == ann.bbox
            if ann.cls == "Figure Caption":
                assert entry.tokens[0] in FIG_FIRST_TOKENS
            elif ann.cls == "Table Caption":
                assert entry.tokens[0] in TAB_FIRST_TOKENS
            elif ann.cls == "Body Text":
                assert entry.tokens[0] in BODY_FIRST_TOKENS
            else:
                assert entry.tokens == []


def test_layout_spec_validation():
    with pytest.raises(ValueError):
        LayoutSpec(mode="freeform")
    with pytest.raises(ValueError):
        LayoutSpec(columns=4)
    with pytest.raises(ValueError):
        LayoutSpec(class_weights={})
    with pytest.raises(ValueError):
        LayoutSpec(class_weights={"Figure": -1.0})
    with pytest.raises(ValueError):
        LayoutSpec(min_gap=20, max_gap=19)
    with pytest.raises(ValueError):
        LayoutSpec(page_height=120)
    with pytest.raises(ValueError):
        LayoutSpec(page_width=200)


def test_annotations_validate_against_page_dimensions():
    bundle = generate_page(default_spec(), 1, "p")
    assert isinstance(bundle.annots, PageAnnotations)
    assert bundle.annots.page_id == "p"
