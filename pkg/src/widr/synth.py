"""Synthetic multi-writer handwriting corpus for desk-scale experiments.

Each writer owns a style vector (slant, stroke thickness, curvature, glyph
width, spacing) and a private set of glyph shapes. A configurable fraction of
glyphs on every page is drawn from a motif set shared by all writers in a
fixed style, which gives the classifier non-discriminative content to latch
onto.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from widr.dataset import DocumentRecord, Manifest, write_manifest
from widr.preprocess import write_pgm


@dataclass(frozen=True)
class CorpusConfig:
    n_writers: int = 20
    docs_per_writer: int = 4
    test_writers: int = 10
    n_extra_writers: int = 0
    extra_docs_per_writer: int = 4
    patches_per_doc: int = 8
    lines_per_doc: int = 2
    line_height: int = 48
    patch_size: int = 64
    common_fraction: float = 0.5
    glyphs_per_writer: int = 6
    n_common_motifs: int = 6

    def __post_init__(self):
        if self.n_writers < 1:
            raise ValueError("n_writers must be at least 1")
        if not 0 <= self.test_writers <= self.n_writers:
            raise ValueError("test_writers must lie in [0, n_writers]")
        if self.docs_per_writer < 1 or self.patches_per_doc < 1 or self.lines_per_doc < 1:
            raise ValueError("docs_per_writer, patches_per_doc and lines_per_doc must be positive")
        if not 0.0 <= self.common_fraction <= 1.0:
            raise ValueError("common_fraction must lie in [0, 1]")
        if self.line_height < 8:
            raise ValueError("line_height must be at least 8")

    @property
    def margin(self) -> int:
        return self.line_height // 2

    @property
    def line_gap(self) -> int:
        return max(self.line_height // 2, 24)

    @property
    def page_size(self) -> tuple[int, int]:
        per_line = math.ceil(self.patches_per_doc / self.lines_per_doc)
        width = 2 * self.margin + per_line * self.line_height + self.line_height // 2
        height = 2 * self.margin + self.lines_per_doc * self.line_height + (self.lines_per_doc - 1) * self.line_gap
        return width, height


@dataclass(frozen=True)
class WriterStyle:
    slant: float
    thickness: float
    curvature: float
    width: float
    spacing: float
    glyphs: tuple[tuple[float, ...], ...]


COMMON_STYLE = dict(slant=0.0, thickness=0.07, curvature=0.6, width=0.7, spacing=0.15)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def _random_glyph(rng: np.random.Generator) -> tuple[float, ...]:
    # (x frequency, x phase, y frequency, y phase, y amplitude, tail)
    return (
        float(rng.integers(1, 3)),
        float(rng.uniform(0, 2 * math.pi)),
        float(rng.integers(1, 4)),
        float(rng.uniform(0, 2 * math.pi)),
        float(rng.uniform(0.25, 0.45)),
        float(rng.uniform(-0.3, 0.3)),
    )


def writer_style(seed: int, writer_index: int, n_glyphs: int) -> WriterStyle:
    rng = _rng(seed, 1, writer_index)
    return WriterStyle(
        slant=float(rng.uniform(-0.6, 0.6)),
        thickness=float(rng.uniform(0.03, 0.12)),
        curvature=float(rng.uniform(0.1, 1.0)),
        width=float(rng.uniform(0.45, 1.0)),
        spacing=float(rng.uniform(0.05, 0.35)),
        glyphs=tuple(_random_glyph(rng) for _ in range(n_glyphs)),
    )


def common_motifs(seed: int, n: int) -> tuple[tuple[float, ...], ...]:
    rng = _rng(seed, 2)
    return tuple(_random_glyph(rng) for _ in range(n))


def _glyph_points(glyph, style, x0: float, base: float, h: float, jitter: np.ndarray):
    fx, px, fy, py, ay, tail = glyph
    u = np.linspace(0.0, 1.0, 24)
    w = style["width"] * h * (1 + 0.1 * jitter[0])
    xs = w * (u + style["curvature"] * 0.35 * np.sin(2 * math.pi * fx * u + px))
    ys = h * (0.5 + (ay + 0.05 * jitter[1]) * np.sin(2 * math.pi * fy * u + py) + tail * (u - 0.5))
    # y grows downward; slant shears by height above the baseline
    xs = xs + style["slant"] * (h - ys)
    return [(float(x0 + x), float(base - h + y)) for x, y in zip(xs, ys)], w


def render_document(config: CorpusConfig, seed: int, writer_index: int, doc_index: int) -> np.ndarray:
    style = writer_style(seed, writer_index, config.glyphs_per_writer)
    mine = vars(style) | {}
    motifs = common_motifs(seed, config.n_common_motifs)
    rng = _rng(seed, 3, writer_index, doc_index)
    width, height = config.page_size
    bg = rng.integers(225, 246, size=(height, width), dtype=np.uint8)
    img = Image.fromarray(bg, mode="L")
    draw = ImageDraw.Draw(img)
    h = config.line_height * 0.8
    for line in range(config.lines_per_doc):
        top = config.margin + line * (config.line_height + config.line_gap)
        base = top + config.line_height * 0.9
        x = float(config.margin)
        while x < width - config.margin - h * 0.5:
            common = rng.random() < config.common_fraction
            s = COMMON_STYLE if common else mine
            glyph = motifs[rng.integers(len(motifs))] if common else style.glyphs[rng.integers(len(style.glyphs))]
            pts, w = _glyph_points(glyph, s, x, base, h, rng.normal(size=2))
            ink = int(rng.integers(10, 60))
            draw.line(pts, fill=ink, width=max(1, round(s["thickness"] * h)), joint="curve")
            x += w + s["spacing"] * h
    return np.asarray(img, dtype=np.uint8).copy()


def corpus_records(config: CorpusConfig) -> list[tuple[DocumentRecord, int, int]]:
    """Manifest rows with the (writer index, doc index) used to render each."""
    rows = []
    n_train = config.n_writers - config.test_writers
    for wi in range(config.n_writers):
        split = "train" if wi < n_train else "test"
        for d in range(config.docs_per_writer):
            doc = f"w{wi:03d}_d{d}"
            rows.append((DocumentRecord(f"pages/{doc}.pgm", f"w{wi:03d}", doc, split, True), wi, d))
    for xi in range(config.n_extra_writers):
        wi = config.n_writers + xi
        for d in range(config.extra_docs_per_writer):
            doc = f"x{xi:03d}_d{d}"
            rows.append((DocumentRecord(f"pages/{doc}.pgm", f"x{xi:03d}", doc, "train", False), wi, d))
    return rows


def synth_corpus(config: CorpusConfig, seed: int, out_dir: str | Path) -> Manifest:
    """Render every document as a PGM page under ``out_dir/pages`` and write
    ``out_dir/manifest.csv``. Output bytes depend only on (config, seed)."""
    out_dir = Path(out_dir)
    try:
        (out_dir / "pages").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    rows = corpus_records(config)
    for rec, wi, d in rows:
        write_pgm(out_dir / rec.path, render_document(config, seed, wi, d))
    records = [r for r, _, _ in rows]
    write_manifest(out_dir / "manifest.csv", records)
    return Manifest(records, out_dir)
