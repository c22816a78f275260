import numpy as np
import pytest

from widr.dataset import load_manifest
from widr.preprocess import read_pgm
from widr.synth import CorpusConfig, synth_corpus

SMALL = dict(patches_per_doc=4, lines_per_doc=2, line_height=32, patch_size=32)


def test_document_count(tmp_path):
    cfg = CorpusConfig(n_writers=20, docs_per_writer=4, test_writers=10, **SMALL)
    m = synth_corpus(cfg, 0, tmp_path)
    assert len(m) == 80
    assert len(load_manifest(tmp_path / "manifest.csv")) == 80
    assert len(m.select("test")) == 40


def test_extra_writers_unlabeled(tmp_path):
    cfg = CorpusConfig(n_writers=4, docs_per_writer=2, test_writers=2, n_extra_writers=3,
                       extra_docs_per_writer=2, **SMALL)
    m = synth_corpus(cfg, 0, tmp_path)
    extra = m.select("train", labeled=False)
    assert len(extra) == 6
    assert {r.split for r in extra} == {"train"}


def test_byte_identical(tmp_path):
    cfg = CorpusConfig(n_writers=3, docs_per_writer=2, test_writers=1, **SMALL)
    synth_corpus(cfg, 5, tmp_path / "a")
    synth_corpus(cfg, 5, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_common_fraction_changes_pixels_not_shape(tmp_path):
    base = dict(n_writers=3, docs_per_writer=2, test_writers=1, **SMALL)
    ma = synth_corpus(CorpusConfig(common_fraction=0.0, **base), 1, tmp_path / "a")
    mb = synth_corpus(CorpusConfig(common_fraction=0.5, **base), 1, tmp_path / "b")
    assert [r.doc_id for r in ma] == [r.doc_id for r in mb]
    differs = [
        not np.array_equal(read_pgm(ma.resolve(ra)), read_pgm(mb.resolve(rb)))
        for ra, rb in zip(ma, mb)
    ]
    assert all(differs)
    img = read_pgm(ma.resolve(ma.records[0]))
    assert img.dtype == np.uint8 and img.ndim == 2


def test_zero_writers_rejected():
    with pytest.raises(ValueError):
        CorpusConfig(n_writers=0)


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        synth_corpus(CorpusConfig(n_writers=1, docs_per_writer=1, test_writers=0, **SMALL), 0, blocker / "sub")
