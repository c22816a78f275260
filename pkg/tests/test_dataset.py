from collections import Counter

import pytest
from hypothesis import given, strategies as st

from widr.dataset import (
    ManifestError,
    SampleItem,
    class_index_map,
    class_stats,
    load_manifest,
    make_epoch_stream,
)

HEADER = "path,writer_id,doc_id,split,labeled\n"


def write(tmp_path, body):
    p = tmp_path / "manifest.csv"
    p.write_text(HEADER + body, encoding="utf-8")
    return p


class TestLoadManifest:
    def test_valid_rows(self, tmp_path):
        p = write(tmp_path, "a.pgm,w1,d1,train,1\nb.pgm,,d2,train,0\nc.pgm,w2,d3,test,1\n")
        m = load_manifest(p)
        assert len(m) == 3
        assert m.records[1].labeled is False
        assert [r.doc_id for r in m.select("train")] == ["d1", "d2"]
        assert m.resolve(m.records[0]) == tmp_path / "a.pgm"

    def test_unknown_split_reports_line(self, tmp_path):
        p = write(tmp_path, "a.pgm,w1,d1,train,1\nb.pgm,w1,d2,val,1\n")
        with pytest.raises(ManifestError, match=r"line 3: unknown split 'val'"):
            load_manifest(p)

    def test_duplicate_doc_id(self, tmp_path):
        p = write(tmp_path, "a.pgm,w1,d1,train,1\nb.pgm,w1,d1,train,1\n")
        with pytest.raises(ManifestError, match="duplicate doc_id 'd1'"):
            load_manifest(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "nope.csv")

    @pytest.mark.parametrize(
        "body, msg",
        [
            ("a.pgm,w1,d1,train\n", "expected 5 fields"),
            ("a.pgm,w1,d1,train,2\n", "labeled must be 0 or 1"),
            ("a.pgm,,d1,test,1\n", "writer_id required"),
            ("a.pgm,,d1,train,1\n", "writer_id required"),
        ],
    )
    def test_malformed(self, tmp_path, body, msg):
        with pytest.raises(ManifestError, match=msg):
            load_manifest(write(tmp_path, body))

    def test_bad_header(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("file,writer\n", encoding="utf-8")
        with pytest.raises(ManifestError, match="line 1"):
            load_manifest(p)


class TestClassStats:
    def test_counts(self):
        s = class_stats([0, 0, 1], 2)
        assert s.counts == {0: 2, 1: 1}
        assert s.n_total == 3

    def test_empty(self):
        s = class_stats([], 3)
        assert s.counts == {0: 0, 1: 0, 2: 0}
        assert s.n_total == 0

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            class_stats([2], 2)

    def test_accepts_sample_items(self):
        s = class_stats([SampleItem("a", 1, False), SampleItem("b", 1, False)], 2)
        assert s.counts == {0: 0, 1: 2}

    @given(st.lists(st.integers(0, 6), max_size=50))
    def test_counts_sum_to_n(self, labels):
        s = class_stats(labels, 7)
        assert sum(s.counts.values()) == s.n_total == len(labels)


class TestEpochStream:
    def test_mixed(self):
        labeled = [("a", 0), ("b", 1), ("c", 0), ("d", 1)]
        stream = make_epoch_stream(labeled, ["x", "y"], seed=7)
        assert len(stream) == 6
        assert sum(item.z_flag for item in stream) == 2
        assert all(item.class_index is None for item in stream if item.z_flag)

    def test_deterministic(self):
        labeled = [(str(i), i % 3) for i in range(20)]
        assert make_epoch_stream(labeled, ["x", "y"], 3) == make_epoch_stream(labeled, ["x", "y"], 3)

    def test_no_extra(self):
        labeled = [(str(i), i % 3) for i in range(10)]
        stream = make_epoch_stream(labeled, [], 0)
        assert sorted((s.patch_id, s.class_index) for s in stream) == sorted(labeled)
        assert not any(s.z_flag for s in stream)

    @given(
        st.lists(st.tuples(st.text(max_size=3), st.integers(0, 4)), max_size=30),
        st.lists(st.text(max_size=3), max_size=30),
        st.integers(0, 2**31),
    )
    def test_multiset_preserved(self, labeled, extra, seed):
        stream = make_epoch_stream(labeled, extra, seed)
        expect = Counter([(p, k, False) for p, k in labeled] + [(p, None, True) for p in extra])
        assert Counter((s.patch_id, s.class_index, s.z_flag) for s in stream) == expect

    def test_sample_item_invariant(self):
        with pytest.raises(ValueError):
            SampleItem("a", None, False)
        with pytest.raises(ValueError):
            SampleItem("a", 3, True)


def test_class_index_map_sorted():
    assert class_index_map(["w2", "w0", "w2", "w1"]) == {"w0": 0, "w1": 1, "w2": 2}
