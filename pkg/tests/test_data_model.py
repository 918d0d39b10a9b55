import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from adam_pipe.data_model import (
    MANIFEST_COLUMNS,
    DatasetManifest,
    FoveaCoordinate,
    FundusSample,
    LesionKind,
    ManifestEntry,
    load_manifest,
    load_sample,
    oversample,
    read_mask,
    write_manifest,
)
from adam_pipe.errors import DataError


def _write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_COLUMNS)
        for r in rows:
            w.writerow(r + [""] * (len(MANIFEST_COLUMNS) - len(r)))


def _labelled_manifest(n_pos, n_neg, tmp_path):
    img = tmp_path / "x.png"
    Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(img)
    rows = [[f"p{i}", "x.png", "1"] for i in range(n_pos)] + [[f"n{i}", "x.png", "0"] for i in range(n_neg)]
    _write_csv(tmp_path / "m.csv", rows)
    return load_manifest(tmp_path / "m.csv")


def test_lesion_kinds():
    assert [k.value for k in LesionKind] == ["drusen", "exudate", "hemorrhage", "scar", "other"]


def test_class_counts_89_311(tmp_path):
    m = _labelled_manifest(89, 311, tmp_path)
    assert m.class_counts() == {"AMD": 89, "non-AMD": 311}


def test_header_only_manifest(tmp_path):
    _write_csv(tmp_path / "m.csv", [])
    assert len(load_manifest(tmp_path / "m.csv")) == 0


def test_missing_file():
    with pytest.raises(DataError, match="not found"):
        load_manifest("/nonexistent/manifest.csv")


def test_missing_mask_names_row(tmp_path):
    Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(tmp_path / "a.png")
    _write_csv(tmp_path / "m.csv", [["a", "a.png", "1"], ["b", "a.png", "0", "nope.png"]])
    with pytest.raises(DataError, match=r"line 3 \(b\).*od_mask"):
        load_manifest(tmp_path / "m.csv")


def test_duplicate_id(tmp_path):
    Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(tmp_path / "a.png")
    _write_csv(tmp_path / "m.csv", [["a", "a.png"], ["a", "a.png"]])
    with pytest.raises(DataError, match="duplicate id"):
        load_manifest(tmp_path / "m.csv")


@pytest.mark.parametrize("row, msg", [
    (["a", "a.png", "2"], "amd must be"),
    (["a", "a.png", "", "", "3.0"], "fovea_x and fovea_y"),
    (["a", "a.png", "", "", "-1", "2"], "non-negative"),
    (["", "a.png"], "empty id"),
])
def test_malformed_rows(tmp_path, row, msg):
    Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(tmp_path / "a.png")
    _write_csv(tmp_path / "m.csv", [row])
    with pytest.raises(DataError, match=msg):
        load_manifest(tmp_path / "m.csv")


def test_round_trip(synth_manifest, tmp_path):
    m = load_manifest(synth_manifest)
    out = write_manifest(m, tmp_path / "copy" / "again.csv")
    m2 = load_manifest(out)
    assert m2.entries == m.entries


def test_masks_threshold_at_127(tmp_path):
    arr = np.array([[0, 127, 128, 255]], np.uint8)
    Image.fromarray(arr).save(tmp_path / "m.png")
    assert read_mask(tmp_path / "m.png").tolist() == [[0, 0, 1, 1]]


def test_load_sample(synth_manifest):
    m = load_manifest(synth_manifest)
    s = load_sample(m.entries[0])
    assert s.image.shape == (64, 64, 3)
    assert set(np.unique(s.od_mask)) <= {0, 1}
    assert len(s.lesion_masks) == 5


def test_sample_invariants():
    img = np.zeros((10, 12, 3), np.uint8)
    with pytest.raises(DataError, match="shape"):
        FundusSample("a", img, od_mask=np.zeros((10, 10), np.uint8))
    with pytest.raises(DataError, match="only 0 and 1"):
        FundusSample("a", img, od_mask=np.full((10, 12), 2, np.uint8))
    with pytest.raises(DataError, match="outside"):
        FundusSample("a", img, fovea=FoveaCoordinate(12.0, 3.0))
    FundusSample("a", img, fovea=FoveaCoordinate(11.5, 9.0))


def _entries(n_pos, n_neg):
    return DatasetManifest([ManifestEntry(f"p{i}", "x", 1) for i in range(n_pos)]
                           + [ManifestEntry(f"n{i}", "x", 0) for i in range(n_neg)])


def test_oversample_89_311():
    out = oversample(_entries(89, 311), 1.0)
    counts = out.class_counts()
    assert counts == {"AMD": 311, "non-AMD": 311}
    replicas = [e for e in out if e.replica > 0]
    assert len(replicas) == 222
    # 222 = 2 * 89 + 44: every AMD image is copied at least twice, 44 of them three times
    per_id = {}
    for e in replicas:
        per_id[e.id] = per_id.get(e.id, 0) + 1
    assert sorted(set(per_id.values())) == [2, 3]
    assert sum(1 for v in per_id.values() if v == 3) == 44
    assert len({(e.id, e.replica) for e in out}) == len(out)


def test_oversample_small_ratio():
    assert oversample(_entries(1, 4), 0.5).class_counts()["AMD"] == 2


def test_oversample_balanced_is_identity():
    m = _entries(5, 5)
    assert oversample(m, 1.0).entries == m.entries


def test_oversample_single_class():
    with pytest.raises(DataError):
        oversample(_entries(0, 4), 1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.floats(0.05, 2.0), st.integers(0, 5))
def test_oversample_properties(n_pos, n_neg, ratio, seed):
    m = _entries(n_pos, n_neg)
    out = oversample(m, ratio, seed)
    assert out.entries[:len(m)] == m.entries
    c = out.class_counts()
    mino, majo = (c["AMD"], c["non-AMD"]) if n_pos <= n_neg else (c["non-AMD"], c["AMD"])
    assert mino / majo >= ratio - 1e-12
    assert [(e.id, e.replica) for e in oversample(m, ratio, seed)] == [(e.id, e.replica) for e in out]
