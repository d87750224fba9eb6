import struct

import numpy as np
import pytest

from helpers import make_set
from zoomshot.embeddings import (
    EmbeddingSet,
    Modality,
    embedding_bytes,
    make_batches,
    read_embedding_file,
    read_prompt_lines,
    subsample,
    write_embedding_file,
)
from zoomshot.errors import (
    ConfigError,
    EmptyDatasetError,
    ParseError,
    ValidationError,
)


@pytest.fixture()
def labeled_set(rng):
    return make_set(rng.normal(size=(6, 3)).astype(np.float32),
                    modality=Modality.IMAGE, name="enc-α",
                    labels=[0, 1, 2, 0, 1, 2],
                    class_names=["cat", "dog", "bird"])


def test_round_trip_values_and_bytes(tmp_path, rng):
    es = make_set(rng.normal(size=(5, 8)).astype(np.float32), name="res-18")
    path = tmp_path / "a.zseb"
    write_embedding_file(es, path)
    back = read_embedding_file(path)
    assert back.encoder_name == "res-18"
    assert back.modality == Modality.IMAGE
    assert np.array_equal(back.vectors, es.vectors)
    # writing the parsed set again reproduces the file byte for byte
    assert embedding_bytes(back) == path.read_bytes()


def test_round_trip_with_labels_and_unicode(tmp_path, labeled_set):
    path = tmp_path / "l.zseb"
    write_embedding_file(labeled_set, path)
    back = read_embedding_file(path)
    assert back.class_names == ["cat", "dog", "bird"]
    assert np.array_equal(back.labels, labeled_set.labels)
    assert embedding_bytes(back) == path.read_bytes()


def test_second_write_is_byte_identical(tmp_path, rng):
    es = make_set(rng.normal(size=(3, 2)).astype(np.float32))
    p1, p2 = tmp_path / "1.zseb", tmp_path / "2.zseb"
    write_embedding_file(es, p1)
    write_embedding_file(es, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_single_value_payload_encoding(tmp_path):
    es = make_set([[0.5]], name="")
    blob = embedding_bytes(es)
    # header: magic(4) + version(4) + modality(1) + name_len(4) + name(0)
    #         + n(8) + dim(4) = 25 bytes, then the one float32
    payload = blob[25:29]
    assert payload == bytes([0x00, 0x00, 0x00, 0x3F])


def test_bad_magic_offset_zero(tmp_path):
    path = tmp_path / "bad.zseb"
    path.write_bytes(b"XXXX" + b"\x00" * 40)
    with pytest.raises(ParseError) as err:
        read_embedding_file(path)
    assert err.value.offset == 0


def test_bad_version_offset_four(tmp_path, rng):
    es = make_set(rng.normal(size=(2, 2)).astype(np.float32))
    blob = bytearray(embedding_bytes(es))
    blob[4:8] = struct.pack("<I", 9)
    path = tmp_path / "v.zseb"
    path.write_bytes(bytes(blob))
    with pytest.raises(ParseError) as err:
        read_embedding_file(path)
    assert err.value.offset == 4


def test_truncated_payload(tmp_path):
    # declares n=3, dim=4 (needs 48 payload bytes) but carries only 40
    es = make_set(np.ones((3, 4), dtype=np.float32), name="e")
    blob = embedding_bytes(es)
    payload_start = 4 + 4 + 1 + 4 + 1 + 8 + 4
    path = tmp_path / "t.zseb"
    path.write_bytes(blob[:payload_start + 40])
    with pytest.raises(ParseError) as err:
        read_embedding_file(path)
    assert "payload" in str(err.value)
    assert err.value.offset == payload_start


def test_nan_payload_rejected_with_offset(tmp_path):
    es = make_set(np.ones((2, 2), dtype=np.float32), name="")
    blob = bytearray(embedding_bytes(es))
    payload_start = 25
    blob[payload_start + 4:payload_start + 8] = struct.pack("<f", float("nan"))
    path = tmp_path / "n.zseb"
    path.write_bytes(bytes(blob))
    with pytest.raises(ParseError) as err:
        read_embedding_file(path)
    assert err.value.offset == payload_start + 4


def test_bad_modality_byte(tmp_path, rng):
    es = make_set(rng.normal(size=(1, 1)).astype(np.float32), name="")
    blob = bytearray(embedding_bytes(es))
    blob[8] = 7
    path = tmp_path / "m.zseb"
    path.write_bytes(bytes(blob))
    with pytest.raises(ParseError) as err:
        read_embedding_file(path)
    assert err.value.offset == 8


def test_trailing_bytes_rejected(tmp_path, rng):
    es = make_set(rng.normal(size=(2, 2)).astype(np.float32))
    path = tmp_path / "tr.zseb"
    path.write_bytes(embedding_bytes(es) + b"junk")
    with pytest.raises(ParseError, match="trailing"):
        read_embedding_file(path)


def test_label_out_of_range_rejected(tmp_path, labeled_set):
    blob = bytearray(embedding_bytes(labeled_set))
    # class count lives after payload and labels; shrink it to 1
    name_len = len("enc-α".encode("utf-8"))
    count_off = 4 + 4 + 1 + 4 + name_len + 8 + 4 + 6 * 3 * 4 + 1 + 6 * 4
    blob[count_off:count_off + 4] = struct.pack("<I", 1)
    path = tmp_path / "lab.zseb"
    path.write_bytes(bytes(blob))
    with pytest.raises(ParseError, match="out of range"):
        read_embedding_file(path)


def test_zero_n_rejected(tmp_path, rng):
    es = make_set(rng.normal(size=(1, 2)).astype(np.float32), name="")
    blob = bytearray(embedding_bytes(es))
    blob[13:21] = struct.pack("<Q", 0)
    path = tmp_path / "z.zseb"
    path.write_bytes(bytes(blob))
    with pytest.raises(ParseError, match="n must be"):
        read_embedding_file(path)


def test_labels_without_class_names_invalid():
    with pytest.raises(ValidationError):
        EmbeddingSet(Modality.IMAGE, "e", np.ones((2, 2), dtype=np.float32),
                     labels=np.array([0, 1]), class_names=None)
    with pytest.raises(ValidationError):
        EmbeddingSet(Modality.IMAGE, "e", np.ones((2, 2), dtype=np.float32),
                     labels=np.array([0, 0]), class_names=[])


def test_non_finite_vectors_invalid():
    with pytest.raises(ValidationError):
        make_set([[np.float32("inf"), 1.0]])


def test_make_batches_single_batch():
    plan = make_batches(4, 4, seed=0)
    batches = plan.batches()
    assert len(batches) == 1
    assert sorted(batches[0]) == [0, 1, 2, 3]


def test_make_batches_deterministic():
    assert make_batches(50, 7, seed=123).order == make_batches(50, 7, seed=123).order
    assert make_batches(50, 7, seed=123).order != make_batches(50, 7, seed=124).order


def test_make_batches_partial_final_batch_kept():
    plan = make_batches(10, 4, seed=1)
    assert [len(b) for b in plan.batches()] == [4, 4, 2]


def test_make_batches_covers_every_index_once():
    for seed in range(5):
        plan = make_batches(37, 5, seed=seed)
        seen = [i for b in plan.batches() for i in b]
        assert sorted(seen) == list(range(37))


def test_make_batches_errors():
    with pytest.raises(EmptyDatasetError):
        make_batches(0, 4, seed=0)
    with pytest.raises(ConfigError):
        make_batches(4, 0, seed=0)


def test_subsample_full_fraction_is_identity(rng):
    es = make_set(rng.normal(size=(10, 3)).astype(np.float32))
    out = subsample(es, 1.0, seed=5)
    assert np.array_equal(out.vectors, es.vectors)


def test_subsample_ceiling(rng):
    es = make_set(rng.normal(size=(100, 2)).astype(np.float32))
    assert subsample(es, 0.01, seed=0).n == 1
    assert subsample(es, 0.101, seed=0).n == 11


def test_subsample_deterministic_and_subset(rng):
    es = make_set(rng.normal(size=(40, 4)).astype(np.float32))
    a = subsample(es, 0.3, seed=9)
    b = subsample(es, 0.3, seed=9)
    assert np.array_equal(a.vectors, b.vectors)
    rows = {tuple(r) for r in es.vectors.tolist()}
    assert all(tuple(r) in rows for r in a.vectors.tolist())


def test_subsample_keeps_row_alignment_across_sets(rng):
    # two sets with the same n and seed keep identical row selections
    left = make_set(rng.normal(size=(30, 3)).astype(np.float32))
    right = make_set(rng.normal(size=(30, 5)).astype(np.float32))
    a = subsample(left, 0.5, seed=2)
    b = subsample(right, 0.5, seed=2)
    idx_a = [np.flatnonzero((left.vectors == r).all(axis=1))[0] for r in a.vectors]
    idx_b = [np.flatnonzero((right.vectors == r).all(axis=1))[0] for r in b.vectors]
    assert idx_a == idx_b


def test_subsample_fraction_validation(rng):
    es = make_set(rng.normal(size=(5, 2)).astype(np.float32))
    for bad in (0.0, -0.5, 1.5):
        with pytest.raises(ConfigError):
            subsample(es, bad, seed=0)


def test_read_prompt_lines_skips_blanks(tmp_path):
    p = tmp_path / "prompts.txt"
    p.write_text("an image of a dog\n\n  \nan image of a cat\n", encoding="utf-8")
    assert read_prompt_lines(p) == ["an image of a dog", "an image of a cat"]


def test_subsample_keeps_labels_aligned(rng):
    es = make_set(rng.normal(size=(20, 2)).astype(np.float32),
                  labels=list(range(4)) * 5,
                  class_names=["a", "b", "c", "d"])
    out = subsample(es, 0.5, seed=3)
    for row, label in zip(out.vectors, out.labels):
        src = np.flatnonzero((es.vectors == row).all(axis=1))[0]
        assert es.labels[src] == label


@pytest.mark.parametrize("seed", range(8))
def test_round_trip_randomized(tmp_path, seed):
    local = np.random.default_rng(seed)
    n, dim = int(local.integers(1, 30)), int(local.integers(1, 20))
    labeled = bool(local.integers(0, 2))
    c = int(local.integers(1, 6)) if labeled else 0
    es = make_set(local.normal(size=(n, dim)).astype(np.float32),
                  modality=Modality.TEXT if seed % 2 else Modality.IMAGE,
                  name=f"enc-{seed}-ü",
                  labels=local.integers(0, c, size=n) if labeled else None,
                  class_names=[f"k{i}" for i in range(c)] if labeled else None)
    path = tmp_path / "r.zseb"
    write_embedding_file(es, path)
    back = read_embedding_file(path)
    assert embedding_bytes(back) == path.read_bytes()
    assert np.array_equal(back.vectors, es.vectors)
