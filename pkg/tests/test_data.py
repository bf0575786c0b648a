import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seattn.data import (
    BG_COLORS, FG_COLORS, SHAPES, DatasetManifest, SynthDataset, batches, batches_per_epoch, caption, class_id,
    epoch_order, file_digest, grammar_vocab, load_external, mismatch_index, parse_caption, render, sample_spec,
)
from seattn.errors import ContractError
from seattn.text_encoder import UNK, tokenize

ALL_LABELS = list(itertools.product(range(len(SHAPES)), range(len(FG_COLORS)), range(len(BG_COLORS))))
ALL_VARIANTS = list(itertools.product((0, 1), repeat=4))


@pytest.fixture(scope="module")
def small():
    return SynthDataset.generate(DatasetManifest(seed=3, count=60, image_size=16, train_count=50))


def test_red_circle_on_blue():
    img = (render((0, 0, 0), seed=1) + 1) / 2
    center, corner = img[:, 16, 16], img[:, 0, 0]
    assert center.argmax() == 0 and corner.argmax() == 2


def test_render_deterministic_and_in_range():
    a, b = render((2, 3, 1), 99), render((2, 3, 1), 99)
    assert a.tobytes() == b.tobytes() and a.dtype == np.float32
    assert a.min() >= -1 and a.max() <= 1


@pytest.mark.parametrize("labels", [(4, 0, 0), (0, 6, 0), (0, 0, -1)])
def test_render_rejects_out_of_grammar(labels):
    with pytest.raises(ContractError):
        render(labels, 0)


def test_caption_template():
    assert caption((0, 0, 0)) == "a red circle on a blue background"


def test_caption_round_trip_full_grammar():
    for labels in ALL_LABELS:
        for var in ALL_VARIANTS:
            assert parse_caption(caption(labels, var)) == labels


def test_captions_distinct_per_labels():
    assert len({caption(lab) for lab in ALL_LABELS}) == len(ALL_LABELS)


def test_vocab_closed_no_unk():
    vocab = grammar_vocab()
    for labels in ALL_LABELS:
        for var in ALL_VARIANTS:
            ids = tokenize(caption(labels, var), vocab)
            assert UNK not in ids.tolist()


def test_class_id_covers_range():
    assert sorted({class_id(lab) for lab in ALL_LABELS}) == list(range(len(SHAPES) * len(FG_COLORS)))


def test_sample_spec_pure():
    assert sample_spec(42, 17) == sample_spec(42, 17)
    assert sample_spec(42, 17) != sample_spec(43, 17)


def test_manifest_text_round_trip():
    m = DatasetManifest(seed=5, count=30, image_size=16, train_count=20)
    assert DatasetManifest.from_text(m.to_text()) == m
    assert "record_bytes=3072" in m.to_text()


def test_manifest_bad_split():
    with pytest.raises(ContractError):
        DatasetManifest(count=10, train_count=11)


def test_generate_deterministic(small):
    again = SynthDataset.generate(small.manifest)
    assert again.images.tobytes() == small.images.tobytes() and again.captions == small.captions


def test_splits(small):
    tr, va = small.split("train"), small.split("val")
    assert len(tr) == 50 and len(va) == 10
    assert va.captions == small.captions[50:]
    with pytest.raises(ContractError):
        small.split("test")


def test_save_load_byte_identity(small, tmp_path):
    small.save(tmp_path / "a")
    loaded = SynthDataset.load(tmp_path / "a")
    loaded.save(tmp_path / "b")
    assert file_digest(tmp_path / "a") == file_digest(tmp_path / "b")
    assert loaded.images.tobytes() == small.images.tobytes()
    np.testing.assert_array_equal(loaded.tokens, small.tokens)


def test_disk_layout(small, tmp_path):
    small.save(tmp_path)
    raw = (tmp_path / "images.bin").read_bytes()
    assert len(raw) == 60 * small.manifest.record_bytes
    rec = np.frombuffer(raw[7 * 3072:8 * 3072], dtype="<f4").reshape(3, 16, 16)
    np.testing.assert_array_equal(rec, small.images[7])
    idx = np.fromfile(tmp_path / "images.idx", dtype="<u8")
    assert idx[7] == 7 * 3072


def test_load_detects_truncation(small, tmp_path):
    small.save(tmp_path)
    data = (tmp_path / "images.bin").read_bytes()
    (tmp_path / "images.bin").write_bytes(data[:-4])
    with pytest.raises(ContractError):
        SynthDataset.load(tmp_path)


def test_external_loader_stub():
    with pytest.raises(NotImplementedError):
        load_external("/nowhere")


def test_batches_deterministic(small):
    a = list(batches(small, 8, seed=1, epoch=0, z_dim=4))
    b = list(batches(small, 8, seed=1, epoch=0, z_dim=4))
    assert all(x.index.tolist() == y.index.tolist() and x.z.tobytes() == y.z.tobytes() for x, y in zip(a, b))
    c = list(batches(small, 8, seed=1, epoch=1, z_dim=4))
    assert a[0].index.tolist() != c[0].index.tolist()


def test_batches_start_skips_without_changing_noise(small):
    full = list(batches(small, 8, 1, 0, 4))
    tail = list(batches(small, 8, 1, 0, 4, start=3))
    assert [b.z.tobytes() for b in full[3:]] == [b.z.tobytes() for b in tail]


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40), st.integers(0, 1000))
def test_epoch_partition(n, m, seed):
    if m > n:
        with pytest.raises(ContractError):
            epoch_order(n, m, seed)
        return
    chunks = epoch_order(n, m, seed)
    flat = np.concatenate(chunks)
    assert sorted(flat.tolist()) == list(range(n))
    assert all(len(c) >= 2 for c in chunks)
    assert len(chunks) == batches_per_epoch(n, m)


@pytest.mark.parametrize("m", range(2, 20))
def test_mismatch_is_derangement(m):
    idx = mismatch_index(m)
    assert sorted(idx.tolist()) == list(range(m))
    assert np.all(idx != np.arange(m))


def test_batch_size_errors(small):
    with pytest.raises(ContractError):
        list(batches(small, 1, 0, 0))
    with pytest.raises(ContractError):
        list(batches(small, 61, 0, 0))


def test_batch_fields_consistent(small):
    b = next(batches(small, 8, 0, 0, z_dim=6))
    np.testing.assert_array_equal(b.images, small.images[b.index])
    np.testing.assert_array_equal(b.tokens, small.tokens[b.index])
    assert b.z.shape == (8, 6) and b.labels.shape == (8, 3)
