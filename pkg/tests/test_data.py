import numpy as np
import pytest

from hkt.data import (
    BYTE_PAD, CLS, PAD, Dataset, DatasetFormatError, GenerationError, ListOpsParseError,
    ListOpsSpec, UnknownLabelError, encode_bytes, evaluate_listops, evaluate_tree,
    generate_listops, iterate_batches, load_bytes_dataset, read_dataset, render, sample_tree,
    split_dataset, to_text, tokenize, tree_depth, write_dataset,
)
from hkt.numkit import Prng

# regression fixture: label histogram of 10k samples at seed 42
SEED42_COUNTS = [1247, 1159, 1042, 1009, 983, 849, 887, 860, 911, 1053]


@pytest.mark.parametrize("text,value", [
    ("[MAX 2 7 3 ]", 7),
    ("[SM 9 9 9 ]", 7),
    ("[MIN [MAX 1 2 ] 0 ]", 0),
    ("[MED 1 2 3 ]", 2),
    ("[MED 4 1 3 2 ]", 2),
])
def test_evaluate_examples(text, value):
    assert evaluate_listops(text) == value


@pytest.mark.parametrize("text,pos", [
    ("[MAX 1 2", 3),
    ("[MAX 1 ] ]", 3),
    ("[MAX ]", 1),
    ("[MAX 1 ] 4", 3),
    ("[MAX 1 X ]", 2),
])
def test_parse_errors_report_position(text, pos):
    with pytest.raises(ListOpsParseError) as exc:
        evaluate_listops(text)
    assert exc.value.position == pos


def test_fuzz_render_roundtrip():
    rng = Prng(0)
    for _ in range(1000):
        tree = sample_tree(rng, 4, 5)
        assert tree_depth(tree) <= 4
        ids = render(tree)
        assert evaluate_listops(ids) == evaluate_tree(tree)
        assert tokenize(to_text(ids)) == ids


def small_spec(**kw):
    base = dict(n_train=200, n_val=50, n_test=50, seed=3)
    base.update(kw)
    return ListOpsSpec(**base)


def test_generated_labels_are_correct():
    data = generate_listops(small_spec())
    for ds in data.values():
        for row, y in zip(ds.tokens, ds.labels):
            assert evaluate_listops(row) == y


def test_layout_left_padding_and_begin_token():
    ds = generate_listops(small_spec())["train"]
    assert ds.tokens.shape == (200, 128)
    for row in ds.tokens:
        start = int(np.argmax(row != PAD))
        assert row[start] == CLS and np.all(row[:start] == PAD)
        assert row[-1] != PAD


def test_splits_disjoint_and_exact():
    data = generate_listops(small_spec())
    assert [len(data[k]) for k in ("train", "val", "test")] == [200, 50, 50]
    seen = [set(map(bytes, d.tokens.astype(np.uint8))) for d in data.values()]
    assert not (seen[0] & seen[1]) and not (seen[0] & seen[2]) and not (seen[1] & seen[2])


def test_generation_deterministic_and_seed_sensitive():
    a, b = generate_listops(small_spec()), generate_listops(small_spec())
    c = generate_listops(small_spec(seed=4))
    assert a["train"].checksum() == b["train"].checksum()
    assert a["train"].checksum() != c["train"].checksum()


def test_class_frequencies_seed42():
    ds = generate_listops(ListOpsSpec(seed=42, n_train=10000, n_val=0, n_test=0))["train"]
    counts = np.bincount(ds.labels, minlength=10)
    freq = counts / counts.sum()
    assert freq.min() >= 0.05 and freq.max() <= 0.20
    assert counts.tolist() == SEED42_COUNTS


def test_generation_errors():
    with pytest.raises(GenerationError):
        generate_listops(small_spec(seq_len=4))
    with pytest.raises(GenerationError):
        # only a few hundred distinct depth-1 binary trees fit
        generate_listops(ListOpsSpec(max_depth=1, max_arity=2, n_train=1000, n_val=0, n_test=0,
                                     max_attempts_factor=5))


def test_short_sequences_redraw():
    ds = generate_listops(small_spec(seq_len=12))["train"]
    assert ds.tokens.shape[1] == 12
    for row, y in zip(ds.tokens, ds.labels):
        assert evaluate_listops(row) == y


# --- file format -----------------------------------------------------------------

def test_write_read_roundtrip(tmp_path):
    ds = generate_listops(small_spec())["val"]
    path = str(tmp_path / "val.tsv")
    digest = write_dataset(ds, path)
    back = read_dataset(path)
    assert digest == ds.checksum() == back.checksum()
    np.testing.assert_array_equal(back.tokens, ds.tokens)
    np.testing.assert_array_equal(back.labels, ds.labels)
    first = (tmp_path / "val.tsv").read_bytes()
    write_dataset(back, path)
    assert (tmp_path / "val.tsv").read_bytes() == first


def test_read_detects_tampering(tmp_path):
    ds = generate_listops(small_spec())["val"]
    path = tmp_path / "val.tsv"
    write_dataset(ds, str(path))
    raw = bytearray(path.read_bytes())
    raw[0] = ord("9") if raw[0] != ord("9") else ord("8")
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="checksum"):
        read_dataset(str(path))
    with pytest.raises(DatasetFormatError):
        read_dataset(str(tmp_path / "missing.tsv"))


def test_dataset_validation():
    with pytest.raises(DatasetFormatError):
        Dataset(np.zeros((2, 3)), np.array([0, 10]), 17, 10)
    with pytest.raises(DatasetFormatError):
        Dataset(np.full((1, 3), 17), np.array([0]), 17, 10)


def test_batches_cover_everything_once():
    ds = generate_listops(small_spec())["train"]
    seen = np.concatenate([y for _, y in iterate_batches(ds, 32, Prng(0))])
    assert len(seen) == 200 and sorted(seen.tolist()) == sorted(ds.labels.tolist())
    assert sum(1 for _ in iterate_batches(ds, 32, drop_last=True)) == 6


def test_split_dataset_disjoint():
    ds = generate_listops(small_spec())["train"]
    parts = split_dataset(ds, {"a": 120, "b": 80}, seed=1)
    rows = [set(map(bytes, p.tokens.astype(np.uint8))) for p in parts.values()]
    assert len(parts["a"]) == 120 and len(parts["b"]) == 80 and not (rows[0] & rows[1])
    with pytest.raises(ValueError):
        split_dataset(ds, {"a": 300}, seed=1)


# --- byte corpora --------------------------------------------------------------------

def test_encode_bytes_pads_left():
    np.testing.assert_array_equal(encode_bytes(b"abc", 8), [BYTE_PAD] * 5 + [97, 98, 99])


def test_encode_bytes_keeps_tail():
    np.testing.assert_array_equal(encode_bytes(bytes(range(20)), 8), list(range(12, 20)))


def _corpus(root):
    for label, files in {"neg": {"a.txt": b"bad movie", "b.txt": b"awful"},
                         "pos": {"c.txt": b"great film indeed"}}.items():
        (root / label).mkdir(parents=True)
        for name, raw in files.items():
            (root / label / name).write_bytes(raw)


def test_bytes_corpus_roundtrip(tmp_path):
    _corpus(tmp_path / "corpus")
    ds = load_bytes_dataset(str(tmp_path / "corpus"), 8, {"neg": 0, "pos": 1})
    assert ds.labels.tolist() == [0, 0, 1] and ds.vocab_size == 257
    again = load_bytes_dataset(str(tmp_path / "corpus"), 8, {"neg": 0, "pos": 1})
    assert ds.checksum() == again.checksum()
    np.testing.assert_array_equal(ds.tokens[1], [BYTE_PAD] * 3 + list(b"awful"))


def test_bytes_corpus_errors(tmp_path):
    _corpus(tmp_path / "corpus")
    with pytest.raises(UnknownLabelError):
        load_bytes_dataset(str(tmp_path / "corpus"), 8, {"neg": 0})
    with pytest.raises(OSError):
        load_bytes_dataset(str(tmp_path / "nowhere"), 8, {"neg": 0})
