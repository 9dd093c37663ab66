import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modalvit.dataset import (
    CASE_TABLE,
    KINDS,
    BuiltDataset,
    SampleRecord,
    assemble_case,
    load_built_dataset,
    load_registry,
    make_batches,
    save_built_dataset,
    save_registry,
    split_sequences,
)

# Independent encoding of the 12 training-case compositions, column order:
# original, svd_recon, svd_mode, hodmd_recon, hodmd_mode, svd_of_hodmd_mode_recon
EXPECTED_CASE_MATRIX = {
    1: (1, 0, 0, 0, 0, 0),
    2: (0, 1, 0, 0, 0, 0),
    3: (1, 1, 1, 0, 0, 0),
    4: (1, 1, 0, 0, 0, 0),
    5: (0, 1, 1, 0, 0, 0),
    6: (0, 0, 0, 1, 0, 0),
    7: (0, 0, 0, 1, 1, 0),
    8: (0, 1, 0, 1, 0, 0),
    9: (1, 1, 0, 1, 0, 0),
    10: (0, 0, 0, 1, 1, 1),
    11: (0, 1, 1, 1, 1, 0),
    12: (0, 1, 1, 1, 1, 1),
}


def test_case_table_matches_expected_matrix():
    assert set(CASE_TABLE) == set(range(1, 13))
    for case, row in EXPECTED_CASE_MATRIX.items():
        expected_kinds = {k for k, flag in zip(KINDS, row) if flag}
        assert CASE_TABLE[case] == expected_kinds, f"case {case}"


def toy_registry(num_seqs=3, counts=(4, 4, 2, 3, 2, 2)):
    """Registry with a known number of images per kind per sequence."""
    registry, labels = {}, {}
    img = np.zeros((4, 4), dtype=np.float32)
    for i in range(num_seqs):
        sid = f"seq{i}"
        registry[sid] = {k: [img + j for j in range(n)] for k, n in zip(KINDS, counts)}
        labels[sid] = i % 2
    return registry, labels


def test_case1_originals_only():
    registry, labels = toy_registry(num_seqs=2, counts=(5, 4, 2, 3, 2, 1))
    samples = assemble_case(1, registry, labels)
    assert len(samples) == 10
    assert all(s.source_kind == "original" for s in samples)


def test_case6_hodmd_recon_only():
    registry, labels = toy_registry(num_seqs=2, counts=(5, 4, 2, 3, 2, 1))
    samples = assemble_case(6, registry, labels)
    assert len(samples) == 6
    assert all(s.source_kind == "hodmd_recon" for s in samples)


def test_case_counts_are_additive():
    counts = (4, 6, 2, 5, 3, 3)
    registry, labels = toy_registry(num_seqs=3, counts=counts)
    per_kind = dict(zip(KINDS, counts))
    for case, row in EXPECTED_CASE_MATRIX.items():
        expected = 3 * sum(per_kind[k] for k, flag in zip(KINDS, row) if flag)
        samples = assemble_case(case, registry, labels)
        assert len(samples) == expected, f"case {case}"


def test_case12_counts_sum_of_five_columns():
    counts = (7, 7, 5, 6, 4, 4)
    registry, labels = toy_registry(num_seqs=2, counts=counts)
    samples = assemble_case(12, registry, labels)
    assert len(samples) == 2 * (7 + 5 + 6 + 4 + 4)


def test_assemble_missing_kind_errors():
    registry, labels = toy_registry(num_seqs=1)
    del registry["seq0"]["hodmd_mode"]
    with pytest.raises(ValueError):
        assemble_case(7, registry, labels)
    # an empty list is allowed: the product legitimately does not exist
    registry["seq0"]["hodmd_mode"] = []
    samples = assemble_case(7, registry, labels)
    assert all(s.source_kind == "hodmd_recon" for s in samples)


def test_assemble_bad_case_id():
    registry, labels = toy_registry(num_seqs=1)
    with pytest.raises(ValueError):
        assemble_case(13, registry, labels)
    with pytest.raises(ValueError):
        assemble_case(0, registry, labels)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def labels_for(per_class, num_classes=3):
    return {
        f"c{c}_s{i}": f"class{c}" for c in range(num_classes) for i in range(per_class)
    }


def test_split_10_per_class_is_6_2_2():
    plan = split_sequences(labels_for(10), fractions=(0.6, 0.2, 0.2), seed=0)
    for c in range(3):
        ids = [sid for sid in plan.assignment if sid.startswith(f"c{c}_")]
        counts = {s: sum(plan.assignment[i] == s for i in ids) for s in ("train", "val", "test")}
        assert counts == {"train": 6, "val": 2, "test": 2}


def test_split_7_per_class_within_one_of_target():
    plan = split_sequences(labels_for(7), fractions=(0.6, 0.2, 0.2), seed=3)
    targets = (4.2, 1.4, 1.4)
    for c in range(3):
        ids = [sid for sid in plan.assignment if sid.startswith(f"c{c}_")]
        counts = [sum(plan.assignment[i] == s for i in ids) for s in ("train", "val", "test")]
        assert sum(counts) == 7
        assert all(c >= 1 for c in counts)
        for got, want in zip(counts, targets):
            assert abs(got - want) <= 1.0


def test_split_deterministic_under_seed():
    a = split_sequences(labels_for(8), seed=11)
    b = split_sequences(labels_for(8), seed=11)
    assert a.assignment == b.assignment
    c = split_sequences(labels_for(8), seed=12)
    assert a.assignment != c.assignment  # overwhelmingly likely


def test_split_rejects_small_class():
    with pytest.raises(ValueError):
        split_sequences(labels_for(2))


def test_split_every_class_in_every_split():
    plan = split_sequences(labels_for(3), seed=0)
    for c in range(3):
        splits = {plan.assignment[f"c{c}_s{i}"] for i in range(3)}
        assert splits == {"train", "val", "test"}


def test_no_sequence_in_two_splits():
    plan = split_sequences(labels_for(9), seed=5)
    # assignment maps each sequence to exactly one split by construction;
    # derived samples inherit it, so leakage means one sid with two splits
    assert len(plan.assignment) == 27
    for split in ("train", "val", "test"):
        ids = set(plan.ids_for(split))
        for other in ("train", "val", "test"):
            if other != split:
                assert ids.isdisjoint(plan.ids_for(other))


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------


def sample_pool(n_per_class=40, num_classes=4, size=8):
    rng = np.random.default_rng(0)
    out = []
    for c in range(num_classes):
        for i in range(n_per_class):
            out.append(
                SampleRecord(
                    image=rng.random((size, size)).astype(np.float32),
                    label=c,
                    source_kind="original",
                    sequence_id=f"c{c}_s{i % 5}",
                )
            )
    return out


def test_plain_batches_when_fraction_zero():
    samples = sample_pool()
    batches = list(make_batches(samples, batch_size=32, min_class_fraction=0.0, seed=1))
    assert len(batches) == 5  # ceil(160 / 32)
    for images, labels in batches:
        assert images.shape == (32, 8, 8)
        assert labels.shape == (32,)


def test_min_class_quota_enforced():
    samples = sample_pool()
    quota = int(np.ceil(0.1 * 64))  # ceil(6.4) = 7
    assert quota == 7
    count = 0
    for images, labels in make_batches(
        samples, batch_size=64, min_class_fraction=0.1, seed=2, num_batches=100
    ):
        count += 1
        for c in range(4):
            assert int(np.sum(labels == c)) >= quota
    assert count == 100


def test_batches_deterministic():
    samples = sample_pool()
    a = list(make_batches(samples, batch_size=16, seed=9, num_batches=4))
    b = list(make_batches(samples, batch_size=16, seed=9, num_batches=4))
    for (ia, la), (ib, lb) in zip(a, b):
        np.testing.assert_array_equal(ia, ib)
        np.testing.assert_array_equal(la, lb)


def test_batches_resumable_mid_stream():
    samples = sample_pool()
    full = list(make_batches(samples, batch_size=16, seed=9, num_batches=6))
    tail = list(
        itertools.islice(make_batches(samples, batch_size=16, seed=9, num_batches=6), 3, None)
    )
    for (ia, la), (ib, lb) in zip(full[3:], tail):
        np.testing.assert_array_equal(ia, ib)
        np.testing.assert_array_equal(la, lb)


def test_augmented_batches_preserve_label_and_dims():
    samples = sample_pool(size=10)
    for images, labels in make_batches(
        samples, batch_size=16, seed=3, augment=True, target_size=12, num_batches=3
    ):
        assert images.shape == (16, 12, 12)
        assert set(np.unique(labels)).issubset({0, 1, 2, 3})


def test_augment_deterministic_under_seed():
    samples = sample_pool(size=10)
    a = list(make_batches(samples, batch_size=8, seed=5, augment=True, target_size=10, num_batches=2))
    b = list(make_batches(samples, batch_size=8, seed=5, augment=True, target_size=10, num_batches=2))
    for (ia, _), (ib, _) in zip(a, b):
        np.testing.assert_array_equal(ia, ib)


def test_excessive_fraction_errors():
    samples = sample_pool(num_classes=4)
    with pytest.raises(ValueError):
        list(make_batches(samples, batch_size=8, min_class_fraction=0.3))


@given(st.integers(min_value=0, max_value=2**31), st.integers(min_value=1, max_value=3))
@settings(max_examples=15, deadline=None)
def test_batch_stream_pure_function_of_seed_and_index(seed, idx):
    samples = sample_pool(n_per_class=10)
    stream = list(make_batches(samples, batch_size=8, seed=seed, num_batches=idx + 1))
    again = list(make_batches(samples, batch_size=8, seed=seed, num_batches=idx + 1))
    np.testing.assert_array_equal(stream[idx][0], again[idx][0])


# ---------------------------------------------------------------------------
# registry and built-dataset round trips
# ---------------------------------------------------------------------------


def test_registry_roundtrip(tmp_path):
    registry, _ = toy_registry(num_seqs=2, counts=(3, 3, 1, 2, 1, 1))
    labels = {"seq0": "a", "seq1": "b"}
    registry["seq1"]["hodmd_recon"] = []  # legitimately absent
    save_registry(tmp_path, registry, labels)
    back, back_labels = load_registry(tmp_path)
    assert back_labels == labels
    assert set(back) == {"seq0", "seq1"}
    for kind in KINDS:
        assert len(back["seq0"][kind]) == len(registry["seq0"][kind])
    assert back["seq1"]["hodmd_recon"] == []
    np.testing.assert_array_equal(back["seq0"]["original"][2], registry["seq0"]["original"][2])


def test_built_dataset_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    records = [
        SampleRecord(rng.random((6, 6)).astype(np.float32), c % 2, "original", f"s{c}")
        for c in range(5)
    ]
    ds = BuiltDataset(classes=["a", "b"], splits={"train": records, "val": [], "test": records[:2]})
    save_built_dataset(tmp_path, ds)
    back = load_built_dataset(tmp_path)
    assert back.classes == ["a", "b"]
    assert len(back.samples("train")) == 5
    assert back.samples("val") == []
    assert len(back.samples("test", kind="original")) == 2
    np.testing.assert_array_equal(back.samples("train")[3].image, records[3].image)
    assert back.samples("train")[3].sequence_id == "s3"
