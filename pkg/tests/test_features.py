"""Feature store: format round-trips, normalization rules, error paths."""

import os

import numpy as np
import pytest

from l2g import errors
from l2g.features import (
    FeatureCollection,
    GlobalFeature,
    GlobalStore,
    LocalFeatureSet,
    Manifest,
    concat_collections,
    load_collection,
    load_globals,
    load_manifest,
    save_collection,
    save_globals,
    save_manifest,
)


def unit_rows(rng, n, d):
    rows = rng.normal(size=(n, d))
    return (rows / np.linalg.norm(rows, axis=1, keepdims=True)).astype(np.float32)


def random_collection(seed, n_images, d=8, max_desc=12):
    rng = np.random.default_rng(seed)
    sets = []
    for i in range(n_images):
        n = int(rng.integers(1, max_desc + 1))
        sets.append(LocalFeatureSet(f"img{i:03d}", unit_rows(rng, n, d)))
    return FeatureCollection(sets)


def test_single_identity_descriptor(tmp_path):
    c = FeatureCollection([LocalFeatureSet("a", np.array([[1, 0, 0, 0]], np.float32))])
    path = tmp_path / "one.l2gf"
    save_collection(c, path)
    loaded = load_collection(path)
    assert len(loaded) == 1
    assert loaded.dim == 4
    assert loaded[0].image_id == "a"
    np.testing.assert_array_equal(loaded[0].descriptors, c[0].descriptors)


def test_norm_within_renorm_tolerance_is_fixed(tmp_path):
    # serialize a descriptor with norm 1.005 by hand, expect unit norm on load
    c = FeatureCollection([LocalFeatureSet("a", np.array([[1, 0, 0, 0]], np.float32))])
    path = tmp_path / "off.l2gf"
    save_collection(c, path)
    raw = bytearray(path.read_bytes())
    scaled = np.array([1.005, 0, 0, 0], dtype="<f4").tobytes()
    raw[-16:] = scaled
    path.write_bytes(bytes(raw))
    loaded = load_collection(path)
    norm = np.linalg.norm(loaded[0].descriptors[0].astype(np.float64))
    assert abs(norm - 1.0) <= 1e-4


def test_norm_too_far_off_rejected(tmp_path):
    c = FeatureCollection([LocalFeatureSet("a", np.array([[1, 0, 0, 0]], np.float32))])
    path = tmp_path / "bad.l2gf"
    save_collection(c, path)
    raw = bytearray(path.read_bytes())
    raw[-16:] = np.array([1.5, 0, 0, 0], dtype="<f4").tobytes()
    path.write_bytes(bytes(raw))
    with pytest.raises(errors.ZeroNormDescriptor):
        load_collection(path)


def test_zero_norm_rejected():
    with pytest.raises(errors.ZeroNormDescriptor):
        LocalFeatureSet.from_raw("z", np.zeros((1, 4), np.float32))


def test_duplicate_id_rejected():
    rows = np.array([[1, 0, 0, 0]], np.float32)
    with pytest.raises(errors.DuplicateId):
        FeatureCollection([LocalFeatureSet("a", rows), LocalFeatureSet("a", rows)])


def test_empty_descriptor_set_rejected():
    with pytest.raises(errors.DimensionMismatch):
        LocalFeatureSet("a", np.zeros((0, 4), np.float32))


def test_mixed_dims_rejected():
    a = LocalFeatureSet("a", np.array([[1, 0, 0, 0]], np.float32))
    b = LocalFeatureSet("b", np.array([[1, 0]], np.float32))
    with pytest.raises(errors.DimensionMismatch):
        FeatureCollection([a, b])


def test_descriptor_cap():
    rng = np.random.default_rng(0)
    with pytest.raises(errors.DescriptorCapExceeded):
        LocalFeatureSet.from_raw("a", unit_rows(rng, 5, 4), cap=4)


def test_roundtrip_bit_exact(tmp_path):
    # random 10-image collection survives save/load byte-identically
    c = random_collection(7, 10)
    path = tmp_path / "c.l2gf"
    save_collection(c, path)
    loaded = load_collection(path)
    assert loaded.image_ids == c.image_ids
    for orig, back in zip(c, loaded):
        assert orig.descriptors.tobytes() == back.descriptors.tobytes()
    # file -> load -> save is also byte-identical
    path2 = tmp_path / "c2.l2gf"
    save_collection(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_order_preserved_across_roundtrip(tmp_path):
    c = random_collection(3, 25)
    path = tmp_path / "c.l2gf"
    save_collection(c, path)
    loaded = load_collection(path)
    assert loaded.image_ids == c.image_ids
    assert [loaded.ordinal_of(i) for i in c.image_ids] == list(range(len(c)))


def test_save_to_unwritable_path(tmp_path):
    c = random_collection(1, 2)
    with pytest.raises(errors.IoFailure):
        save_collection(c, tmp_path / "nosuchdir" / "c.l2gf")


def test_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\0" * 32)
    with pytest.raises(errors.BadMagic):
        load_collection(path)


def test_unsupported_version(tmp_path):
    c = random_collection(1, 1)
    path = tmp_path / "c.l2gf"
    save_collection(c, path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(errors.VersionUnsupported):
        load_collection(path)


def test_truncated_file(tmp_path):
    c = random_collection(5, 4)
    path = tmp_path / "c.l2gf"
    save_collection(c, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 7])
    with pytest.raises(errors.TruncatedFile):
        load_collection(path)


def test_globals_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    feats = [GlobalFeature(f"g{i}", unit_rows(rng, 1, 16)[0]) for i in range(6)]
    store = GlobalStore(feats)
    path = tmp_path / "g.l2gg"
    save_globals(store, path)
    loaded = load_globals(path)
    assert len(loaded) == 6
    for f in feats:
        np.testing.assert_array_equal(loaded.get(f.image_id), f.vector)
    assert loaded.get("missing") is None


def test_globals_wrong_magic_for_features(tmp_path):
    c = random_collection(1, 1)
    path = tmp_path / "c.l2gf"
    save_collection(c, path)
    with pytest.raises(errors.BadMagic):
        load_globals(path)


def test_collection_parallel_globals_validated():
    rng = np.random.default_rng(5)
    sets = [LocalFeatureSet("a", unit_rows(rng, 3, 8))]
    good = [GlobalFeature("a", unit_rows(rng, 1, 8)[0])]
    FeatureCollection(sets, good)
    with pytest.raises(errors.DuplicateId):
        FeatureCollection(sets, [GlobalFeature("b", unit_rows(rng, 1, 8)[0])])


def test_concat_preserves_order():
    a = random_collection(1, 3)
    rng = np.random.default_rng(2)
    b = FeatureCollection([LocalFeatureSet("zz", unit_rows(rng, 2, 8))])
    merged = concat_collections([a, b])
    assert merged.image_ids == a.image_ids + ["zz"]


def test_manifest_roundtrip(tmp_path):
    manifest = Manifest(
        database=["database.l2gf"],
        queries="queries.l2gf",
        distractors=["distractors.l2gf"],
        globals="globals.l2gg",
        ground_truth="gt.json",
    )
    path = tmp_path / "manifest.json"
    save_manifest(manifest, path)
    loaded = load_manifest(path)
    assert loaded.database == [os.path.join(tmp_path, "database.l2gf")]
    assert loaded.queries == os.path.join(tmp_path, "queries.l2gf")
    assert loaded.distractors == [os.path.join(tmp_path, "distractors.l2gf")]
