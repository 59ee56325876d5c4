import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ramt.querygen import SearchQuery
from ramt.retrieval import (
    BackendConfig, BadMagicError, DimensionOverflowError, FixtureRegionProvider, GridSliceProvider,
    ImageFeatureGrid, RetrievalError, TextStore, TruncatedPayloadError, UnsupportedVersionError,
    decode_feature_bytes, encode_feature_bytes, extract_regions, make_backend, read_feature_file,
    retrieve_images, retrieve_supplementary_texts, write_feature_file, write_manifest,
)

SHAPE = (3, 4)


def q(*terms, rank=1):
    return SearchQuery(tuple(terms), rank)


def test_roundtrip_1x1(tmp_path):
    g = ImageFeatureGrid(np.zeros((1, 1)), "z")
    write_feature_file(g, tmp_path / "z.mmtf")
    assert read_feature_file(tmp_path / "z.mmtf") == g


def test_roundtrip_2x3_shape(tmp_path):
    g = ImageFeatureGrid(np.arange(6, dtype=np.float32).reshape(2, 3) + 0.25)
    write_feature_file(g, tmp_path / "g.mmtf")
    back = read_feature_file(tmp_path / "g.mmtf")
    assert back.shape == (2, 3) and back.values.tobytes() == g.values.tobytes()


def test_layout_is_exact():
    blob = encode_feature_bytes(np.array([[1.0, -2.0]], dtype=np.float32))
    assert blob == b"MMTF\x01" + struct.pack("<II", 1, 2) + struct.pack("<2f", 1.0, -2.0)


@given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_roundtrip_property(values):
    assert decode_feature_bytes(encode_feature_bytes(values)).tobytes() == values.tobytes()


def test_format_errors_are_distinct():
    good = encode_feature_bytes(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(BadMagicError):
        decode_feature_bytes(b"XMTF" + good[4:])
    with pytest.raises(TruncatedPayloadError):
        decode_feature_bytes(good[:-3])
    with pytest.raises(UnsupportedVersionError):
        decode_feature_bytes(good[:4] + b"\x02" + good[5:])
    with pytest.raises(DimensionOverflowError):
        decode_feature_bytes(b"MMTF\x01" + struct.pack("<II", 2**20, 2**20))
    assert not issubclass(BadMagicError, TruncatedPayloadError) and not issubclass(TruncatedPayloadError, BadMagicError)


def test_write_rejects_nonfinite(tmp_path):
    with pytest.raises(ValueError):
        write_feature_file(np.array([[np.nan]]), tmp_path / "x.mmtf")


@pytest.fixture
def store(tmp_path):
    root = tmp_path / "store"
    root.mkdir()
    rng = np.random.default_rng(0)
    for name in ["img7", "img8", "img9"]:
        write_feature_file(rng.standard_normal(SHAPE).astype(np.float32), root / f"{name}.mmtf")
    write_manifest({"dog": ["img7", "img8"], "snow": ["img9"]}, tmp_path / "manifest.jsonl")
    return tmp_path


def test_blank_backend():
    grids = retrieve_images([q("dog")], 5, BackendConfig("blank", SHAPE))
    assert len(grids) == 5 and all(g.shape == SHAPE and not g.values.any() for g in grids)


def test_local_index_lookup(store):
    cfg = BackendConfig("local_index", SHAPE, manifest=str(store / "manifest.jsonl"), store_dir=str(store / "store"))
    (g,) = retrieve_images([q("dog")], 1, cfg)
    assert g == read_feature_file(store / "store" / "img7.mmtf")
    grids = retrieve_images([q("snow", rank=1), q("zebra", rank=2)], 3, cfg)
    assert grids[0] == read_feature_file(store / "store" / "img9.mmtf")
    assert not grids[1].values.any()  # unmatched query backs off to blank
    assert grids[2] == grids[0]  # queries cycle


def test_local_index_errors(tmp_path, store):
    with pytest.raises(RetrievalError):
        make_backend(BackendConfig("local_index", SHAPE, manifest=str(tmp_path / "missing.jsonl")))
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    with pytest.raises(RetrievalError, match="corrupt"):
        make_backend(BackendConfig("local_index", SHAPE, manifest=str(bad), store_dir=str(store / "store")))


def test_random_backend_deterministic(store):
    cfg = BackendConfig("random", SHAPE, store_dir=str(store / "store"), seed=3)
    a = retrieve_images([q("dog")], 4, cfg, pair_id=1)
    b = retrieve_images([q("cat")], 4, cfg, pair_id=1)
    assert a == b and len(a) == 4
    gen = BackendConfig("random", SHAPE, seed=3)
    assert retrieve_images([], 2, gen, pair_id=0) == retrieve_images([], 2, gen, pair_id=0)


def test_fixture_backend(tmp_path):
    for rank in (1, 2):
        write_feature_file(np.full(SHAPE, rank, dtype=np.float32), tmp_path / f"4_{rank}.mmtf")
    cfg = BackendConfig("fixture", SHAPE, fixture_dir=str(tmp_path))
    grids = retrieve_images([], 2, cfg, pair_id=4)
    assert [float(g.values[0, 0]) for g in grids] == [1.0, 2.0]
    with pytest.raises(RetrievalError, match="rank 3"):
        retrieve_images([], 3, cfg, pair_id=4)


@pytest.mark.parametrize("kind", ["blank", "random", "fixture", "local_index"])
@pytest.mark.parametrize("count", [1, 3, 7])
def test_every_backend_returns_count_grids(tmp_path, store, kind, count):
    for rank in range(1, 8):
        write_feature_file(np.ones(SHAPE, dtype=np.float32), tmp_path / f"0_{rank}.mmtf")
    cfg = BackendConfig(kind, SHAPE, manifest=str(store / "manifest.jsonl"), store_dir=str(store / "store"), fixture_dir=str(tmp_path))
    grids = retrieve_images([q("dog"), q("snow", rank=2)], count, cfg, pair_id=0)
    assert len(grids) == count and {g.shape for g in grids} == {SHAPE}
    assert grids == retrieve_images([q("dog"), q("snow", rank=2)], count, cfg, pair_id=0)


def test_supplementary_texts():
    store = TextStore.from_lines(["the dog barks"])
    (t,) = retrieve_supplementary_texts([q("dog")], 1, store)
    assert t.tokens == ["the", "dog", "barks"] and not t.is_fallback
    (f,) = retrieve_supplementary_texts([q("dog")], 1, TextStore([]))
    assert f.tokens == ["dog"] and f.is_fallback


def test_supplementary_barbecue():
    store = TextStore.from_lines([
        "Group of friends at the beach.",
        "Delivery is hardly limited to pizza at this point; everything from sushi to barbecue seems available as a to-go order.",
    ])
    (t,) = retrieve_supplementary_texts([q("barbecue")], 1, store)
    assert "barbecue" in t.tokens and t.source_id == "line-1"


@given(st.lists(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=6), max_size=6),
       st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=4), st.integers(1, 6))
def test_containment_invariant(sentences, terms, count):
    store = TextStore(sentences)
    queries = [q(t, rank=i + 1) for i, t in enumerate(terms)]
    texts = retrieve_supplementary_texts(queries, count, store)
    assert len(texts) == count
    for t in texts:
        assert set(t.matched_query.terms) <= set(t.tokens)
        if t.is_fallback:
            assert not any(set(t.matched_query.terms) <= set(s) for s in sentences)


def test_text_store_missing(tmp_path):
    with pytest.raises(RetrievalError):
        TextStore.load(tmp_path / "nope.txt")


def test_grid_slices_regions():
    g = ImageFeatureGrid(np.arange(24, dtype=np.float32).reshape(6, 4), "img")
    r = extract_regions(g, 4, GridSliceProvider())
    assert len(r) == 4 and np.array_equal(r.vectors, g.values[:4])
    assert r.parent_image == "img"


def test_default_region_count_accepted():
    g = ImageFeatureGrid(np.zeros((196, 8), dtype=np.float32), "big")
    assert len(extract_regions(g, 128)) == 128


def test_fixture_regions(tmp_path):
    write_feature_file(np.ones((3, 4), dtype=np.float32), tmp_path / "img.regions.mmtf")
    g = ImageFeatureGrid(np.zeros((1, 4)), "img")
    assert extract_regions(g, 3, FixtureRegionProvider(tmp_path)).vectors.shape == (3, 4)
    with pytest.raises(RetrievalError):
        extract_regions(g, 4, FixtureRegionProvider(tmp_path))
    with pytest.raises(RetrievalError):
        extract_regions(ImageFeatureGrid(np.zeros((1, 4)), "other"), 1, FixtureRegionProvider(tmp_path))
