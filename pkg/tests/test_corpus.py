"""Synthetic corpus: scene generation, rasterization, captions, dataset file."""

import hashlib

import numpy as np
import pytest

from upaint.corpus import (
    BACKGROUNDS,
    MAX_CAPTION_TOKENS,
    PALETTE,
    PLURALS,
    SHAPES,
    SceneObject,
    SceneSpec,
    Vocabulary,
    build_dataset,
    build_vocabulary,
    caption_scene,
    gen_scene_spec,
    load_dataset,
    render_scene,
)
from upaint.errors import FormatError, VocabularyError


class TestSceneSpec:
    def test_simple_has_one_object(self):
        for seed in range(50):
            spec = gen_scene_spec(seed, "simple")
            assert len(spec.objects) == 1
            assert spec.style_tag == "plain"
            spec.validate()

    def test_deterministic(self):
        assert gen_scene_spec(42, "complex") == gen_scene_spec(42, "complex")
        assert gen_scene_spec(42, "simple") == gen_scene_spec(42, "simple")

    def test_complex_object_counts_cover_range(self):
        counts = {len(gen_scene_spec(seed, "complex").objects) for seed in range(10_000)}
        assert counts == {2, 3, 4}

    def test_positions_distinct(self):
        for seed in range(200):
            spec = gen_scene_spec(seed, "complex")
            cells = [o.cell for o in spec.objects]
            assert len(set(cells)) == len(cells)

    def test_unknown_complexity(self):
        with pytest.raises(ValueError):
            gen_scene_spec(0, "medium")

    def test_text_round_trip(self):
        for seed in range(100):
            spec = gen_scene_spec(seed, "complex")
            assert SceneSpec.from_text(spec.to_text()) == spec

    def test_validate_rejects_bad_specs(self):
        obj = SceneObject("circle", "red", "small", (0, 0))
        with pytest.raises(ValueError):
            SceneSpec((obj, obj), "black", "plain", "complex").validate()  # overlap
        with pytest.raises(ValueError):
            SceneSpec((obj,), "black", "night", "simple").validate()  # styled simple
        with pytest.raises(ValueError):
            SceneSpec((obj,), "black", "plain", "complex").validate()  # too few objects


class TestRenderScene:
    def test_zero_object_spec_gives_constant_background(self):
        spec = SceneSpec((), "gray", "plain", "simple")  # test-only, bypasses validate
        img = render_scene(spec, 32)
        expected = np.asarray(BACKGROUNDS["gray"], dtype=np.float64) / 127.5 - 1.0
        assert img.shape == (3, 32, 32)
        for c in range(3):
            assert np.all(img[c] == np.float32(expected[c]))

    def test_pure_function(self):
        spec = gen_scene_spec(5, "complex")
        a = render_scene(spec)
        b = render_scene(spec)
        assert np.array_equal(a, b)

    def test_red_circle_centroid_color(self):
        spec = SceneSpec(
            (SceneObject("circle", "red", "large", (0, 0)),), "black", "plain", "simple"
        )
        img = render_scene(spec, 32)
        # cell (0,0) center is pixel (8, 8)
        expected = np.asarray(PALETTE["red"], dtype=np.float64) / 127.5 - 1.0
        for c in range(3):
            assert abs(float(img[c, 8, 8]) - expected[c]) <= 1.0 / 255.0

    def test_range_and_dtype(self):
        for seed in range(20):
            img = render_scene(gen_scene_spec(seed, "complex"))
            assert img.dtype == np.float32
            assert img.min() >= -1.0 and img.max() <= 1.0

    def test_every_shape_rasterizes_nonempty(self):
        for shape in SHAPES:
            spec = SceneSpec(
                (SceneObject(shape, "white", "large", (1, 1)),), "black", "plain", "simple"
            )
            img = render_scene(spec, 32)
            bg = np.asarray(BACKGROUNDS["black"], dtype=np.float64) / 127.5 - 1.0
            changed = np.abs(img - np.float32(bg)[:, None, None]).sum(axis=0) > 0.1
            assert changed.sum() > 20, shape

    def test_style_transform_is_global(self):
        base = SceneSpec(
            (SceneObject("square", "blue", "large", (0, 1)), SceneObject("star", "red", "small", (1, 0))),
            "gray",
            "plain",
            "complex",
        )
        styled = SceneSpec(base.objects, base.background, "night", "complex")
        plain_img = render_scene(base).astype(np.float64)
        night_img = render_scene(styled).astype(np.float64)
        from upaint.corpus import STYLE_TRANSFORMS

        scale, offset = STYLE_TRANSFORMS["night"]
        expected = np.clip(
            plain_img * np.asarray(scale)[:, None, None] + np.asarray(offset)[:, None, None],
            -1,
            1,
        )
        np.testing.assert_allclose(night_img, expected, atol=1e-6)


class TestCaptions:
    def test_simple_caption_has_exactly_one_shape_word(self):
        vocab = build_vocabulary()
        shape_words = set(SHAPES) | set(PLURALS.values())
        for seed in range(100):
            spec = gen_scene_spec(seed, "simple")
            words = vocab.decode(caption_scene(spec, seed)).split()
            assert sum(w in shape_words for w in words) == 1

    def test_foggy_caption_mentions_fog(self):
        vocab = build_vocabulary()
        found = 0
        for seed in range(300):
            spec = gen_scene_spec(seed, "complex")
            if spec.style_tag != "foggy":
                continue
            found += 1
            words = vocab.decode(caption_scene(spec, seed)).split()
            assert "foggy" in words or "fog" in words
        assert found > 10

    def test_token_round_trip(self):
        vocab = build_vocabulary()
        for seed in range(200):
            spec = gen_scene_spec(seed, "complex")
            ids = caption_scene(spec, seed)
            assert ids == vocab.encode(vocab.decode(ids))
            assert len(ids) <= MAX_CAPTION_TOKENS

    def test_caption_faithful_to_objects(self):
        vocab = build_vocabulary()
        for seed in range(300):
            for complexity in ("simple", "complex"):
                spec = gen_scene_spec(seed, complexity)
                words = set(vocab.decode(caption_scene(spec, seed)).split())
                for obj in spec.objects:
                    assert obj.color in words
                    assert obj.shape in words or PLURALS[obj.shape] in words

    def test_deterministic_per_seed(self):
        spec = gen_scene_spec(9, "complex")
        assert caption_scene(spec, 3) == caption_scene(spec, 3)


class TestVocabulary:
    def test_reserved_ids(self):
        vocab = build_vocabulary()
        assert vocab.id_to_token(0) == "<pad>"
        assert vocab.id_to_token(1) == "<bos>"
        assert vocab.id_to_token(2) == "<eos>"

    def test_bijection(self):
        vocab = build_vocabulary()
        for i in range(len(vocab)):
            assert vocab.token_to_id(vocab.id_to_token(i)) == i

    def test_unknown_token(self):
        vocab = build_vocabulary()
        with pytest.raises(VocabularyError):
            vocab.encode("a crimson dodecahedron")
        with pytest.raises(VocabularyError):
            vocab.id_to_token(len(vocab))

    def test_reserved_prefix_required(self):
        with pytest.raises(VocabularyError):
            Vocabulary(["a", "b", "c"])


class TestDatasetFile:
    def test_empty_dataset_valid(self, tmp_path):
        path = build_dataset(0, 0, seed=1, out_path=tmp_path / "empty.upds")
        ds = load_dataset(path)
        assert len(ds) == 0
        assert ds.vocab == build_vocabulary()

    def test_byte_reproducible(self, tmp_path):
        p1 = build_dataset(20, 20, seed=7, out_path=tmp_path / "a.upds")
        p2 = build_dataset(20, 20, seed=7, out_path=tmp_path / "b.upds")
        h1 = hashlib.sha256(p1.read_bytes()).hexdigest()
        h2 = hashlib.sha256(p2.read_bytes()).hexdigest()
        assert h1 == h2
        p3 = build_dataset(20, 20, seed=8, out_path=tmp_path / "c.upds")
        assert hashlib.sha256(p3.read_bytes()).hexdigest() != h1

    def test_record_count_and_balance(self, tmp_path):
        path = build_dataset(12, 5, seed=3, out_path=tmp_path / "d.upds")
        ds = load_dataset(path)
        assert len(ds) == 17
        assert sum(s.complexity == "simple" for s in ds.specs) == 12
        assert sum(s.complexity == "complex" for s in ds.specs) == 5

    def test_round_trip_content(self, tmp_path):
        path = build_dataset(4, 4, seed=11, out_path=tmp_path / "e.upds")
        ds = load_dataset(path)
        assert ds.images.shape == (8, 3, 32, 32)
        for i, spec in enumerate(ds.specs):
            np.testing.assert_array_equal(ds.images[i], render_scene(spec, 32))
            assert ds.vocab.decode(ds.captions[i])  # decodable

    def test_sidecar_vocabulary(self, tmp_path):
        path = build_dataset(1, 0, seed=2, out_path=tmp_path / "f.upds")
        sidecar = tmp_path / "f.upds.vocab.txt"
        assert sidecar.exists()
        lines = sidecar.read_text().splitlines()
        assert lines == build_vocabulary().tokens

    def test_truncated_file_is_format_error(self, tmp_path):
        path = build_dataset(3, 0, seed=5, out_path=tmp_path / "g.upds")
        raw = path.read_bytes()
        for cut in (3, 9, len(raw) // 2, len(raw) - 7):
            bad = tmp_path / "bad.upds"
            bad.write_bytes(raw[:cut])
            with pytest.raises(FormatError):
                load_dataset(bad)

    def test_bad_magic_is_format_error(self, tmp_path):
        bad = tmp_path / "bad2.upds"
        bad.write_bytes(b"NOPE!" + b"\0" * 64)
        with pytest.raises(FormatError):
            load_dataset(bad)

    def test_negative_counts_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            build_dataset(-1, 0, seed=0, out_path=tmp_path / "h.upds")
