import numpy as np
import pytest
import torch

from fauxnews.data_model import BBox, Domain, ManipClass, validate_reasoning
from fauxnews.forge import (
    ConsistencyScorer,
    ForgeConfig,
    ForgeError,
    Lexicon,
    apply_fact_manip,
    apply_image_manip,
    apply_text_manip,
    compute_forge_stats,
    consistency_score,
    default_lexicon,
    extract_entity,
    forge_dataset,
    generate_base,
    load_lexicon,
)
from conftest import make_sample


def diff_bbox_pixels(before: np.ndarray, after: np.ndarray):
    changed = np.any(before != after, axis=2)
    ys, xs = np.where(changed)
    if len(ys) == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


class TestLexicon:
    def test_default_lexicon_valid(self, lexicon):
        assert "heated extolling" in lexicon.reversal_pairs
        assert "Liu Xiang" in lexicon.entity_names

    def test_keys_disjoint_from_values(self):
        with pytest.raises(ForgeError, match="overlap"):
            Lexicon(reversal_pairs={"a b": "c d", "c d": "e f"}, entity_names=["X Y"])

    def test_names_distinct(self):
        with pytest.raises(ForgeError, match="distinct"):
            Lexicon(reversal_pairs={"a": "b"}, entity_names=["X", "X"])

    def test_file_round_trip(self, tmp_path, lexicon):
        path = tmp_path / "lex.txt"
        lines = [f"{k}\t{v}" for k, v in lexicon.reversal_pairs.items()]
        lines.append("[NAMES]")
        lines.extend(lexicon.entity_names)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        loaded = load_lexicon(path)
        assert loaded.reversal_pairs == lexicon.reversal_pairs
        assert loaded.entity_names == lexicon.entity_names


class TestForgeConfig:
    def test_defaults_mirror_target_rates(self):
        cfg = ForgeConfig()
        assert cfg.n_samples == 655
        assert cfg.manip_rate == pytest.approx(0.684)
        assert cfg.multimodal_rate == pytest.approx(0.078)

    def test_infeasible_config(self):
        with pytest.raises(ForgeError, match="infeasible"):
            ForgeConfig(manip_rate=0.1, multimodal_rate=0.2)

    def test_weights_normalized(self):
        cfg = ForgeConfig(domain_mix=(2, 2, 2, 2))
        assert cfg.domain_mix == pytest.approx((0.25, 0.25, 0.25, 0.25))


class TestGenerateBase:
    def test_determinism(self, lexicon):
        cfg = ForgeConfig(n_samples=10, seed=7)
        assert generate_base(cfg, lexicon) == generate_base(cfg, lexicon)

    def test_all_real_with_face_and_lexicon_hooks(self, lexicon):
        ds = generate_base(ForgeConfig(n_samples=12, seed=3), lexicon)
        for s in ds:
            assert s.label == 0 and s.fake_cls is ManipClass.ORIG
            assert s.face_bbox is not None
            assert extract_entity(s.text) is not None
            assert any(k in s.text for k in lexicon.reversal_pairs)
            # exactly one entity name from the pool appears
            assert sum(1 for n in lexicon.entity_names if n in s.text) == 1

    def test_empty(self, lexicon):
        assert len(generate_base(ForgeConfig(n_samples=0), lexicon)) == 0


class TestImageManipulation:
    def test_swap_locality_and_tight_bbox(self, lexicon):
        base = generate_base(ForgeConfig(n_samples=4, seed=11), lexicon).samples[0]
        out = apply_image_manip(base, "swap", seed=99)
        assert out.label == 1 and out.fake_cls is ManipClass.IMAGE
        rect = out.face_bbox.to_pixels(224, 224)
        diff = diff_bbox_pixels(base.image, out.image)
        assert diff == rect
        outside = np.ones((224, 224), dtype=bool)
        x1, y1, x2, y2 = rect
        outside[y1:y2, x1:x2] = False
        assert np.array_equal(base.image[outside], out.image[outside])

    def test_edit_stays_inside_bbox(self, lexicon):
        base = generate_base(ForgeConfig(n_samples=4, seed=12), lexicon).samples[1]
        out = apply_image_manip(base, "edit", seed=5)
        x1, y1, x2, y2 = out.face_bbox.to_pixels(224, 224)
        outside = np.ones((224, 224), dtype=bool)
        outside[y1:y2, x1:x2] = False
        assert np.array_equal(base.image[outside], out.image[outside])
        assert np.any(base.image != out.image)

    def test_zero_strength_edit_unchanged_but_fake(self, lexicon):
        base = generate_base(ForgeConfig(n_samples=2, seed=13), lexicon).samples[0]
        out = apply_image_manip(base, "edit", seed=5, strength=0.0)
        assert np.array_equal(base.image, out.image)
        assert out.label == 1 and out.fake_cls is ManipClass.IMAGE

    def test_no_face_region_error(self):
        s = make_sample(with_bbox=False)
        with pytest.raises(ForgeError, match="no face region"):
            apply_image_manip(s, "swap", seed=1)

    def test_determinism(self, lexicon):
        base = generate_base(ForgeConfig(n_samples=2, seed=14), lexicon).samples[0]
        a = apply_image_manip(base, "swap", seed=42)
        b = apply_image_manip(base, "swap", seed=42)
        assert np.array_equal(a.image, b.image)


class TestTextManipulation:
    def test_semantic_reversal_example(self):
        s = make_sample(text="Liu Xiang returns triumphantly and receives heated extolling")
        lex = Lexicon(reversal_pairs={"heated extolling": "harsh questioning"}, entity_names=["Liu Xiang"])
        out = apply_text_manip(s, lex)
        assert out.text == "Liu Xiang returns triumphantly and receives harsh questioning"
        assert out.label == 1 and out.fake_cls is ManipClass.TEXT

    def test_exactly_one_replacement(self):
        s = make_sample(text="warm welcome then warm welcome again")
        lex = Lexicon(reversal_pairs={"warm welcome": "cold shoulder"}, entity_names=["A B"])
        out = apply_text_manip(s, lex)
        assert out.text == "cold shoulder then warm welcome again"

    def test_no_key_error(self):
        s = make_sample(text="nothing matches here")
        lex = Lexicon(reversal_pairs={"warm welcome": "cold shoulder"}, entity_names=["A B"])
        with pytest.raises(ForgeError, match="no reversal-pair key"):
            apply_text_manip(s, lex)

    def test_twice_with_disjoint_pairs(self):
        # string-diff oracle: each application rewrites exactly its own phrase
        text = "Mei Lin receives warm welcome and heated extolling tonight"
        s = make_sample(text=text)
        lex_a = Lexicon(reversal_pairs={"warm welcome": "cold shoulder"}, entity_names=["A B"])
        lex_b = Lexicon(reversal_pairs={"heated extolling": "harsh questioning"}, entity_names=["A B"])
        once = apply_text_manip(s, lex_a)
        twice = apply_text_manip(once, lex_b)
        assert twice.text == "Mei Lin receives cold shoulder and harsh questioning tonight"
        assert apply_text_manip(once, lex_b).text == twice.text
        with pytest.raises(ForgeError):
            apply_text_manip(twice, lex_b)  # idempotent per key: key now absent


class TestFactManipulation:
    def test_toy_recognizer(self):
        assert extract_entity("Liu Xiang returns triumphantly")[1] == "Liu Xiang"
        assert extract_entity("no capitalized entity here") is None
        assert extract_entity("The train left early") is None  # sentence-initial stopword
        assert extract_entity("After Alex Morgan spoke, the crowd cheered")[1] == "Alex Morgan"

    def test_seeded_replacement_deterministic(self, lexicon):
        s = make_sample(text="Liu Xiang returns triumphantly and receives heated extolling")
        a = apply_fact_manip(s, lexicon, seed=77)
        b = apply_fact_manip(s, lexicon, seed=77)
        assert a.text == b.text
        assert a.fake_cls is ManipClass.FACT
        assert "Liu Xiang" not in a.text

    def test_no_entity_error(self, lexicon):
        s = make_sample(text="no capitalized entity here")
        with pytest.raises(ForgeError, match="no recognizable entity"):
            apply_fact_manip(s, lexicon, seed=1)

    def test_replacement_never_identity_over_seed_sweep(self, lexicon):
        s = make_sample(text="Liu Xiang returns triumphantly and receives heated extolling")
        for seed in range(1000):
            out = apply_fact_manip(s, lexicon, seed=seed)
            assert not out.text.startswith("Liu Xiang ")


class TestConsistency:
    def test_cosine_unit_cases(self):
        a = torch.tensor([1.0, 0.0], dtype=torch.float64)
        b = torch.tensor([0.0, 1.0], dtype=torch.float64)
        assert ConsistencyScorer.cosine(a, a) == pytest.approx(1.0)
        assert ConsistencyScorer.cosine(a, b) == pytest.approx(0.0)
        assert ConsistencyScorer.cosine(a, -a) == pytest.approx(-1.0)

    def test_score_deterministic_and_bounded(self, lexicon):
        s = generate_base(ForgeConfig(n_samples=2, seed=21), lexicon).samples[0]
        v1 = consistency_score(s.image, s.text)
        v2 = consistency_score(s.image, s.text)
        assert v1 == v2
        assert -1.0 <= v1 <= 1.0


class TestForgeDataset:
    def test_counts_from_config(self, lexicon):
        ds = forge_dataset(ForgeConfig(n_samples=100, manip_rate=0.5, multimodal_rate=0.1, seed=3), lexicon)
        stats = compute_forge_stats(ds)
        fakes = sum(1 for s in ds if s.label == 1)
        cross = sum(1 for s in ds if s.fake_cls in (ManipClass.IMAGE_TEXT, ManipClass.IMAGE_FACT))
        assert fakes == 50 and cross == 10
        assert stats["manip_rate"] == pytest.approx(0.5)

    def test_type_mix_within_rounding(self, lexicon):
        # count oracle: uniform split of uni types and of cross types
        ds = forge_dataset(ForgeConfig(n_samples=100, manip_rate=0.5, multimodal_rate=0.1, seed=3), lexicon)
        stats = compute_forge_stats(ds)["fake_cls"]
        uni = [stats["image"], stats["text"], stats["fact"]]
        assert sum(uni) == 40 and max(uni) - min(uni) <= 1
        assert stats["image&text"] + stats["image&fact"] == 10
        assert abs(stats["image&text"] - stats["image&fact"]) <= 1

    def test_orig_label_soundness(self, forge32):
        for s in forge32:
            assert (s.fake_cls is ManipClass.ORIG) == (s.label == 0)

    def test_schema_and_reasoning_valid(self, forge32):
        forge32.validate()
        for s in forge32:
            assert validate_reasoning(s) == []

    def test_determinism(self, lexicon):
        cfg = ForgeConfig(n_samples=10, seed=7)
        assert forge_dataset(cfg, lexicon) == forge_dataset(cfg, lexicon)

    def test_default_rates_on_655(self, lexicon):
        ds = forge_dataset(ForgeConfig(seed=2), lexicon)
        stats = compute_forge_stats(ds)
        assert len(ds) == 655
        assert abs(stats["manip_rate"] - 0.684) <= 0.01
        assert abs(stats["crossmodal_rate"] - 0.078) <= 0.005
