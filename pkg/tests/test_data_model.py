import numpy as np
import pytest

from fauxnews.data_model import (
    AUTH_FAKE,
    AUTH_REAL,
    BBox,
    Dataset,
    Domain,
    ManipClass,
    NewsSample,
    SchemaError,
    load_dataset,
    render_reasoning,
    save_dataset,
    split_reasoning,
    validate_reasoning,
)
from conftest import make_sample


class TestBBox:
    def test_valid_box(self):
        b = BBox(0.1, 0.2, 0.5, 0.6)
        assert b.width == pytest.approx(0.4)
        assert b.area == pytest.approx(0.16)

    def test_x_order_violation(self):
        with pytest.raises(SchemaError, match="x1<x2 violated"):
            BBox(0.9, 0.1, 0.2, 0.5)

    def test_y_order_violation(self):
        with pytest.raises(SchemaError, match="y1<y2 violated"):
            BBox(0.1, 0.6, 0.5, 0.2)

    @pytest.mark.parametrize("coords", [(-0.1, 0.1, 0.5, 0.5), (0.1, 0.1, 1.2, 0.5)])
    def test_out_of_range(self, coords):
        with pytest.raises(SchemaError, match="outside"):
            BBox(*coords)

    def test_pixel_round_trip(self):
        # boxes built from pixel corners snap back to those corners
        rng = np.random.default_rng(0)
        for _ in range(200):
            w, h = 224, 224
            x1, y1 = int(rng.integers(0, w - 2)), int(rng.integers(0, h - 2))
            x2, y2 = int(rng.integers(x1 + 1, w)), int(rng.integers(y1 + 1, h))
            b = BBox.from_pixels(x1, y1, x2, y2, w, h)
            assert b.to_pixels(w, h) == (x1, y1, x2, y2)


class TestEnums:
    def test_domain_closed(self):
        with pytest.raises(SchemaError):
            Domain.parse("weather")

    def test_manip_closed(self):
        with pytest.raises(SchemaError):
            ManipClass.parse("video")

    def test_exactly_six_classes(self):
        assert {m.value for m in ManipClass} == {"orig", "image", "text", "fact", "image&text", "image&fact"}

    def test_combination_rules(self):
        assert ManipClass.ORIG.with_image() is ManipClass.IMAGE
        assert ManipClass.TEXT.with_image() is ManipClass.IMAGE_TEXT
        assert ManipClass.IMAGE.with_fact() is ManipClass.IMAGE_FACT
        with pytest.raises(ValueError):
            ManipClass.FACT.with_text()


class TestSampleInvariants:
    def test_valid_sample(self):
        make_sample().validate()

    def test_label_fake_cls_consistency(self):
        s = make_sample(label=0, fake_cls=ManipClass.IMAGE)
        with pytest.raises(SchemaError, match="fake_cls"):
            s.validate()

    def test_image_manip_requires_bbox(self):
        s = make_sample(label=1, fake_cls=ManipClass.IMAGE_TEXT, with_bbox=False)
        with pytest.raises(SchemaError, match="face_bbox"):
            s.validate()

    def test_empty_reasoning_rejected(self):
        s = make_sample()
        s.reasoning = "  "
        with pytest.raises(SchemaError, match="reasoning"):
            s.validate()

    def test_duplicate_ids_rejected(self):
        with pytest.raises(SchemaError, match="duplicate"):
            Dataset(samples=[make_sample("a"), make_sample("a")])


class TestReasoningValidation:
    def test_fake_annotation_passes(self):
        s = make_sample(label=1, fake_cls=ManipClass.TEXT)
        assert s.reasoning.find("No, the news is fake") > 0
        assert validate_reasoning(s) == []

    def test_forced_contradiction(self):
        s = make_sample(label=0)
        s.reasoning = s.reasoning.replace(AUTH_REAL, AUTH_FAKE)
        assert "authenticity-mismatch" in validate_reasoning(s)

    def test_missing_clue(self):
        s = make_sample()
        s.reasoning = s.reasoning.split("[CLUE]")[0]
        assert "missing-clue" in validate_reasoning(s)

    def test_section_order(self):
        s = make_sample()
        auth, summary, clue = split_reasoning(s.reasoning)
        s.reasoning = f"[SUMMARY] {summary} [AUTH] {auth} [CLUE] {clue}"
        assert validate_reasoning(s) == ["section-order"]

    def test_split_render_round_trip(self):
        s = make_sample(label=1, fake_cls=ManipClass.TEXT)
        auth, summary, clue = split_reasoning(s.reasoning)
        assert render_reasoning(1, summary, clue) == s.reasoning


class TestPersistence:
    def test_round_trip_identity(self, tmp_path, forge32):
        path = tmp_path / "train.jsonl"
        save_dataset(forge32, path)
        loaded = load_dataset(path)
        assert loaded == forge32

    def test_byte_stable_metadata(self, tmp_path, forge32):
        path = tmp_path / "train.jsonl"
        save_dataset(forge32, path)
        first = path.read_bytes()
        save_dataset(load_dataset(path), path)
        assert path.read_bytes() == first

    def test_round_trip_property_random_datasets(self, tmp_path):
        # randomized datasets across sizes, domains, classes and bbox presence
        rng = np.random.default_rng(42)
        for trial in range(8):
            n = int(rng.integers(0, 6))
            samples = []
            for i in range(n):
                fake = int(rng.integers(0, 2))
                cls = ManipClass.ORIG if not fake else [ManipClass.TEXT, ManipClass.FACT][int(rng.integers(0, 2))]
                samples.append(
                    make_sample(
                        f"t{trial}s{i}",
                        label=fake,
                        fake_cls=cls,
                        domain=list(Domain)[int(rng.integers(0, 4))],
                        size=int(rng.integers(8, 40)),
                        seed=int(rng.integers(0, 1 << 31)),
                    )
                )
            ds = Dataset(samples=samples, split="test", seed=trial)
            path = tmp_path / f"ds{trial}.jsonl"
            save_dataset(ds, path)
            assert load_dataset(path) == ds

    def test_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        save_dataset(Dataset(samples=[], split="train", seed=1), path)
        assert path.read_bytes() == b""
        loaded = load_dataset(path)
        assert len(loaded) == 0 and loaded.seed == 1

    def test_655_records(self, tmp_path):
        samples = [make_sample(f"s{i}", size=8, seed=i) for i in range(655)]
        path = tmp_path / "full.jsonl"
        save_dataset(Dataset(samples=samples), path)
        assert len(path.read_text(encoding="utf-8").splitlines()) == 655

    def test_key_order_fixed(self, tmp_path):
        path = tmp_path / "one.jsonl"
        save_dataset(Dataset(samples=[make_sample()]), path)
        line = path.read_text(encoding="utf-8").splitlines()[0]
        positions = [line.index(f'"{k}"') for k in ("id", "image", "text", "domain", "label", "fake_cls", "face_bbox", "reasoning")]
        assert positions == sorted(positions)

    def test_schema_error_names_record_and_field(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        save_dataset(Dataset(samples=[make_sample("ok"), make_sample("bad")]), path)
        lines = path.read_text(encoding="utf-8").splitlines()
        lines[1] = lines[1].replace('"label":0', '"label":0').replace('"fake_cls":"orig"', '"fake_cls":"image"')
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(SchemaError) as err:
            load_dataset(path)
        assert err.value.record_index == 1
        assert err.value.field_name == "fake_cls"

    def test_bad_bbox_order_reported(self, tmp_path):
        path = tmp_path / "box.jsonl"
        save_dataset(Dataset(samples=[make_sample()]), path)
        text = path.read_text(encoding="utf-8").replace(
            '"face_bbox":[0.25,0.25,0.75,0.75]', '"face_bbox":[0.9,0.1,0.2,0.5]'
        )
        path.write_text(text, encoding="utf-8")
        with pytest.raises(SchemaError, match="x1<x2 violated"):
            load_dataset(path)

    def test_missing_image_file(self, tmp_path):
        path = tmp_path / "img.jsonl"
        save_dataset(Dataset(samples=[make_sample()]), path)
        (tmp_path / "img_images" / "s0.png").unlink()
        with pytest.raises(SchemaError, match="missing image"):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError, match="not found"):
            load_dataset(tmp_path / "nope.jsonl")
