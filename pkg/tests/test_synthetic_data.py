"""Scene generation, expression uniqueness, rasterisation and the on-disk format."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from rccf.data import (BACKGROUND, PALETTE, GeneratorConfig, Scene, SceneObject, generate_sample,
                       generate_split, object_box, parse_annotation, read_dataset,
                       read_generator_config, read_ppm, render_scene, render_scene_bytes,
                       to_raster, write_dataset, write_ppm)
from rccf.decode import Box, iou
from rccf.errors import DatasetParseError, GenerationError


@pytest.fixture(scope="module")
def thousand():
    return generate_split("train", 1000, base_seed=11)


class TestDeterminism:
    def test_same_seed_same_sample(self):
        a, b = generate_sample(42), generate_sample(42)
        assert a.expression == b.expression and a.box == b.box
        assert a.image.tobytes() == b.image.tobytes()

    def test_different_seeds_differ(self):
        samples = [generate_sample(s) for s in range(20)]
        assert len({s.image.tobytes() for s in samples}) == 20

    def test_splits_use_disjoint_seed_ranges(self):
        train = generate_split("train", 5)
        val = generate_split("val", 5)
        assert {s.scene.seed for s in train}.isdisjoint({s.scene.seed for s in val})
        assert train[0].name == "train_000000.ppm"

    def test_config_text_round_trip(self):
        cfg = GeneratorConfig(min_objects=3, families=("attribute", "location"), margin=2.5)
        assert GeneratorConfig.from_text(cfg.to_text()) == cfg


class TestUniqueness:
    def test_every_referent_is_unique(self, thousand):
        for s in thousand:
            found = oracles.referents(s.expression, s.scene.objects)
            assert len(found) == 1, (s.name, s.expression, found)
            assert object_box(s.scene.objects[found[0]], 64) == s.box

    def test_all_families_appear(self, thousand):
        first = {s.expression.split()[0] for s in thousand}
        assert {"red", "small", "leftmost"} & first
        assert any(" the " in s.expression for s in thousand)
        assert any(s.expression.split()[0] in ("small", "large") for s in thousand)

    def test_single_object_attribute(self):
        cfg = GeneratorConfig(min_objects=1, max_objects=1, families=("attribute",))
        for seed in range(10):
            s = generate_sample(seed, cfg)
            obj = s.scene.objects[0]
            assert s.expression == f"{obj.color} {obj.kind}"

    def test_budget_exhaustion_names_seed(self):
        # relations need two objects of different kinds, impossible with one object
        cfg = GeneratorConfig(min_objects=1, max_objects=1, families=("relation",),
                              max_attempts=5)
        with pytest.raises(GenerationError, match="seed 123"):
            generate_sample(123, cfg)


class TestScenes:
    def test_invariants(self, thousand):
        extents = {"small": (7, 10), "large": (14, 18)}
        for s in thousand:
            objs = s.scene.objects
            assert 2 <= len(objs) <= 5
            boxes = [object_box(o, 64) for o in objs]
            for o, b in zip(objs, boxes):
                lo, hi = extents[o.size_class]
                assert lo <= o.extent[0] <= hi
                assert 0 <= b[0] and 0 <= b[1] and b[2] <= 64 and b[3] <= 64
            for i in range(len(boxes)):
                for j in range(i + 1, len(boxes)):
                    assert iou(Box(*boxes[i]), Box(*boxes[j])) <= 0.1

    def test_image_range(self, thousand):
        img = thousand[0].image
        assert img.shape == (3, 64, 64)
        assert img.min() >= 0.0 and img.max() <= 1.0


class TestRendering:
    def test_red_square_pixels(self):
        scene = Scene([SceneObject("square", "red", "small", (10, 20), (8, 8))], 64, 0)
        raster = render_scene_bytes(scene)
        assert np.all(raster[20:28, 10:18] == PALETTE["red"])
        outside = np.ones((64, 64), bool)
        outside[20:28, 10:18] = False
        assert np.all(raster[outside] == BACKGROUND)

    def test_box_matches_raster_bounds(self, thousand):
        for s in thousand[:300]:
            for obj in s.scene.objects:
                alone = Scene([obj], 64, 0)
                expected = oracles.raster_bounds(render_scene_bytes(alone), BACKGROUND)
                assert object_box(obj, 64) == expected

    @settings(max_examples=60, deadline=None)
    @given(kind=st.sampled_from(["circle", "square", "triangle"]), x=st.integers(1, 40),
           y=st.integers(1, 40), ext=st.integers(7, 18))
    def test_shapes_are_tight_and_inside(self, kind, x, y, ext):
        obj = SceneObject(kind, "blue", "large", (x, y), (ext, ext))
        x1, y1, x2, y2 = object_box(obj, 64)
        assert x <= x1 and y <= y1 and x2 <= x + ext and y2 <= y + ext
        raster = render_scene_bytes(Scene([obj], 64, 0))
        assert (x1, y1, x2, y2) == oracles.raster_bounds(raster, BACKGROUND)

    def test_float_image_matches_bytes(self):
        s = generate_sample(3)
        np.testing.assert_array_equal(to_raster(render_scene(s.scene)),
                                      render_scene_bytes(s.scene))


class TestPersistence:
    def test_ppm_round_trip(self, tmp_path):
        s = generate_sample(5)
        write_ppm(tmp_path / "x.ppm", s.image)
        assert (tmp_path / "x.ppm").read_bytes().startswith(b"P6\n64 64\n255\n")
        np.testing.assert_array_equal(read_ppm(tmp_path / "x.ppm"), s.image)

    def test_ppm_header_comments(self, tmp_path):
        raster = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
        (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n2 2\n255\n" + raster.tobytes())
        np.testing.assert_array_equal(to_raster(read_ppm(tmp_path / "c.ppm")), raster)

    def test_ppm_rejects_other_formats(self, tmp_path):
        (tmp_path / "a.pgm").write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(DatasetParseError):
            read_ppm(tmp_path / "a.pgm")

    def test_dataset_round_trip(self, tmp_path):
        cfg = GeneratorConfig(families=("attribute", "location"))
        splits = {"train": generate_split("train", 12, config=cfg),
                  "val": generate_split("val", 5, config=cfg)}
        write_dataset(tmp_path, splits, cfg)
        back = read_dataset(tmp_path)
        assert sum(len(v) for v in back.values()) == 17
        for split, samples in splits.items():
            for a, b in zip(samples, back[split]):
                assert (a.name, a.expression, a.box) == (b.name, b.expression, b.box)
                np.testing.assert_array_equal(a.image, b.image)
        assert read_generator_config(tmp_path) == cfg
        assert list(read_dataset(tmp_path, "val")) == ["val"]

    def test_annotation_line_format(self, tmp_path):
        s = generate_sample(9)
        write_dataset(tmp_path, {"train": [dataclasses.replace(s, name="a.ppm")]})
        line = (tmp_path / "annotations.txt").read_text().splitlines()[0]
        name, expr, coords = line.split("\t")
        assert name == "a.ppm" and expr == s.expression
        assert tuple(int(v) for v in coords.split()) == s.box

    @pytest.mark.parametrize("line, pattern", [
        ("a.ppm\tred circle\t1 2 3", "line 7: expected 4 box coordinates"),
        ("a.ppm\tred circle", "line 7: expected 3 tab-separated fields"),
        ("a.ppm\tred circle\t1 2 x 4", "line 7: non-numeric"),
        ("a.ppm\tred circle\t5 2 3 4", "line 7: degenerate"),
        ("a.ppm\t \t1 2 3 4", "line 7: empty expression"),
    ])
    def test_parse_errors_name_the_line(self, line, pattern):
        with pytest.raises(DatasetParseError, match=pattern):
            parse_annotation(line, 7)

    def test_reader_reports_line_number(self, tmp_path):
        write_dataset(tmp_path, {"train": generate_split("train", 3)})
        path = tmp_path / "annotations.txt"
        lines = path.read_text().splitlines()
        lines[1] = lines[1].rsplit(" ", 1)[0]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetParseError, match="line 2"):
            read_dataset(tmp_path)
