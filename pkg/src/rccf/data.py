"""Seeded scenes of colored shapes with templated referring expressions.

On-disk layout of a dataset directory::

    images/NNNNNN.ppm   binary P6 pixmaps, 8 bits per channel
    annotations.txt     "<file>\\t<expression>\\t<x1> <y1> <x2> <y2>" per line
    splits.txt          "<file>\\t<split>" per line
    generator.txt       key = value echo of the generator settings

Boxes are in pixel-edge coordinates: an object covering columns 3..7
inclusive has ``x1 = 3`` and ``x2 = 8``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from rccf.errors import DatasetParseError, GenerationError
from rccf.targets import GroundTruthBox

PALETTE = {
    "red": (220, 40, 40),
    "green": (40, 180, 60),
    "blue": (40, 80, 220),
    "yellow": (230, 210, 40),
    "purple": (150, 60, 200),
    "cyan": (40, 200, 210),
}
BACKGROUND = (128, 128, 128)
KINDS = ("circle", "square", "triangle")
SIZE_CLASSES = ("small", "large")
FAMILIES = ("attribute", "size", "location", "relation")
LOCATIONS = {  # word -> (axis, sign); sign -1 picks the minimum
    "leftmost": (0, -1), "rightmost": (0, 1), "topmost": (1, -1), "bottommost": (1, 1),
}
RELATIONS = {  # phrase -> (axis, sign) of target relative to anchor
    "left of": (0, -1), "right of": (0, 1), "above": (1, -1), "below": (1, 1),
}
SPLIT_OFFSETS = {"train": 0, "val": 1_000_000, "test": 2_000_000}


@dataclass
class GeneratorConfig:
    image_size: int = 64
    min_objects: int = 2
    max_objects: int = 5
    families: tuple = FAMILIES
    small_extent: tuple = (7, 10)
    large_extent: tuple = (14, 18)
    margin: float = 3.0
    max_attempts: int = 500

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name} = {','.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GeneratorConfig":
        defaults, values = cls(), {}
        for line in text.splitlines():
            if "=" not in line:
                continue
            key, value = (p.strip() for p in line.split("=", 1))
            default = getattr(defaults, key)
            if isinstance(default, tuple):
                kind = type(default[0])
                values[key] = tuple(kind(v) for v in value.split(","))
            else:
                values[key] = type(default)(value)
        return cls(**values)


@dataclass(frozen=True)
class SceneObject:
    kind: str
    color: str
    size_class: str
    top_left: tuple  # (x, y) pixel of the extent's upper-left corner
    extent: tuple  # (w, h) pixels

    @property
    def center(self) -> tuple:
        return (self.top_left[0] + self.extent[0] / 2.0, self.top_left[1] + self.extent[1] / 2.0)

    def mask(self, size: int) -> np.ndarray:
        """Pixels (by their centers) covered by this shape on a ``size x size`` grid."""
        ys, xs = np.mgrid[0:size, 0:size] + 0.5
        (x0, y0), (w, h) = self.top_left, self.extent
        cx, cy = x0 + w / 2.0, y0 + h / 2.0
        if self.kind == "square":
            return (xs >= x0) & (xs < x0 + w) & (ys >= y0) & (ys < y0 + h)
        if self.kind == "circle":
            return ((xs - cx) / (w / 2.0)) ** 2 + ((ys - cy) / (h / 2.0)) ** 2 <= 1.0
        # upward triangle: apex at the top edge, base on the bottom edge
        t = (ys - y0) / h
        return (t >= 0) & (t < 1) & (np.abs(xs - cx) <= t * w / 2.0 + 0.5)


@dataclass
class Scene:
    objects: list
    image_size: int
    seed: int


@dataclass
class Sample:
    image: np.ndarray  # 3 x H x W in [0, 1]
    expression: str
    box: tuple  # (x1, y1, x2, y2) pixel-edge corners
    name: str = ""
    scene: Optional[Scene] = field(default=None, compare=False, repr=False)

    @property
    def target(self) -> GroundTruthBox:
        return GroundTruthBox.from_corners(*self.box)


# ----------------------------------------------------------------------
# rendering
# ----------------------------------------------------------------------
def object_box(obj: SceneObject, size: int) -> tuple:
    ys, xs = np.nonzero(obj.mask(size))
    return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def render_scene_bytes(scene: Scene) -> np.ndarray:
    """``H x W x 3`` uint8 raster, objects painted in list order over the background."""
    s = scene.image_size
    img = np.empty((s, s, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    for obj in scene.objects:
        img[obj.mask(s)] = PALETTE[obj.color]
    return img


def render_scene(scene: Scene) -> np.ndarray:
    return to_float_image(render_scene_bytes(scene))


def to_float_image(raster: np.ndarray) -> np.ndarray:
    return raster.transpose(2, 0, 1).astype(np.float64) / 255.0


def to_raster(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


# ----------------------------------------------------------------------
# scene sampling
# ----------------------------------------------------------------------
def _boxes_clear(a: tuple, b: tuple, gap: int = 1) -> bool:
    return (a[2] + gap <= b[0] or b[2] + gap <= a[0] or
            a[3] + gap <= b[1] or b[3] + gap <= a[1])


def sample_scene(rng: np.random.Generator, config: GeneratorConfig, seed: int = 0) -> Optional[Scene]:
    """Place 2-5 non-touching objects; ``None`` if placement keeps failing."""
    s = config.image_size
    count = int(rng.integers(config.min_objects, config.max_objects + 1))
    objects, boxes = [], []
    for _ in range(count):
        for _ in range(50):
            size_class = SIZE_CLASSES[int(rng.integers(2))]
            lo, hi = config.small_extent if size_class == "small" else config.large_extent
            ext = int(rng.integers(lo, hi + 1))
            x0 = int(rng.integers(1, s - ext))
            y0 = int(rng.integers(1, s - ext))
            obj = SceneObject(KINDS[int(rng.integers(len(KINDS)))],
                              list(PALETTE)[int(rng.integers(len(PALETTE)))],
                              size_class, (x0, y0), (ext, ext))
            box = object_box(obj, s)
            if all(_boxes_clear(box, other) for other in boxes):
                objects.append(obj)
                boxes.append(box)
                break
        else:
            return None
    return Scene(objects, s, seed)


# ----------------------------------------------------------------------
# expressions
# ----------------------------------------------------------------------
def _coord(obj: SceneObject, axis: int) -> float:
    return obj.center[axis]


def attribute_expression(scene: Scene, i: int) -> Optional[str]:
    t = scene.objects[i]
    clash = [o for j, o in enumerate(scene.objects)
             if j != i and o.kind == t.kind and o.color == t.color]
    return None if clash else f"{t.color} {t.kind}"


def size_expression(scene: Scene, i: int) -> Optional[str]:
    t = scene.objects[i]
    others = [o for j, o in enumerate(scene.objects) if j != i]
    if not any(o.kind == t.kind and o.size_class == t.size_class for o in others):
        return f"{t.size_class} {t.kind}"
    if not any(o.kind == t.kind and o.size_class == t.size_class and o.color == t.color
               for o in others):
        return f"{t.size_class} {t.color} {t.kind}"
    return None


def location_expression(scene: Scene, i: int, word: str, margin: float,
                        by_kind: bool = True) -> Optional[str]:
    axis, sign = LOCATIONS[word]
    t = scene.objects[i]
    others = [o for j, o in enumerate(scene.objects)
              if j != i and (o.kind == t.kind or not by_kind)]
    # the target must beat every competitor by at least ``margin`` pixels
    if any(sign * (_coord(t, axis) - _coord(o, axis)) < margin for o in others):
        return None
    return f"{word} {t.kind}" if by_kind else f"{word} object"


def relation_expression(scene: Scene, i: int, phrase: str, anchor: int,
                        margin: float) -> Optional[str]:
    axis, sign = RELATIONS[phrase]
    t, a = scene.objects[i], scene.objects[anchor]
    if i == anchor or t.kind == a.kind:
        return None
    if sum(o.kind == a.kind for o in scene.objects) != 1:
        return None
    if sign * (_coord(t, axis) - _coord(a, axis)) < margin:
        return None
    for j, o in enumerate(scene.objects):
        if j != i and o.kind == t.kind and sign * (_coord(o, axis) - _coord(a, axis)) > 0:
            return None
    return f"{t.kind} {phrase} the {a.kind}"


def candidate_expressions(scene: Scene, i: int, family: str, margin: float) -> list:
    """Every unambiguous expression of ``family`` that picks out object ``i``."""
    found = []
    if family == "attribute":
        found.append(attribute_expression(scene, i))
    elif family == "size":
        found.append(size_expression(scene, i))
    elif family == "location":
        for word in LOCATIONS:
            found.append(location_expression(scene, i, word, margin, by_kind=True))
            found.append(location_expression(scene, i, word, margin, by_kind=False))
    elif family == "relation":
        for phrase in RELATIONS:
            for anchor in range(len(scene.objects)):
                found.append(relation_expression(scene, i, phrase, anchor, margin))
    else:
        raise ValueError(f"unknown template family {family!r}")
    return [e for e in found if e is not None]


def describe(scene: Scene, i: int, families: Sequence[str], rng: np.random.Generator,
             margin: float) -> Optional[str]:
    """Pick one expression for object ``i`` from a random allowed family."""
    order = [families[k] for k in rng.permutation(len(families))]
    for family in order:
        options = candidate_expressions(scene, i, family, margin)
        if options:
            return options[int(rng.integers(len(options)))]
    return None


def generate_sample(seed: int, config: GeneratorConfig | None = None,
                    name: str = "") -> Sample:
    """Deterministically draw one scene and a uniquely-referring expression."""
    config = config or GeneratorConfig()
    rng = np.random.default_rng(seed)
    for _ in range(config.max_attempts):
        scene = sample_scene(rng, config, seed)
        if scene is None:
            continue
        family = config.families[int(rng.integers(len(config.families)))]
        targets = rng.permutation(len(scene.objects))
        for i in targets:
            options = candidate_expressions(scene, int(i), family, config.margin)
            if options:
                expression = options[int(rng.integers(len(options)))]
                image = render_scene(scene)
                box = object_box(scene.objects[int(i)], scene.image_size)
                return Sample(image, expression, box, name, scene)
    raise GenerationError(f"seed {seed}: no valid scene after {config.max_attempts} attempts")


def generate_split(split: str, count: int, base_seed: int = 0,
                   config: GeneratorConfig | None = None) -> list:
    offset = SPLIT_OFFSETS[split]
    return [generate_sample(base_seed + offset + i, config, f"{split}_{i:06d}.ppm")
            for i in range(count)]


# ----------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------
def write_ppm(path, image: np.ndarray) -> None:
    raster = to_raster(image)
    h, w, _ = raster.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(raster.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise DatasetParseError(f"{path}: only 8-bit binary P6 pixmaps are supported")
    w, h = int(tokens[1]), int(tokens[2])
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return to_float_image(raw.reshape(h, w, 3))


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_dataset(directory, splits: dict, config: GeneratorConfig | None = None) -> None:
    """Write ``{split: [Sample, ...]}`` to ``directory``."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    ann, spl = [], []
    for split, samples in splits.items():
        for k, sample in enumerate(samples):
            name = sample.name or f"{split}_{k:06d}.ppm"
            if "\t" in sample.expression or "\n" in sample.expression:
                raise ValueError(f"expression for {name} contains a tab or newline")
            write_ppm(root / "images" / name, sample.image)
            ann.append(f"{name}\t{sample.expression}\t{' '.join(_fmt(v) for v in sample.box)}\n")
            spl.append(f"{name}\t{split}\n")
    (root / "annotations.txt").write_text("".join(ann), encoding="utf-8")
    (root / "splits.txt").write_text("".join(spl), encoding="utf-8")
    (root / "generator.txt").write_text((config or GeneratorConfig()).to_text(), encoding="utf-8")


def parse_annotation(line: str, number: int) -> tuple:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3:
        raise DatasetParseError(f"annotations line {number}: expected 3 tab-separated fields, "
                                f"got {len(parts)}")
    name, expression, coords = parts
    values = coords.split()
    if len(values) != 4:
        raise DatasetParseError(f"annotations line {number}: expected 4 box coordinates, "
                                f"got {len(values)}")
    try:
        box = tuple(float(v) for v in values)
    except ValueError as exc:
        raise DatasetParseError(f"annotations line {number}: non-numeric coordinate") from exc
    if not (box[0] < box[2] and box[1] < box[3]):
        raise DatasetParseError(f"annotations line {number}: degenerate box {box}")
    if not expression.strip():
        raise DatasetParseError(f"annotations line {number}: empty expression")
    return name, expression, box


def read_dataset(directory, split: str | None = None) -> dict:
    """Read a dataset written by :func:`write_dataset` into ``{split: [Sample]}``."""
    root = Path(directory)
    split_of = {}
    for number, line in enumerate((root / "splits.txt").read_text(encoding="utf-8").splitlines(),
                                  start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetParseError(f"splits line {number}: expected '<file>\\t<split>'")
        split_of[parts[0]] = parts[1]
    out: dict = {}
    text = (root / "annotations.txt").read_text(encoding="utf-8")
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        name, expression, box = parse_annotation(line, number)
        which = split_of.get(name)
        if which is None:
            raise DatasetParseError(f"annotations line {number}: {name} missing from splits.txt")
        if split is not None and which != split:
            continue
        image = read_ppm(root / "images" / name)
        out.setdefault(which, []).append(Sample(image, expression, box, name))
    return out


def read_generator_config(directory) -> GeneratorConfig:
    path = Path(directory) / "generator.txt"
    return GeneratorConfig.from_text(path.read_text(encoding="utf-8")) if path.exists() \
        else GeneratorConfig()


def replace_config(config: GeneratorConfig, **changes) -> GeneratorConfig:
    return dataclasses.replace(config, **changes)
