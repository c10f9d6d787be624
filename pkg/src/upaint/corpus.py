"""Deterministic synthetic captioned-image corpus.

Scenes are symbolic (shapes on a 2x2 grid with a style tag), rendered to
RGB in [-1, 1] and captioned by a small grammar, so image/caption alignment
is exact by construction. Everything downstream of a seed is reproducible
byte for byte.

Dataset file layout (all little-endian):

    magic            5 bytes  b"UPDS1"
    version          u32
    resolution       u16
    record count     u32
    max caption len  u16      (tokens per record, pad-filled)
    spec text width  u16      (bytes per record, zero-filled)
    vocab blob len   u32
    vocab blob       utf-8, tokens joined by "\\n" in id order
    records          fixed width, each:
        image        3 * R * R float32, CHW row-major
        caption len  u16
        caption ids  max-caption-len u16
        spec len     u16
        spec text    spec-text-width bytes utf-8

The vocabulary is also exported next to the dataset as a plain-text
sidecar, one token per line in id order.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import FormatError, VocabularyError

MAGIC = b"UPDS1"
VERSION = 1
MAX_CAPTION_TOKENS = 28
SPEC_TEXT_WIDTH = 192

PAD_ID, BOS_ID, EOS_ID = 0, 1, 2
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>")

SHAPES = ("circle", "square", "triangle", "star")
SIZES = ("small", "large")
STYLES = ("plain", "night", "sunset", "foggy")
COMPLEXITIES = ("simple", "complex")
GRID = 2  # 2x2 placement grid

PALETTE = {
    "red": (230, 40, 40),
    "green": (40, 200, 70),
    "blue": (50, 90, 230),
    "yellow": (240, 220, 60),
    "orange": (240, 150, 40),
    "purple": (160, 70, 200),
    "cyan": (60, 210, 220),
    "white": (240, 240, 240),
}

BACKGROUNDS = {
    "black": (18, 18, 24),
    "gray": (110, 110, 115),
    "navy": (25, 35, 80),
    "cream": (225, 215, 185),
}

# x' = scale * x + offset, applied channelwise in [-1, 1] space, then clipped
STYLE_TRANSFORMS = {
    "plain": ((1.0, 1.0, 1.0), (0.0, 0.0, 0.0)),
    "night": ((0.45, 0.45, 0.55), (-0.35, -0.35, -0.15)),
    "sunset": ((0.85, 0.65, 0.50), (0.20, -0.05, -0.25)),
    "foggy": ((0.55, 0.55, 0.55), (0.26, 0.26, 0.26)),
}

COUNT_WORDS = {2: "two", 3: "three", 4: "four"}
PLURALS = {s: s + "s" for s in SHAPES}
STYLE_PHRASES = {
    "night": ("at night", "under the night sky"),
    "sunset": ("at sunset", "under a sunset sky"),
    "foggy": ("under a foggy sky", "in the fog"),
}
FLOURISHES = ("dramatic lighting", "soft shadows", "bright atmosphere")


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    size: str
    cell: tuple[int, int]


@dataclass(frozen=True)
class SceneSpec:
    """Symbolic description of one scene; images and captions both derive from it."""

    objects: tuple[SceneObject, ...]
    background: str
    style_tag: str
    complexity: str

    def validate(self) -> None:
        if self.complexity not in COMPLEXITIES:
            raise ValueError(f"unknown complexity {self.complexity!r}")
        if self.style_tag not in STYLES:
            raise ValueError(f"unknown style {self.style_tag!r}")
        if self.background not in BACKGROUNDS:
            raise ValueError(f"unknown background {self.background!r}")
        if self.complexity == "simple":
            if len(self.objects) != 1:
                raise ValueError("simple scenes hold exactly one object")
            if self.style_tag != "plain":
                raise ValueError("simple scenes are plain-styled")
        else:
            if not 2 <= len(self.objects) <= 4:
                raise ValueError("complex scenes hold 2-4 objects")
        cells = [o.cell for o in self.objects]
        if len(set(cells)) != len(cells):
            raise ValueError("object positions overlap")
        for o in self.objects:
            if o.shape not in SHAPES or o.color not in PALETTE or o.size not in SIZES:
                raise ValueError(f"object outside the scene vocabulary: {o}")
            if not (0 <= o.cell[0] < GRID and 0 <= o.cell[1] < GRID):
                raise ValueError(f"cell {o.cell} outside the {GRID}x{GRID} grid")

    def to_text(self) -> str:
        """Canonical one-line form, round-trippable via from_text."""
        objs = ";".join(
            f"{o.size} {o.color} {o.shape}@{o.cell[0]},{o.cell[1]}" for o in self.objects
        )
        return f"{self.complexity}|bg={self.background}|style={self.style_tag}|objects={objs}"

    @classmethod
    def from_text(cls, text: str) -> "SceneSpec":
        try:
            complexity, bg, style, objs = text.split("|")
            background = bg.removeprefix("bg=")
            style_tag = style.removeprefix("style=")
            body = objs.removeprefix("objects=")
            objects = []
            if body:
                for part in body.split(";"):
                    desc, _, cell = part.partition("@")
                    size, color, shape = desc.split(" ")
                    row, col = cell.split(",")
                    objects.append(SceneObject(shape, color, size, (int(row), int(col))))
        except ValueError as exc:
            raise FormatError(f"unparseable scene text {text!r}") from exc
        return cls(tuple(objects), background, style_tag, complexity)


class Vocabulary:
    """Fixed token <-> id bijection with reserved pad/bos/eos ids."""

    def __init__(self, tokens: list[str]):
        if tokens[:3] != list(RESERVED_TOKENS):
            raise VocabularyError("ids 0-2 are reserved for pad/bos/eos")
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("duplicate tokens")
        self._tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def token_to_id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise VocabularyError(f"unknown token {token!r}") from None

    def id_to_token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise VocabularyError(f"token id {token_id} outside [0, {len(self._tokens)})")
        return self._tokens[token_id]

    def encode(self, text: str) -> list[int]:
        """Whitespace tokenization; unknown words raise."""
        return [self.token_to_id(w) for w in text.lower().split()]

    def decode(self, ids: list[int]) -> str:
        return " ".join(self.id_to_token(i) for i in ids)


@lru_cache(maxsize=1)
def build_vocabulary() -> Vocabulary:
    """The canonical corpus vocabulary, a pure function of the grammar."""
    words: list[str] = list(RESERVED_TOKENS)
    seen = set(words)

    def add(ws):
        for w in ws:
            if w not in seen:
                seen.add(w)
                words.append(w)

    add(["a"])
    add(COUNT_WORDS.values())
    add(SIZES)
    add(PALETTE)
    add(SHAPES)
    add(PLURALS.values())
    add(["and", "on", "background"])
    add(BACKGROUNDS)
    for phrases in STYLE_PHRASES.values():
        for p in phrases:
            add(p.split())
    for f in FLOURISHES:
        add(f.split())
    return Vocabulary(words)


def _record_rng(seed: int, index: int, stream: str) -> np.random.Generator:
    """Per-record generator; stable across platforms and worker layouts."""
    digest = hashlib.blake2b(f"{seed}:{index}:{stream}".encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def gen_scene_spec(seed: int, complexity: str) -> SceneSpec:
    """Draw a random scene; deterministic for a given seed."""
    if complexity not in COMPLEXITIES:
        raise ValueError(f"complexity must be one of {COMPLEXITIES}")
    rng = np.random.default_rng(seed)
    if complexity == "simple":
        n, style = 1, "plain"
    else:
        n = int(rng.integers(2, 5))
        style = STYLES[rng.integers(0, len(STYLES))]
    cells = rng.choice(GRID * GRID, size=n, replace=False)
    objects = tuple(
        SceneObject(
            shape=SHAPES[rng.integers(0, len(SHAPES))],
            color=list(PALETTE)[rng.integers(0, len(PALETTE))],
            size=SIZES[rng.integers(0, len(SIZES))],
            cell=(int(c) // GRID, int(c) % GRID),
        )
        for c in cells
    )
    background = list(BACKGROUNDS)[rng.integers(0, len(BACKGROUNDS))]
    spec = SceneSpec(objects, background, style, complexity)
    spec.validate()
    return spec


def _to_pm1(rgb: tuple[int, int, int]) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) / 127.5 - 1.0


def _shape_mask(shape: str, dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    if shape == "circle":
        return dx * dx + dy * dy <= r * r
    if shape == "square":
        s = 0.88 * r
        return (np.abs(dx) <= s) & (np.abs(dy) <= s)
    if shape == "triangle":
        return _triangle_mask(dy, dx, r)
    if shape == "star":
        # six-pointed star: two opposed triangles
        return _triangle_mask(dy, dx, r) | _triangle_mask(-dy, dx, r)
    raise ValueError(f"unknown shape {shape!r}")


def _triangle_mask(dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    """Upward equilateral triangle inscribed in the radius-r circle."""
    verts = [(0.0, -r), (-0.866 * r, 0.5 * r), (0.866 * r, 0.5 * r)]
    inside = np.ones_like(dx, dtype=bool)
    for (x1, y1), (x2, y2) in zip(verts, verts[1:] + verts[:1]):
        cross = (x2 - x1) * (dy - y1) - (y2 - y1) * (dx - x1)
        # sign of the centroid (the origin) picks the interior half-plane
        centroid_side = (x2 - x1) * (0.0 - y1) - (y2 - y1) * (0.0 - x1)
        inside &= cross * centroid_side >= 0
    return inside


def render_scene(spec: SceneSpec, resolution: int = 32) -> np.ndarray:
    """Rasterize a spec to a float32 CHW image in [-1, 1]."""
    img = np.empty((3, resolution, resolution), dtype=np.float64)
    img[:] = _to_pm1(BACKGROUNDS[spec.background])[:, None, None]

    cell = resolution / GRID
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64) + 0.5
    for obj in spec.objects:
        cy = (obj.cell[0] + 0.5) * cell
        cx = (obj.cell[1] + 0.5) * cell
        r = (0.30 if obj.size == "small" else 0.44) * cell
        mask = _shape_mask(obj.shape, yy - cy, xx - cx, r)
        img[:, mask] = _to_pm1(PALETTE[obj.color])[:, None]

    scale, offset = STYLE_TRANSFORMS[spec.style_tag]
    img = img * np.asarray(scale)[:, None, None] + np.asarray(offset)[:, None, None]
    return np.clip(img, -1.0, 1.0).astype(np.float32)


def _caption_words(spec: SceneSpec, rng: np.random.Generator) -> str:
    groups: dict[tuple[str, str], list[SceneObject]] = {}
    for obj in spec.objects:
        groups.setdefault((obj.color, obj.shape), []).append(obj)

    phrases = []
    for (color, shape), members in groups.items():
        if len(members) == 1:
            words = ["a"]
            if rng.random() < 0.5:
                words.append(members[0].size)
            words += [color, shape]
        else:
            words = [COUNT_WORDS[len(members)], color, PLURALS[shape]]
        phrases.append(" ".join(words))
    caption = " and ".join(phrases)

    if spec.complexity == "simple":
        if rng.random() < 0.5:
            caption += f" on a {spec.background} background"
    else:
        if spec.style_tag != "plain":
            variants = STYLE_PHRASES[spec.style_tag]
            caption += " " + variants[rng.integers(0, len(variants))]
        if rng.random() < 0.3:
            caption += " " + FLOURISHES[rng.integers(0, len(FLOURISHES))]
    return caption


def caption_scene(spec: SceneSpec, seed: int) -> list[int]:
    """Grammar-generated caption as token ids; deterministic per seed."""
    rng = np.random.default_rng(seed)
    vocab = build_vocabulary()
    ids = vocab.encode(_caption_words(spec, rng))
    if len(ids) > MAX_CAPTION_TOKENS:
        raise ValueError(f"caption exceeds {MAX_CAPTION_TOKENS} tokens")
    return ids


@dataclass
class Dataset:
    """In-memory view of a dataset file."""

    images: np.ndarray  # (N, 3, R, R) float32 in [-1, 1]
    captions: list[list[int]]
    specs: list[SceneSpec]
    vocab: Vocabulary
    resolution: int

    def __len__(self) -> int:
        return len(self.captions)


def build_dataset(
    n_simple: int, n_complex: int, seed: int, out_path: str | Path, resolution: int = 32
) -> Path:
    """Write a corpus file of n_simple + n_complex records; byte-reproducible per seed."""
    if n_simple < 0 or n_complex < 0:
        raise ValueError("record counts must be non-negative")
    out_path = Path(out_path)
    vocab = build_vocabulary()
    vocab_blob = "\n".join(vocab.tokens).encode()

    count = n_simple + n_complex
    with open(out_path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(
            struct.pack(
                "<IHIHHI",
                VERSION,
                resolution,
                count,
                MAX_CAPTION_TOKENS,
                SPEC_TEXT_WIDTH,
                len(vocab_blob),
            )
        )
        fh.write(vocab_blob)
        for i in range(count):
            complexity = "simple" if i < n_simple else "complex"
            scene_rng = _record_rng(seed, i, "scene")
            spec = gen_scene_spec(int(scene_rng.integers(0, 2**63)), complexity)
            image = render_scene(spec, resolution)
            cap_rng = _record_rng(seed, i, "caption")
            caption = caption_scene(spec, int(cap_rng.integers(0, 2**63)))

            fh.write(image.astype("<f4").tobytes())
            padded = caption + [PAD_ID] * (MAX_CAPTION_TOKENS - len(caption))
            fh.write(struct.pack("<H", len(caption)))
            fh.write(np.asarray(padded, dtype="<u2").tobytes())
            spec_bytes = spec.to_text().encode()
            if len(spec_bytes) > SPEC_TEXT_WIDTH:
                raise ValueError("scene text exceeds the fixed record field")
            fh.write(struct.pack("<H", len(spec_bytes)))
            fh.write(spec_bytes.ljust(SPEC_TEXT_WIDTH, b"\0"))

    sidecar = Path(str(out_path) + ".vocab.txt")
    sidecar.write_text("\n".join(vocab.tokens) + "\n")
    return out_path


def load_dataset(path: str | Path) -> Dataset:
    """Read a dataset file back; raises FormatError on any corruption."""
    data = Path(path).read_bytes()
    if data[:5] != MAGIC:
        raise FormatError(f"bad magic {data[:5]!r}, expected {MAGIC!r}")
    off = 5
    try:
        version, resolution, count, max_cap, spec_width, vocab_len = struct.unpack_from(
            "<IHIHHI", data, off
        )
    except struct.error as exc:
        raise FormatError("truncated header") from exc
    off += struct.calcsize("<IHIHHI")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if off + vocab_len > len(data):
        raise FormatError("truncated vocabulary blob")
    try:
        vocab = Vocabulary(data[off : off + vocab_len].decode().split("\n"))
    except (UnicodeDecodeError, VocabularyError, IndexError) as exc:
        raise FormatError(f"bad vocabulary blob: {exc}") from exc
    off += vocab_len

    image_bytes = 3 * resolution * resolution * 4
    record_bytes = image_bytes + 2 + max_cap * 2 + 2 + spec_width
    if len(data) - off != count * record_bytes:
        raise FormatError(
            f"record section is {len(data) - off} bytes, expected {count * record_bytes}"
        )

    images = np.empty((count, 3, resolution, resolution), dtype=np.float32)
    captions: list[list[int]] = []
    specs: list[SceneSpec] = []
    for i in range(count):
        images[i] = np.frombuffer(data, dtype="<f4", count=3 * resolution * resolution, offset=off).reshape(
            3, resolution, resolution
        )
        off += image_bytes
        (cap_len,) = struct.unpack_from("<H", data, off)
        off += 2
        if cap_len > max_cap:
            raise FormatError(f"caption length {cap_len} exceeds field width {max_cap}")
        ids = np.frombuffer(data, dtype="<u2", count=max_cap, offset=off)
        captions.append([int(t) for t in ids[:cap_len]])
        off += max_cap * 2
        (spec_len,) = struct.unpack_from("<H", data, off)
        off += 2
        if spec_len > spec_width:
            raise FormatError(f"scene text length {spec_len} exceeds field width {spec_width}")
        specs.append(SceneSpec.from_text(data[off : off + spec_len].decode()))
        off += spec_width
    return Dataset(images, captions, specs, vocab, resolution)
