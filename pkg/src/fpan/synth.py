"""Synthetic scene generation: colored digits scattered on a canvas.

A scene is a square RGB image with at least five colored digit glyphs
placed so their tight ink boxes overlap at most a configured IOU, plus
optional colored salt noise.  One placed instance is the target; its
ground truth is the tight box of the rendered ink.  The query is a
clean 28x28 CANONICAL rendering of the target digit: the digit class's
canonical glyph in a fixed neutral color, free of scene noise.  The
in-image instance keeps its own pose variant, palette color, and noise,
so locating it takes class-level matching rather than pixel copying.
Every byte of a dataset is a pure function of (spec, seed): scene i
draws all randomness from streams keyed [seed, i, k].

Glyphs come either from an IDX digit file or from a small built-in
procedural bank (stroke polylines rasterized with soft edges), so the
pipeline has no mandatory external data.  Digit classes are unique
within a scene so the query always identifies one instance.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .boxes import BoundingBox, iou
from .errors import SceneGenError
from .idx import read_idx_images, read_idx_labels
from .ppm import read_ppm, write_ppm

# 9 saturated, mutually distant colors (unit RGB)
PALETTE = (
    (1.0, 0.15, 0.15),   # red
    (1.0, 0.55, 0.1),    # orange
    (1.0, 0.95, 0.2),    # yellow
    (0.2, 0.85, 0.25),   # green
    (0.15, 0.9, 0.9),    # cyan
    (0.25, 0.35, 1.0),   # blue
    (0.6, 0.25, 0.9),    # purple
    (1.0, 0.3, 0.85),    # magenta
    (0.95, 0.95, 0.95),  # white
)

# queries are rendered in this neutral gray, never a palette color, so a
# matcher cannot win by copying the instance's pixels
CANONICAL_COLOR = (0.72, 0.72, 0.72)

INK_FLOOR = 0.1
GLYPH_SIZE = 28

# salt noise colors: every corner of the RGB cube except black
_SALT = np.array([[r, g, b] for r in (0, 1) for g in (0, 1) for b in (0, 1)][1:],
                 dtype=np.float32)


@dataclass
class DatasetSpec:
    n_images: int = 200
    image_size: int = 64
    min_digits: int = 5
    noise_density: float = 0.05
    background: str = "black"        # black | texture | path to a ppm directory
    max_overlap: float = 0.3         # IOU budget between placed ink boxes
    query_size: int = GLYPH_SIZE
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 1 or self.image_size < 8 or self.min_digits < 1:
            raise SceneGenError("spec wants at least one image, size >= 8, one digit")
        if not 0.0 <= self.noise_density < 1.0:
            raise SceneGenError("noise_density must be in [0, 1)")
        if not 0.0 <= self.max_overlap <= 1.0:
            raise SceneGenError("max_overlap must be an IOU in [0, 1]")
        if self.seed < 0:
            raise SceneGenError("seed must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(**d)


@dataclass
class SceneSample:
    image: np.ndarray          # (S, S, 3) float32 in [0, 1]
    query: np.ndarray          # (q, q, 3) float32
    gt_box: BoundingBox
    digit: int
    color: int                 # palette index
    index: int = 0
    # every digit in the scene as (class label, palette index, ink box);
    # lets training re-target the same image with a different query
    placements: tuple = ()


# -- glyphs ----------------------------------------------------------------


def _arc(cx, cy, rx, ry, a0, a1, n=14):
    ts = np.linspace(a0, a1, n)
    return list(zip(cx + rx * np.cos(ts), cy + ry * np.sin(ts)))


def _digit_strokes(d):
    """Polylines in the unit square (y grows downward) sketching digit d."""
    if d == 0:
        return [_arc(0.5, 0.5, 0.28, 0.38, 0, 2 * np.pi, 20)]
    if d == 1:
        return [[(0.34, 0.28), (0.54, 0.12)], [(0.54, 0.12), (0.54, 0.88)],
                [(0.34, 0.88), (0.74, 0.88)]]
    if d == 2:
        return [_arc(0.5, 0.3, 0.26, 0.19, np.pi, 2 * np.pi, 10)
                + [(0.76, 0.34), (0.26, 0.88)],
                [(0.26, 0.88), (0.78, 0.88)]]
    if d == 3:
        return [_arc(0.47, 0.3, 0.25, 0.19, -np.pi * 0.8, np.pi * 0.48, 10),
                _arc(0.47, 0.69, 0.27, 0.21, -np.pi * 0.45, np.pi * 0.82, 12)]
    if d == 4:
        return [[(0.6, 0.12), (0.22, 0.6)], [(0.22, 0.6), (0.82, 0.6)],
                [(0.6, 0.12), (0.6, 0.88)]]
    if d == 5:
        return [[(0.74, 0.12), (0.3, 0.12)], [(0.3, 0.12), (0.28, 0.46)],
                [(0.28, 0.46)] + _arc(0.48, 0.65, 0.26, 0.23, -np.pi * 0.42, np.pi * 0.62, 12)
                + [(0.26, 0.84)]]
    if d == 6:
        return [[(0.62, 0.12), (0.34, 0.46)],
                _arc(0.5, 0.65, 0.23, 0.22, 0, 2 * np.pi, 16)]
    if d == 7:
        return [[(0.24, 0.12), (0.78, 0.12)], [(0.78, 0.12), (0.42, 0.88)]]
    if d == 8:
        return [_arc(0.5, 0.3, 0.2, 0.17, 0, 2 * np.pi, 16),
                _arc(0.5, 0.69, 0.24, 0.2, 0, 2 * np.pi, 16)]
    if d == 9:
        return [_arc(0.5, 0.32, 0.22, 0.2, 0, 2 * np.pi, 16),
                [(0.71, 0.36), (0.62, 0.88)]]
    raise SceneGenError(f"no strokes for digit {d}")


def _rasterize(strokes, thickness, size=GLYPH_SIZE):
    """Distance-to-polyline rendering with a soft edge."""
    ys, xs = np.mgrid[0:size, 0:size]
    px = (xs + 0.5) / size
    py = (ys + 0.5) / size
    dist = np.full((size, size), np.inf)
    for line in strokes:
        pts = np.asarray(line, dtype=np.float64)
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            dx, dy = x1 - x0, y1 - y0
            ll = dx * dx + dy * dy
            if ll == 0:
                t = np.zeros_like(px)
            else:
                t = np.clip(((px - x0) * dx + (py - y0) * dy) / ll, 0.0, 1.0)
            qx = x0 + t * dx
            qy = y0 + t * dy
            dist = np.minimum(dist, np.hypot(px - qx, py - qy))
    half = thickness / 2.0 / size
    soft = 0.75 / size
    ink = np.clip((half + soft - dist) / soft, 0.0, 1.0)
    ink[ink < INK_FLOOR] = 0.0
    return ink.astype(np.float32)


class GlyphBank:
    """A pile of single-channel digit stamps with their labels."""

    def __init__(self, images: np.ndarray, labels: np.ndarray):
        images = np.asarray(images, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.int64)
        if images.ndim != 3 or len(images) != len(labels) or len(images) == 0:
            raise SceneGenError("glyph bank needs matching non-empty images/labels")
        images = images.copy()
        images[images < INK_FLOOR] = 0.0
        keep = images.reshape(len(images), -1).max(axis=1) > 0
        if not keep.all():
            images, labels = images[keep], labels[keep]
        if len(images) == 0:
            raise SceneGenError("glyph bank is empty after dropping blank stamps")
        self.images = images
        self.labels = labels
        self.boxes = [ink_box(g) for g in images]
        # first stamp of each class is that class's canonical pose
        self._canonical = {}
        for i, lab in enumerate(self.labels.tolist()):
            self._canonical.setdefault(lab, i)

    def __len__(self):
        return len(self.images)

    @property
    def n_classes(self) -> int:
        return len(self._canonical)

    def canonical(self, label: int) -> np.ndarray:
        """The class's canonical stamp (used for query rendering)."""
        if label not in self._canonical:
            raise SceneGenError(f"no glyph with label {label}")
        return self.images[self._canonical[label]]

    @classmethod
    def from_idx(cls, images_path, labels_path) -> "GlyphBank":
        imgs = read_idx_images(images_path).astype(np.float32) / 255.0
        labels = read_idx_labels(labels_path)
        if len(imgs) != len(labels):
            raise SceneGenError(
                f"{len(imgs)} images vs {len(labels)} labels, files do not match")
        return cls(imgs, labels)

    @classmethod
    def builtin(cls, variants: int = 3) -> "GlyphBank":
        """Procedural stamps: `variants` renderings per digit.

        Variant 0 is the canonical pose.  Later variants act like other
        writers of the same digit: sheared, rescaled, point-jittered,
        and drawn with a different pen width, so class identity is the
        only thing an exact-pixel matcher can rely on.
        """
        rng = np.random.default_rng(np.random.SeedSequence(714025))
        images, labels = [], []
        for d in range(10):
            for v in range(variants):
                strokes = _digit_strokes(d)
                thickness = 2.3
                if v > 0:
                    shear = rng.uniform(-0.22, 0.22)
                    sx = rng.uniform(0.82, 1.04)
                    sy = rng.uniform(0.82, 1.04)
                    jit = 0.028
                    thickness = rng.uniform(1.7, 2.9)
                    strokes = [[(0.5 + sx * (x - 0.5) + shear * (0.5 - y)
                                 + rng.normal(0, jit),
                                 0.5 + sy * (y - 0.5) + rng.normal(0, jit))
                                for x, y in line] for line in strokes]
                images.append(_rasterize(strokes, thickness))
                labels.append(d)
        return cls(np.stack(images), np.array(labels))


def ink_box(glyph: np.ndarray) -> BoundingBox:
    """Tight box around the nonzero ink of a single-channel stamp."""
    ys, xs = np.nonzero(glyph > 0)
    if len(ys) == 0:
        raise SceneGenError("glyph has no ink")
    return BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def colorize(glyph: np.ndarray, color) -> np.ndarray:
    """Ink intensity times an RGB color, black elsewhere: (h, w, 3)."""
    return (glyph[:, :, None] * np.asarray(color, dtype=np.float32)).astype(np.float32)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain bilinear resample with half-pixel centers."""
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[:2]

    def grid(out_n, in_n):
        src = (np.arange(out_n) + 0.5) * in_n / out_n - 0.5
        lo = np.clip(np.floor(src).astype(int), 0, in_n - 1)
        hi = np.minimum(lo + 1, in_n - 1)
        return lo, hi, np.clip(src - lo, 0.0, 1.0).astype(np.float32)

    y0, y1, fy = grid(out_h, h)
    x0, x1, fx = grid(out_w, w)
    wy = fy[:, None, None]
    wx = fx[None, :, None]
    return ((1 - wy) * (1 - wx) * img[np.ix_(y0, x0)] + (1 - wy) * wx * img[np.ix_(y0, x1)]
            + wy * (1 - wx) * img[np.ix_(y1, x0)] + wy * wx * img[np.ix_(y1, x1)])


# -- backgrounds and noise ---------------------------------------------------


def _texture_background(rng, size: int) -> np.ndarray:
    """Dim multi-octave value noise with a random tint."""
    lum = np.zeros((size, size), dtype=np.float32)
    for cells, weight in ((4, 0.5), (8, 0.3), (16, 0.2)):
        grid = rng.uniform(0, 1, size=(cells, cells)).astype(np.float32)
        lum += weight * resize_bilinear(grid[:, :, None], size, size)[:, :, 0]
    tint = 0.4 + 0.6 * rng.uniform(0, 1, size=3).astype(np.float32)
    return (0.45 * lum)[:, :, None] * tint


def _directory_background(rng, size: int, bg_dir) -> np.ndarray:
    paths = sorted(Path(bg_dir).glob("*.ppm"))
    if not paths:
        raise SceneGenError(f"no .ppm backgrounds in {bg_dir}")
    img = read_ppm(paths[int(rng.integers(0, len(paths)))])
    h, w = img.shape[:2]
    if h < size or w < size:
        img = resize_bilinear(img, max(size, h), max(size, w))
        h, w = img.shape[:2]
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    return img[y:y + size, x:x + size].astype(np.float32).copy()


def _make_background(spec: DatasetSpec, rng) -> np.ndarray:
    if spec.background == "black":
        return np.zeros((spec.image_size, spec.image_size, 3), dtype=np.float32)
    if spec.background == "texture":
        return _texture_background(rng, spec.image_size)
    return _directory_background(rng, spec.image_size, spec.background)


def _salt_noise(image: np.ndarray, rng, density: float):
    """Overwrite a density fraction of pixels with bright cube-corner colors."""
    if density <= 0:
        return
    h, w = image.shape[:2]
    k = int(round(density * h * w))
    if k == 0:
        return
    flat = rng.choice(h * w, size=k, replace=False)
    colors = _SALT[rng.integers(0, len(_SALT), size=k)]
    image.reshape(-1, 3)[flat] = colors


# -- scenes ------------------------------------------------------------------


@dataclass
class _Placement:
    glyph: int
    color: int
    box: BoundingBox          # tight ink box in scene coordinates
    origin: tuple             # (x, y) of the glyph's ink box corner


def _place_digits(spec: DatasetSpec, bank: GlyphBank, rng) -> list:
    size = spec.image_size
    if spec.min_digits > bank.n_classes:
        raise SceneGenError(
            f"cannot place {spec.min_digits} unique digit classes, the bank "
            f"only has {bank.n_classes}")
    placed = []
    used_labels = set()
    for _ in range(spec.min_digits):
        ok = False
        for _attempt in range(200):
            gi = int(rng.integers(0, len(bank)))
            ci = int(rng.integers(0, len(PALETTE)))
            label = int(bank.labels[gi])
            if label in used_labels:
                continue
            ib = bank.boxes[gi]
            if ib.width > size or ib.height > size:
                raise SceneGenError("glyph ink larger than the canvas")
            x = int(rng.integers(0, size - ib.width + 1))
            y = int(rng.integers(0, size - ib.height + 1))
            cand = BoundingBox(x, y, x + ib.width - 1, y + ib.height - 1)
            if all(iou(cand, p.box) <= spec.max_overlap for p in placed):
                placed.append(_Placement(gi, ci, cand, (x, y)))
                used_labels.add(label)
                ok = True
                break
        if not ok:
            raise SceneGenError(
                f"could not place {spec.min_digits} digits with overlap budget "
                f"{spec.max_overlap} on a {size}x{size} canvas")
    return placed


def _render_scene(spec, bank, placed, bg_rng, noise_rng) -> np.ndarray:
    img = _make_background(spec, bg_rng)
    for p in placed:
        ib = bank.boxes[p.glyph]
        stamp = bank.images[p.glyph][ib.y0:ib.y1 + 1, ib.x0:ib.x1 + 1]
        color = np.asarray(PALETTE[p.color], dtype=np.float32)
        x, y = p.origin
        region = img[y:y + stamp.shape[0], x:x + stamp.shape[1]]
        a = stamp[:, :, None]
        region *= (1.0 - a)
        region += a * color
    _salt_noise(img, noise_rng, spec.noise_density)
    return np.clip(img, 0.0, 1.0)


def _scene_rngs(seed: int, index: int):
    def stream(k):
        return np.random.default_rng(np.random.SeedSequence([seed, index, k]))
    return stream(0), stream(1), stream(2)  # layout, background, noise


def _render_query(spec: DatasetSpec, bank: GlyphBank, digit: int) -> np.ndarray:
    """Clean canonical-pose, canonical-color patch naming the target class."""
    query = colorize(bank.canonical(digit), CANONICAL_COLOR)
    if spec.query_size != query.shape[0]:
        query = resize_bilinear(query, spec.query_size, spec.query_size)
    return query


def _placement_records(bank: GlyphBank, placed) -> tuple:
    return tuple((int(bank.labels[p.glyph]), p.color, p.box) for p in placed)


def generate_scene(spec: DatasetSpec, bank: GlyphBank, index: int = 0) -> SceneSample:
    """Build scene `index` of the dataset the spec describes."""
    layout_rng, bg_rng, noise_rng = _scene_rngs(spec.seed, index)
    placed = _place_digits(spec, bank, layout_rng)
    target = placed[int(layout_rng.integers(0, len(placed)))]
    img = _render_scene(spec, bank, placed, bg_rng, noise_rng)
    digit = int(bank.labels[target.glyph])
    query = _render_query(spec, bank, digit)
    return SceneSample(image=img.astype(np.float32), query=query,
                       gt_box=target.box, digit=digit,
                       color=target.color, index=index,
                       placements=_placement_records(bank, placed))


def expand_targets(samples, bank: GlyphBank = None) -> list:
    """One training sample per digit in each scene, not just the picked one.

    Every placement becomes its own (image, query, box) triple with the
    query re-rendered for that placement's class.  A model shown the same
    image under several queries can only cut its loss by actually reading
    the query, so this is the supervision that forces query-conditioned
    attention.

    Queries come from `bank` when given; otherwise they are borrowed from
    samples that designate the same class, since every stored query is
    the class's one canonical rendering.  Placements whose class has no
    query available are skipped.  Samples without placement records pass
    through unchanged.  Order is deterministic: scene order, then
    placement order.
    """
    samples = list(samples)
    query_cache: dict = {}
    if bank is None:
        for s in samples:
            query_cache.setdefault((s.digit, s.query.shape[0]), s.query)
    out = []
    for s in samples:
        if not s.placements:
            out.append(s)
            continue
        qsize = s.query.shape[0]
        for digit, color, box in s.placements:
            key = (digit, qsize)
            if key not in query_cache:
                if bank is None:
                    continue
                q = colorize(bank.canonical(digit), CANONICAL_COLOR)
                if q.shape[0] != qsize:
                    q = resize_bilinear(q, qsize, qsize)
                query_cache[key] = q
            out.append(SceneSample(image=s.image, query=query_cache[key],
                                   gt_box=box, digit=digit, color=color,
                                   index=s.index, placements=s.placements))
    return out


def generate_sequence(spec: DatasetSpec, bank: GlyphBank, length: int,
                      velocity=(2.0, 0.0), jitter: float = 0.0,
                      index: int = 0) -> list:
    """Frames of one scene whose target drifts at a constant velocity.

    Distractors stay put; the target's ink box moves by `velocity` per
    frame (plus optional gaussian jitter), reflecting off the canvas
    edges.  Noise is redrawn per frame; layout and colors are fixed.
    """
    if length < 1:
        raise SceneGenError("sequence length must be positive")
    layout_rng, _, _ = _scene_rngs(spec.seed, index)
    placed = _place_digits(spec, bank, layout_rng)
    ti = int(layout_rng.integers(0, len(placed)))
    target = placed[ti]
    bw, bh = target.box.width, target.box.height
    size = spec.image_size
    span_x = size - bw
    span_y = size - bh

    def reflect(v, span):
        if span == 0:
            return 0
        period = 2 * span
        m = v % period
        return m if m <= span else period - m

    frames = []
    jit_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index, 3]))
    query = _render_query(spec, bank, int(bank.labels[target.glyph]))
    x0, y0 = target.origin
    for t in range(length):
        jx = jit_rng.normal(0, jitter) if jitter > 0 else 0.0
        jy = jit_rng.normal(0, jitter) if jitter > 0 else 0.0
        x = reflect(int(round(x0 + velocity[0] * t + jx)), span_x)
        y = reflect(int(round(y0 + velocity[1] * t + jy)), span_y)
        moved = _Placement(target.glyph, target.color,
                           BoundingBox(x, y, x + bw - 1, y + bh - 1), (x, y))
        layout = placed[:ti] + [moved] + placed[ti + 1:]
        bg_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index, 1, t]))
        noise_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index, 2, t]))
        img = _render_scene(spec, bank, layout, bg_rng, noise_rng)
        frames.append(SceneSample(image=img.astype(np.float32), query=query,
                                  gt_box=moved.box,
                                  digit=int(bank.labels[target.glyph]),
                                  color=target.color, index=t,
                                  placements=_placement_records(bank, layout)))
    return frames


# -- dataset files -----------------------------------------------------------


def _manifest_line(i, image_name, query_name, sample):
    b = sample.gt_box
    return json.dumps({"index": i, "image": image_name, "query": query_name,
                       "box": [b.x0, b.y0, b.x1, b.y1],
                       "digit": sample.digit, "color": sample.color,
                       "placements": [[d, c, [p.x0, p.y0, p.x1, p.y1]]
                                      for d, c, p in sample.placements]},
                      sort_keys=True)


def generate_dataset(spec: DatasetSpec, bank: GlyphBank, out_dir) -> list:
    """Write n_images scenes, their queries, a manifest, and the spec."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    samples = []
    for i in range(spec.n_images):
        s = generate_scene(spec, bank, index=i)
        image_name = f"img_{i:05d}.ppm"
        query_name = f"qry_{i:05d}.ppm"
        write_ppm(out / image_name, s.image)
        write_ppm(out / query_name, s.query)
        lines.append(_manifest_line(i, image_name, query_name, s))
        samples.append(s)
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    (out / "spec.json").write_text(
        json.dumps({"kind": "scenes", **spec.to_dict()}, sort_keys=True, indent=1) + "\n")
    return samples


def generate_sequence_dataset(spec: DatasetSpec, bank: GlyphBank, out_dir,
                              length: int, velocity=(2.0, 0.0),
                              jitter: float = 0.0) -> list:
    """Write one tracking sequence: frames, the query, manifest, spec."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = generate_sequence(spec, bank, length, velocity=velocity, jitter=jitter)
    lines = []
    query_name = "query.ppm"
    write_ppm(out / query_name, frames[0].query)
    for t, s in enumerate(frames):
        image_name = f"frame_{t:05d}.ppm"
        write_ppm(out / image_name, s.image)
        lines.append(_manifest_line(t, image_name, query_name, s))
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    (out / "spec.json").write_text(
        json.dumps({"kind": "sequence", "length": length,
                    "velocity": list(velocity), "jitter": jitter,
                    **spec.to_dict()}, sort_keys=True, indent=1) + "\n")
    return frames


def load_dataset(in_dir) -> list:
    """Read back what generate_dataset / generate_sequence_dataset wrote."""
    root = Path(in_dir)
    manifest = root / "manifest.jsonl"
    if not manifest.exists():
        raise SceneGenError(f"no manifest.jsonl under {in_dir}")
    samples = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        img = read_ppm(root / rec["image"])
        qry = read_ppm(root / rec["query"])
        box = BoundingBox(*rec["box"])
        placements = tuple((int(d), int(c), BoundingBox(*pb))
                           for d, c, pb in rec.get("placements", []))
        samples.append(SceneSample(image=img, query=qry, gt_box=box,
                                   digit=int(rec["digit"]), color=int(rec["color"]),
                                   index=int(rec["index"]), placements=placements))
    if not samples:
        raise SceneGenError(f"empty manifest under {in_dir}")
    return samples
