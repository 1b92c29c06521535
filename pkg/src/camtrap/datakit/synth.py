"""Procedural camera-trap scenes.

Each class is a motif (shape + texture + colour) over a grassland
background.  Per-image conditions mimic the usual camera-trap failure
modes: empty frames, occluding vegetation, motion blur, overexposure,
partial bodies at the frame edge, grayscale night shots, and animals far
from the camera.
"""
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .imageio import write_image
from .manifest import EMPTY, SPECIES, Manifest, SampleRecord, write_manifest

CONDITIONS = ("empty_frame", "occlusion", "blur", "overexposure", "partial_body", "grayscale_night", "far")
SHAPES = ("disk", "square", "triangle", "cross", "ring", "diamond", "hbar", "vbar")
TEXTURES = ("solid", "stripes", "checker", "dots")
PALETTE = (
    (0.85, 0.20, 0.15),
    (0.15, 0.35, 0.85),
    (0.95, 0.90, 0.20),
    (0.10, 0.10, 0.10),
    (0.90, 0.90, 0.92),
    (0.60, 0.20, 0.75),
)
BACKGROUND = np.array([0.55, 0.50, 0.30])
VEGETATION = np.array([0.20, 0.35, 0.12])


@dataclass
class SynthSceneConfig:
    num_classes: int = 8
    image_side: int = 32
    train_per_class: object = 20
    eval_per_class: object = 8
    empty_frame: float = 0.0
    occlusion: float = 0.0
    blur: float = 0.0
    overexposure: float = 0.0
    partial_body: float = 0.0
    grayscale_night: float = 0.0
    far: float = 0.0
    empty_as_class: bool = True
    motif_scale: float = 0.5
    max_burst: int = 3
    class_offset: int = 0  # shifts motifs and names so two tasks can have disjoint classes
    seed: int = 0

    def validate(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be at least 1")
        for name in CONDITIONS:
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"invalid condition rate: {name}={rate}")
        for name in ("train_per_class", "eval_per_class"):
            counts = self.counts(name)
            if any(c < 0 for c in counts):
                raise ValueError(f"{name} must be non-negative")
        if self.image_side < 8:
            raise ValueError("image_side must be at least 8")
        if self.max_burst < 1:
            raise ValueError("max_burst must be at least 1")
        if self.class_offset < 0:
            raise ValueError("class_offset must be non-negative")
        return self

    def counts(self, name):
        value = getattr(self, name)
        if isinstance(value, (list, tuple)):
            if len(value) != self.num_classes:
                raise ValueError(f"{name} needs {self.num_classes} entries")
            return [int(v) for v in value]
        return [int(value)] * self.num_classes

    def to_dict(self):
        d = asdict(self)
        for name in ("train_per_class", "eval_per_class"):
            if isinstance(d[name], tuple):
                d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**data)


def class_names(num_classes, offset=0):
    if offset + num_classes <= len(SPECIES):
        return list(SPECIES[offset : offset + num_classes])
    return [f"class{c:02d}" for c in range(offset, offset + num_classes)]


def motif_of(c):
    """(shape, colour index, texture) of class ``c``; distinct for every class."""
    shape, k = c % 8, c // 8
    return SHAPES[shape], (shape + k) % len(PALETTE), TEXTURES[(shape + 2 * k) % len(TEXTURES)]


def _shape_mask(shape, u, v):
    # u, v: coordinates relative to motif centre, in units of the motif half-size
    au, av = np.abs(u), np.abs(v)
    if shape == "disk":
        return u * u + v * v <= 1.0
    if shape == "square":
        return (au <= 0.8) & (av <= 0.8)
    if shape == "triangle":
        return (v <= 0.8) & (v >= 2.0 * au - 1.0)
    if shape == "cross":
        return ((au <= 0.3) & (av <= 1.0)) | ((av <= 0.3) & (au <= 1.0))
    if shape == "ring":
        r2 = u * u + v * v
        return (r2 <= 1.0) & (r2 >= 0.36)
    if shape == "diamond":
        return au + av <= 1.0
    if shape == "hbar":
        return (au <= 1.0) & (av <= 0.35)
    if shape == "vbar":
        return (au <= 0.35) & (av <= 1.0)
    raise ValueError(shape)


def _texture(texture, u, v):
    if texture == "solid":
        return np.ones_like(u)
    if texture == "stripes":
        return 0.55 + 0.45 * (np.floor((u + 2.0) * 2.5) % 2)
    if texture == "checker":
        return 0.55 + 0.45 * ((np.floor((u + 2.0) * 2.5) + np.floor((v + 2.0) * 2.5)) % 2)
    if texture == "dots":
        fu, fv = (u * 2.5) % 1.0 - 0.5, (v * 2.5) % 1.0 - 0.5
        return np.where(fu * fu + fv * fv < 0.09, 0.45, 1.0)
    raise ValueError(texture)


def _background(rng, side):
    coarse = rng.normal(0.0, 0.06, size=(4, 4, 3))
    idx = np.minimum((np.arange(side) * 4) // side, 3)
    smooth = coarse[idx][:, idx]
    grain = rng.normal(0.0, 0.03, size=(side, side, 1))
    return np.clip(BACKGROUND + smooth + grain, 0.0, 1.0)


def _box_blur(img, k=3):
    pad = k // 2
    padded = np.pad(img, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    h, w = img.shape[:2]
    for dy in range(k):
        for dx in range(k):
            out += padded[dy : dy + h, dx : dx + w]
    return out / (k * k)


def render_scene(rng, side, cls, conditions, placement):
    """Render one image; returns (float image, motif mask)."""
    img = _background(rng, side)
    mask = np.zeros((side, side), dtype=bool)
    if cls is not None and not conditions["empty_frame"]:
        shape, colour, texture = motif_of(cls)
        cy, cx, half = placement
        ys, xs = np.mgrid[0:side, 0:side].astype(np.float64) + 0.5
        u, v = (xs - cx) / half, (ys - cy) / half
        mask = _shape_mask(shape, u, v)
        tex = _texture(texture, u, v)[..., None]
        fill = np.array(PALETTE[colour]) * tex
        img = np.where(mask[..., None], fill, img)
    if conditions["occlusion"]:
        for _ in range(int(rng.integers(1, 3))):
            width = max(1, side // 10)
            x0 = int(rng.integers(0, side - width + 1))
            img[:, x0 : x0 + width] = VEGETATION
    if conditions["overexposure"]:
        ys, xs = np.mgrid[0:side, 0:side]
        oy, ox = rng.uniform(0, side, size=2)
        r = side * rng.uniform(0.25, 0.45)
        glare = ((ys - oy) ** 2 + (xs - ox) ** 2) <= r * r
        img = np.where(glare[..., None], np.clip(img + 0.6, 0.0, 1.0), img)
    if conditions["blur"]:
        img = _box_blur(img, 3)
    if conditions["grayscale_night"]:
        grey = img.mean(axis=2, keepdims=True) * 0.45
        img = np.repeat(grey, 3, axis=2)
    return img, mask


def _placement(rng, side, scale, conditions):
    half = side * scale * 0.5 * rng.uniform(0.85, 1.15)
    if conditions["far"]:
        half *= 0.3
        cy, cx = rng.uniform(half, side - half, size=2)
    elif conditions["partial_body"]:
        # centre near an edge so roughly half the motif leaves the frame
        edge = int(rng.integers(0, 4))
        along = rng.uniform(half, side - half)
        off = rng.uniform(-0.1, 0.1) * half
        cy, cx = {
            0: (off, along),
            1: (side - off, along),
            2: (along, off),
            3: (along, side - off),
        }[edge]
    else:
        jitter = side * 0.1
        cy, cx = side / 2 + rng.uniform(-jitter, jitter, size=2)
    return cy, cx, half


def _bbox(mask):
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    return (int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


def _to_uint8(img):
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def synth_scenes(config):
    """Generate images in memory: returns ({record id: uint8 image}, Manifest)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    names = class_names(config.num_classes, config.class_offset)
    emit_empty = config.empty_as_class and config.empty_frame > 0
    class_table = names + ([EMPTY] if emit_empty else [])
    images, records, splits = {}, [], {}
    side = config.image_side
    counts = {"train": config.counts("train_per_class"), "eval": config.counts("eval_per_class")}
    for c, name in enumerate(names):
        slug = name.lower().replace(" ", "_").replace("'", "").replace("&", "_")
        for split in ("train", "eval"):
            remaining, event_no = counts[split][c], 0
            while remaining > 0:
                size = int(min(rng.integers(1, config.max_burst + 1), remaining))
                event = f"{slug}-{split}-{event_no:05d}"
                base = None
                for b in range(size):
                    cond = {k: bool(rng.random() < getattr(config, k)) for k in CONDITIONS}
                    placement = _placement(rng, side, config.motif_scale, cond)
                    if base is not None and not (cond["far"] or cond["partial_body"]):
                        # later burst frames stay near the first frame's position
                        placement = (base[0] + rng.uniform(-1, 1), base[1] + rng.uniform(-1, 1), base[2])
                    if base is None and not (cond["far"] or cond["partial_body"]):
                        base = placement
                    img, mask = render_scene(rng, side, c + config.class_offset, cond, placement)
                    rid = f"{event}-{b}"
                    empty = cond["empty_frame"]
                    records.append(
                        SampleRecord(
                            id=rid,
                            uri=f"images/{rid}.ppm",
                            species=EMPTY if (empty and emit_empty) else name,
                            capture_event=event,
                            burst_index=b,
                            foreground=not (empty or cond["far"]),
                            crop_box=None if empty else _bbox(mask),
                            grayscale=cond["grayscale_night"],
                        )
                    )
                    splits[rid] = split
                    images[rid] = _to_uint8(img)
                remaining -= size
                event_no += 1
    manifest = Manifest(
        class_table=class_table,
        records=records,
        splits=splits,
        provenance={"source": "synthetic", "synth": config.to_dict(), "resize": "bilinear-square"},
    )
    return images, manifest


def synth_generate(config, out_dir):
    """Write images (binary PPM) and ``manifest.jsonl`` under ``out_dir``."""
    images, manifest = synth_scenes(config)
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for r in manifest.records:
        write_image(out / r.uri, images[r.id])
    write_manifest(manifest, out / "manifest.jsonl")
    return images, manifest


def condition_counts(manifest):
    """Per-condition tallies recoverable from the manifest flags."""
    return {
        "records": len(manifest.records),
        "empty": sum(r.crop_box is None for r in manifest.records),
        "background_only_or_far": sum(not r.foreground for r in manifest.records),
        "grayscale": sum(r.grayscale for r in manifest.records),
    }
