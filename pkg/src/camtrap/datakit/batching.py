"""Image loading pipeline and deterministic minibatching."""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autograd import Tensor
from .imageio import ImageError, crop_box, read_image, resize_image


@dataclass
class Pipeline:
    """How records become network inputs: optional crop (D4), then square resize."""

    side: int = 32
    crop: bool = None  # None: crop exactly when the manifest is D4-conditioned


class LoadError(RuntimeError):
    pass


def load_record(record, root=None, images=None, side=32, crop=False):
    """uint8 image for one record, cropped (when asked and boxed) then resized."""
    try:
        if images is not None and record.id in images:
            img = images[record.id]
        else:
            path = Path(record.uri)
            if root is not None and not path.is_absolute():
                path = Path(root) / path
            img = read_image(path)
        if crop and record.crop_box is not None:
            img = crop_box(img, record.crop_box)
        return resize_image(img, side)
    except (OSError, ImageError) as exc:
        raise LoadError(f"cannot load record {record.id}: {exc}") from exc


class ArrayDataset:
    """In-memory inputs (N x C x S x S float32 in [0, 1]) with integer labels."""

    def __init__(self, x, y, ids=()):
        self.x = np.ascontiguousarray(x, dtype=np.float32)
        self.y = np.asarray(y, dtype=np.int64)
        self.ids = list(ids)

    def __len__(self):
        return len(self.y)

    def batches(self, batch_size, shuffle_seed=None):
        """Yield (Tensor, labels); order is a seeded permutation, last batch may be short."""
        n = len(self.y)
        order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            yield Tensor(self.x[idx]), self.y[idx]

    def subset(self, mask):
        mask = np.asarray(mask)
        ids = [i for i, keep in zip(self.ids, mask) if keep] if self.ids else []
        return ArrayDataset(self.x[mask], self.y[mask], ids)


def load_split(manifest, split, pipeline=None, root=None, images=None, dtype=np.float32):
    """Materialize one split of ``manifest`` as an ``ArrayDataset``."""
    pipeline = pipeline or Pipeline()
    crop = manifest.conditioning == "D4" if pipeline.crop is None else pipeline.crop
    records = manifest.split_records(split)
    if not records:
        raise ValueError(f"split {split!r} is empty")
    x = np.empty((len(records), 3, pipeline.side, pipeline.side), dtype=dtype)
    y = np.empty(len(records), dtype=np.int64)
    for i, r in enumerate(records):
        img = load_record(r, root, images, pipeline.side, crop)
        x[i] = img.transpose(2, 0, 1) / np.asarray(255.0, dtype=dtype)
        y[i] = manifest.label_of(r)
    return ArrayDataset(x, y, [r.id for r in records])


def batch_iterator(manifest, split, batch_size, shuffle_seed=None, pipeline=None, root=None, images=None):
    """Stream (Tensor N x C x S x S, labels) over one split in seeded order."""
    data = load_split(manifest, split, pipeline, root, images)
    yield from data.batches(batch_size, shuffle_seed)
