"""D1-D4 dataset conditionings and burst-coherent splitting."""
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .manifest import SPECIES_COUNTS, Manifest, SampleRecord

MODES = ("D1", "D2", "D3", "D4")
DESCRIPTIONS = {
    "D1": "classes unbalanced",
    "D2": "classes balanced",
    "D3": "objects in foreground",
    "D4": "animals segmented",
}


class PartitionError(ValueError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


@dataclass
class PartitionSpec:
    mode: str = "D1"
    train_quota: int = 1000
    eval_quota: int = 240
    seed: int = 0

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if self.mode == "D2" and (self.train_quota <= 0 or self.eval_quota <= 0):
            raise ValueError("D2 quotas must be positive")
        return self


def _events_by_class(records):
    by_class = defaultdict(lambda: defaultdict(list))
    for r in records:
        by_class[r.species][r.capture_event].append(r)
    return by_class


def _take(events, order, quota, used):
    """Whole events in seeded order while they fit, then one truncated event to land on ``quota``."""
    taken, remaining, truncated = [], quota, 0
    for key in order:
        if remaining == 0:
            break
        if key in used:
            continue
        if len(events[key]) <= remaining:
            taken.extend(events[key])
            remaining -= len(events[key])
            used.add(key)
    if remaining > 0:
        leftovers = [(len(events[k]), pos, k) for pos, k in enumerate(order) if k not in used]
        if leftovers:
            key = min(leftovers)[2]
            part = sorted(events[key], key=lambda r: r.burst_index)[:remaining]
            taken.extend(part)
            remaining -= len(part)
            used.add(key)
            truncated += 1
    return taken, remaining, truncated


def _balanced(full, spec, report):
    rng = np.random.default_rng(spec.seed)
    by_class = _events_by_class(full.records)
    records, splits, shortfalls = [], {}, []
    for species in full.class_table:
        events = by_class.get(species, {})
        keys = sorted(events)
        order = [keys[i] for i in rng.permutation(len(keys))]
        used = set()
        train, miss_t, trunc_t = _take(events, order, spec.train_quota, used)
        evals, miss_e, trunc_e = _take(events, order, spec.eval_quota, used)
        if miss_t or miss_e:
            supply = sum(len(v) for v in events.values())
            shortfalls.append(f"{species} (short by {miss_t + miss_e}; supply {supply})")
            continue
        for r in train:
            splits[r.id] = "train"
        for r in evals:
            splits[r.id] = "eval"
        records.extend(train + evals)
        report["truncated_events"][species] = trunc_t + trunc_e
    if shortfalls:
        raise PartitionError(
            f"D2 quota {spec.train_quota}/{spec.eval_quota} not met for: " + ", ".join(shortfalls),
            report,
        )
    order = {r.id: i for i, r in enumerate(full.records)}
    records.sort(key=lambda r: order[r.id])
    return records, splits


def build_partition(full, spec):
    """Derive the conditioned manifest for ``spec.mode``.

    D1 keeps everything; D2 samples exactly the per-class quotas (whole
    capture events, seeded); D3 keeps foreground records; D4 keeps records
    with a crop box and marks the manifest for crop-at-load.
    """
    spec.validate()
    report = {"mode": spec.mode, "excluded": 0, "truncated_events": {}}
    if spec.mode == "D1":
        records = list(full.records)
        splits = {r.id: full.splits[r.id] for r in records}
    elif spec.mode == "D2":
        records, splits = _balanced(full, spec, report)
    else:
        if spec.mode == "D3":
            records = [r for r in full.records if r.foreground]
        else:
            records = [r for r in full.records if r.crop_box is not None]
        report["excluded"] = len(full.records) - len(records)
        splits = {r.id: full.splits[r.id] for r in records}
        if not records:
            raise PartitionError(
                f"{spec.mode} leaves no records ({report['excluded']} excluded)", report
            )
    out = Manifest(
        class_table=list(full.class_table),
        records=records,
        splits=splits,
        provenance=dict(full.provenance),
        conditioning=spec.mode,
    )
    report["counts"] = {
        split: out.class_counts(split) for split in ("train", "eval")
    }
    if spec.mode == "D2":
        report["quota"] = {"train": spec.train_quota, "eval": spec.eval_quota, "seed": spec.seed}
    out.provenance["partition"] = report
    return out


def _pick_events(order, sizes, x):
    """Events (in seeded ``order``) whose sizes sum as close to ``x`` as one add or swap allows."""
    t = int(np.floor(x + 0.5))
    chosen, count = [], 0
    for key in order:
        if count + sizes[key] <= t:
            chosen.append(key)
            count += sizes[key]
    taken = set(chosen)
    rest = [k for k in order if k not in taken]
    first_rest = {}
    for k in rest:
        first_rest.setdefault(sizes[k], k)
    last_chosen = {}
    for k in chosen:
        last_chosen[sizes[k]] = k
    best = (abs(count - x), 0, None, None)
    for b, kb in sorted(first_rest.items()):
        best = min(best, (abs(count + b - x), 1, None, kb))
        for a, ka in sorted(last_chosen.items()):
            best = min(best, (abs(count - a + b - x), 2, ka, kb))
    _, _, drop, add = best
    taken.discard(drop)
    if add is not None:
        taken.add(add)
    return taken


def stratified_split(records, eval_fraction, seed=0):
    """Per-class, burst-coherent train/eval assignment.

    Each class gets within one image of ``fraction * size`` eval images
    whenever burst sizes allow it, and always at least one event per split.
    """
    if not 0 < eval_fraction < 1:
        raise ValueError("eval_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    by_class = _events_by_class(records)
    splits = {}
    for species in sorted(by_class):
        events = by_class[species]
        if len(events) < 2:
            raise ValueError(f"class {species!r} has a single capture event; cannot fill both splits")
        keys = sorted(events)
        order = [keys[i] for i in rng.permutation(len(keys))]
        sizes = {k: len(events[k]) for k in keys}
        chosen = _pick_events(order, sizes, eval_fraction * sum(sizes.values()))
        if not chosen:
            chosen = {min(order, key=lambda k: sizes[k])}
        if len(chosen) == len(keys):
            chosen.discard(order[-1])
        for key in keys:
            split = "eval" if key in chosen else "train"
            for r in events[key]:
                splits[r.id] = split
    return splits


def mock_census_manifest(counts=None, seed=0, max_burst=3, eval_fraction=0.2):
    """Image-free manifest with the given per-species counts (default: the published species census)."""
    counts = dict(SPECIES_COUNTS if counts is None else counts)
    rng = np.random.default_rng(seed)
    records = []
    for species, n in counts.items():
        slug = species.lower().replace(" ", "_").replace("'", "").replace("&", "_")
        sizes = rng.integers(1, max_burst + 1, size=n)
        k = done = 0
        while done < n:
            size = int(min(sizes[k], n - done))
            event = f"{slug}-{k:06d}"
            for b in range(size):
                records.append(SampleRecord(f"{event}-{b}", "", species, event, b))
            done += size
            k += 1
    splits = stratified_split(records, eval_fraction, seed)
    return Manifest(
        class_table=list(counts),
        records=records,
        splits=splits,
        provenance={"source": "mock", "counts": "published" if counts == SPECIES_COUNTS else "custom"},
    )
