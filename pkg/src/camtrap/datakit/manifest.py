"""Dataset catalog records, the manifest file format, and validation."""
import json
from collections import defaultdict
from dataclasses import dataclass, field, fields
from pathlib import Path

FORMAT = "camtrap-manifest/1"
SPLITS = ("train", "eval")

# 26 Snapshot Serengeti species with their published image counts.
SPECIES_COUNTS = {
    "Baboon": 4618,
    "Buffalo": 34684,
    "Cheetah": 3354,
    "Dik-dik": 3364,
    "Eland": 7395,
    "Elephant": 25294,
    "Giraffe": 22439,
    "Grant's gazelle": 21340,
    "Guinea fowl": 23023,
    "Hartebeest": 15401,
    "Hippopotamus": 3231,
    "Human": 26557,
    "Impala": 22281,
    "Jackal": 1207,
    "Kori bustard": 2042,
    "Lion female&cub": 8773,
    "Lion male": 2413,
    "Ostrich": 1945,
    "Reedbuck": 4131,
    "Secretary bird": 1302,
    "Spotted hyena": 10242,
    "Thomson's gazelle": 116421,
    "Topi": 6247,
    "Warthog": 22041,
    "Wildebeest": 212973,
    "Zebra": 181043,
}
SPECIES = tuple(SPECIES_COUNTS)
EMPTY = "empty"


class ManifestError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations[:10]))


@dataclass(slots=True)
class SampleRecord:
    id: str
    uri: str
    species: str
    capture_event: str
    burst_index: int = 0
    foreground: bool = True
    crop_box: tuple = None
    grayscale: bool = False

    def to_json(self, split):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["crop_box"] = list(self.crop_box) if self.crop_box is not None else None
        d["split"] = split
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        split = d.pop("split", None)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ManifestError([f"unknown record fields {sorted(unknown)}"])
        if d.get("crop_box") is not None:
            d["crop_box"] = tuple(int(v) for v in d["crop_box"])
        return cls(**d), split


@dataclass
class Manifest:
    class_table: list
    records: list
    splits: dict
    provenance: dict = field(default_factory=dict)
    conditioning: str = None

    def label_of(self, record):
        return self.class_table.index(record.species)

    def split_records(self, split):
        return [r for r in self.records if self.splits.get(r.id) == split]

    def class_counts(self, split=None):
        counts = {c: 0 for c in self.class_table}
        for r in self.records:
            if split is None or self.splits.get(r.id) == split:
                counts[r.species] = counts.get(r.species, 0) + 1
        return counts


def write_manifest(manifest, path):
    path = Path(path)
    header = {
        "format": FORMAT,
        "class_table": list(manifest.class_table),
        "conditioning": manifest.conditioning,
        "provenance": manifest.provenance,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for r in manifest.records:
        lines.append(json.dumps(r.to_json(manifest.splits.get(r.id))))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise ManifestError([f"{path}: bad header line ({exc})"]) from None
        if header.get("format") != FORMAT:
            raise ManifestError([f"{path}: unsupported manifest format {header.get('format')!r}"])
        records, splits = [], {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            rec, split = SampleRecord.from_json(json.loads(line))
            records.append(rec)
            if split is not None:
                splits[rec.id] = split
    return Manifest(
        class_table=list(header["class_table"]),
        records=records,
        splits=splits,
        provenance=header.get("provenance") or {},
        conditioning=header.get("conditioning"),
    )


def validate_manifest(manifest, image_size=None):
    """Return every violation found (empty list when the manifest is valid).

    ``image_size`` is an optional callable record -> (width, height) used for
    crop-box bounds; without it only the box geometry is checked.
    """
    violations = []
    classes = set(manifest.class_table)
    seen = set()
    event_splits = defaultdict(set)
    for r in manifest.records:
        if r.id in seen:
            violations.append(f"duplicate id: {r.id}")
        seen.add(r.id)
        if r.species not in classes:
            violations.append(f"unknown species: {r.species!r} (record {r.id})")
        if r.crop_box is not None:
            x, y, w, h = r.crop_box
            if x < 0 or y < 0 or w <= 0 or h <= 0:
                violations.append(f"crop box out of bounds: {r.crop_box} (record {r.id})")
            elif image_size is not None:
                iw, ih = image_size(r)
                if x + w > iw or y + h > ih:
                    violations.append(f"crop box out of bounds: {r.crop_box} in {iw}x{ih} (record {r.id})")
        split = manifest.splits.get(r.id)
        if split is None:
            violations.append(f"split coverage: record {r.id} has no split")
        elif split not in SPLITS:
            violations.append(f"split coverage: record {r.id} has invalid split {split!r}")
        else:
            event_splits[r.capture_event].add(split)
    extra = set(manifest.splits) - seen
    if extra:
        violations.append(f"split coverage: {len(extra)} split entries name no record")
    for event, splits in event_splits.items():
        if len(splits) > 1:
            violations.append(f"capture-event leakage: event {event} spans {sorted(splits)}")
    return violations


def ensure_valid(manifest, image_size=None):
    problems = validate_manifest(manifest, image_size)
    if problems:
        raise ManifestError(problems)
    return manifest
