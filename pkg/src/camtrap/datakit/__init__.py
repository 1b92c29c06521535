"""Manifests, D1-D4 conditionings, image handling, and synthetic scenes."""
from .batching import ArrayDataset, LoadError, Pipeline, batch_iterator, load_record, load_split
from .imageio import ImageError, crop_box, decode_pnm, encode_ppm, read_image, register_decoder, resize_image, write_image
from .manifest import (
    EMPTY,
    FORMAT,
    SPECIES,
    SPECIES_COUNTS,
    Manifest,
    ManifestError,
    SampleRecord,
    ensure_valid,
    read_manifest,
    validate_manifest,
    write_manifest,
)
from .partition import MODES, PartitionError, PartitionSpec, build_partition, mock_census_manifest, stratified_split
from .synth import CONDITIONS, SynthSceneConfig, class_names, condition_counts, motif_of, synth_generate, synth_scenes

__all__ = [
    "ArrayDataset",
    "CONDITIONS",
    "EMPTY",
    "FORMAT",
    "ImageError",
    "LoadError",
    "MODES",
    "Manifest",
    "ManifestError",
    "PartitionError",
    "PartitionSpec",
    "Pipeline",
    "SPECIES",
    "SampleRecord",
    "SynthSceneConfig",
    "SPECIES_COUNTS",
    "batch_iterator",
    "build_partition",
    "class_names",
    "condition_counts",
    "crop_box",
    "decode_pnm",
    "encode_ppm",
    "ensure_valid",
    "load_record",
    "load_split",
    "mock_census_manifest",
    "motif_of",
    "read_image",
    "read_manifest",
    "register_decoder",
    "resize_image",
    "stratified_split",
    "synth_generate",
    "synth_scenes",
    "validate_manifest",
    "write_image",
    "write_manifest",
]
