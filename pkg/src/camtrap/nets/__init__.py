"""Micro-scale architecture families and transfer-learning surgery."""
from .blocks import BranchSpec, ParamView, inception_block, inception_param_shapes, residual_block
from .model import (
    FAMILIES,
    FEATURES,
    ARCH_ROSTER,
    ArchitectureSpec,
    ModelState,
    build_architecture,
    extract_features,
    inception_branches,
    ordered_param_groups,
    replace_classifier_head,
    stage_plan,
)

__all__ = [
    "FAMILIES",
    "FEATURES",
    "ARCH_ROSTER",
    "ArchitectureSpec",
    "BranchSpec",
    "ModelState",
    "ParamView",
    "build_architecture",
    "extract_features",
    "inception_block",
    "inception_branches",
    "inception_param_shapes",
    "ordered_param_groups",
    "replace_classifier_head",
    "residual_block",
    "stage_plan",
]
