"""Real-time portrait video background cut.

Thin wrapper around the C++ core: clip segmentation with background
attenuation and spatial-temporal refinement, IoU metrics, background
replacement, and synthetic dataset generation.
"""

from ._bgcut import (
    band_iou,
    bench,
    build_commit,
    checkpoint_kind,
    composite,
    generate_ambiguity_dataset,
    mean_iou,
    segment_clip,
    set_max_threads,
)

__all__ = [
    "band_iou",
    "bench",
    "build_commit",
    "checkpoint_kind",
    "composite",
    "generate_ambiguity_dataset",
    "mean_iou",
    "segment_clip",
    "set_max_threads",
]
