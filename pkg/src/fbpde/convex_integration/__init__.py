"""Oscillatory perturbations and the finite-stage surgery pipeline."""

from .oscillation import (
    OscillationPatch,
    PlateauCutoff,
    TileFunction,
    oscillation_on_box,
    pmap,
    tile_function,
)
from .pipeline import (
    PipelineState,
    StageReport,
    interface_partition,
    run_pipeline,
    single_stage,
)

__all__ = [
    "OscillationPatch",
    "PlateauCutoff",
    "TileFunction",
    "oscillation_on_box",
    "pmap",
    "tile_function",
    "PipelineState",
    "StageReport",
    "interface_partition",
    "run_pipeline",
    "single_stage",
]
