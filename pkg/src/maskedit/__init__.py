"""Instruction-driven, mask-guided image editing.

A user instruction is parsed into a segmentation prompt and a caption pair,
an edit-region mask is computed by a grounding+segmentation backend (or by
contrasting caption-conditioned noise predictions), and the edit is performed
by mask-guided DDIM denoising.  Every backend (noise estimator, latent codec,
detector, segmentation model, chat client, vision describer) is pluggable;
the math core is pure numpy and verifiable offline against analytic oracles.
"""

from maskedit.scheduler import LatentState, NoiseSchedule, Trajectory
from maskedit.language import Instruction, ParsedPrompts

__all__ = [
    "Instruction",
    "LatentState",
    "NoiseSchedule",
    "ParsedPrompts",
    "Trajectory",
]

__version__ = "0.1.0"
