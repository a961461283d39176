"""Desk-scale language-conditioned pick-and-place imitation learning."""

from .geometry import (DEFAULT_FRAME, Observation, PixelAction, PixelPose,
                       WorkspaceFrame)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_FRAME", "Observation", "PixelAction", "PixelPose",
    "WorkspaceFrame", "__version__",
]
