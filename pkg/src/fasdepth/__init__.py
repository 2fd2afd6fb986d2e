"""Depth-supervised face anti-spoofing at toy scale.

A numpy autodiff core, the residual spatial-gradient backbone, the
spatio-temporal propagation module, contrastive depth losses, PAD metrics,
and a pinhole-geometry simulator for motion-based relative depth.
"""

from importlib.resources import files

__version__ = "0.1.0"


def bundled_scene(name: str):
    """Path to one of the scene files shipped with the package."""
    return files(__package__) / "scenes" / f"{name}.ini"
