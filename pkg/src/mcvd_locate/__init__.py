"""Node localization for diffusion-based molecular communication."""

__version__ = "0.1.0"
LAYOUT_VERSION = "mcvd-locate/v1"
