"""Feature-bundle exporter for frozen CLIP-style dual encoders."""

from .container import write_container
from .demo import make_demo_images, make_demo_model
from .export import export_text, export_visual, load_model

__all__ = [
    "write_container",
    "make_demo_images",
    "make_demo_model",
    "export_text",
    "export_visual",
    "load_model",
]

__version__ = "0.1.0"
