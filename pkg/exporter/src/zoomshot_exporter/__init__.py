"""One-shot feature exporters: pretrained encoders in, ZSEB files out."""

from .encoders import (
    EncoderUnavailableError,
    ImageEncoder,
    TextEncoder,
    load_image_encoder,
    load_text_encoder,
)
from .export import (
    ExportError,
    ExportManifest,
    export_class_templates,
    export_images,
    export_prompts,
)
from .zseb import write_zseb

__version__ = "0.1.0"
