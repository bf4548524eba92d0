"""Extreme-precipitation nowcasting: data pipeline, dual-encoder attention
UNet generators, adversarial training, verification, uncertainty and
Grad-CAM tooling."""

__version__ = "0.1.0"
