"""Library for two-graph multimodal contrastive classification."""

__version__ = "0.1.0"
