"""Cross-technology gesture recognition toolkit.

Maps gesture feature streams from different sensing technologies (video
pose keypoints, WiFi wrist geometry, wrist accelerometry) into a shared
100-dimensional latent space with adversarially aligned 1D-convolutional
autoencoders, then recognizes unseen gesture classes in the target
technology by cosine similarity against source-technology exemplars.
"""

from .backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
