"""Music-to-dance translation: audio features, pose retargeting and sequence models."""

__version__ = "0.1.0"
