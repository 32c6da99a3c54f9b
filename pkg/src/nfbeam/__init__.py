"""Dynamic hybrid beamforming for near-field extremely-large-array downlinks."""

__version__ = "0.1.0"
