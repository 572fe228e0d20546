"""MOSRA: joint non-intrusive speech quality (MOS) and room acoustics estimation."""

__version__ = "0.1.0"
