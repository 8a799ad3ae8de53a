"""Optical flow from a frame pair and the event stream recorded between them.

Submodules are imported explicitly, e.g. ``from stflow import correlation``.
"""

__version__ = "0.1.0"
