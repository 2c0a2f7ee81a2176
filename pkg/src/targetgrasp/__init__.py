"""Region-focal 6-DoF grasp detection and evaluation on synthetic scenes."""

__version__ = "0.1.0"
