"""Curriculum self-play PPO for beyond-visual-range air combat."""

__version__ = "0.1.0"
