"""Clip- and video-level contrastive pretraining with a silent-video memory bank, sized for a CPU."""

__version__ = "0.1.0"
