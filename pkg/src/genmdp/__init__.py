"""Generative-model planning and online learning for finite and compact MDPs."""

__version__ = "0.1.0"
