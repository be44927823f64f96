"""Bitstream screening toolkit: single-pass byte statistics, a cycle-level
model of a streaming statistics engine, and the classifiers built on top."""

__version__ = "0.1.0"
