"""Extrinsic-parameter-free multi-view motion reconstruction at desk scale."""

__version__ = "0.1.0"
