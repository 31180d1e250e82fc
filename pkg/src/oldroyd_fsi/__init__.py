"""Partitioned simulator for viscoelastic (Oldroyd-B) flow bounded by a damped plate."""

__version__ = "0.1.0"
