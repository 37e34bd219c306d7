"""Contraindication-controlled cohort construction and counseling-framing
analysis for VBAC-eligible birth records."""

__version__ = "0.1.0"
