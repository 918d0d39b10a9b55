"""Fundus analysis pipeline for AMD screening: classification ensembles, optic-disc
segmentation, fovea localisation by distance-map regression and lesion segmentation."""

__version__ = "0.1.0"
