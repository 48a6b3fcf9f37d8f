"""Kinodynamic throwing toolkit for a planar N-link arm.

Offline pipeline: data collection via penalty-method trajectory
optimization, motion-manifold learning, task-conditioned latent flow,
and decoder fine-tuning.  Online: millisecond-scale sampling, feasibility
checking, and mid-motion adaptation.
"""
__version__ = "0.1.0"
