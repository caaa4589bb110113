"""Desk-scale human-AI collaborative classification lab.

Trains a per-sample routing policy over {AI alone, AI complemented by k
users, deferral to k users} on multi-rater noisy labels, with consensus
labelling, cost-accuracy evaluation, a CLI pipeline, and a live session
service where a real human can act as the expert.
"""

from . import numerics

__version__ = "0.1.0"

__all__ = ["numerics", "__version__"]
