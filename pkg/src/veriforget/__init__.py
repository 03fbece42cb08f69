"""Verifiable approximate unlearning for personalized models.

Provider-side saliency masking, client-side Group-OBS curvature
compensation, plain-arithmetic KKT certificates, and a fixed-point
constraint system with binding commitments for zero-knowledge
verification of the unlearning operator.
"""

__version__ = "0.1.0"
