"""Cooperative energy-based saliency prediction on synthetic scenes.

A conditional energy model refines what a conditional latent-variable
generator proposes; the two are trained jointly, with the generator learning
from the refined samples.  Everything runs on a small numpy-backed autodiff
engine so gradients with respect to maps and latent codes are as natural as
gradients with respect to weights.
"""

__version__ = "0.1.0"
