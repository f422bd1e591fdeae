"""Gaussian-guided latent alignment for unsupervised domain adaptation.

A weight-tied encoder-decoder trained with a KL-to-prior penalty and an
unpaired L1 distribution-alignment loss, plus adversarial (MCD) and
feature-norm (SAFN) training variants, on deterministic 2-D synthetic tasks.
"""

__version__ = "0.1.0"
