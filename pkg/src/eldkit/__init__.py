"""English language detection from ASR confusion networks.

Soft bag-of-words statistics, Bayesian subspace multinomial embeddings,
uncertainty-aware Gaussian and logistic-regression backends, EER evaluation.
"""

__version__ = "0.1.0"
