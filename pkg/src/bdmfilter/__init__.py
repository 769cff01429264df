"""Variational-Bayes bias detecting and mitigating nonlinear filtering."""
from ._backend import BACKEND

__version__ = "0.1.0"
