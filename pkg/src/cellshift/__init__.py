"""cellshift: predict how cell populations shift under perturbation.

Set-aware encoding of unordered cell populations, conditional latent
endpoint transport between control and perturbed states, a condition-
sharded sparse data store, and a population-level evaluation suite.
"""

__version__ = "0.1.0"
