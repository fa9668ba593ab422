"""Audio-visual two-speaker separation.

A conditional variational model of clean-speech spectrogram variance (trained
on synthetic formant-band speakers with time-aligned visual embeddings) is
combined at test time with an NMF noise model; separation runs Monte-Carlo EM
with a Metropolis-Hastings E-step over the latent codes of both speakers.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericalError

__all__ = ["ConfigError", "DataError", "NumericalError", "__version__"]
