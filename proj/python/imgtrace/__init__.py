"""Perceptual-hash clustering, annotation graphs, and Hawkes influence analysis.

Thin wrapper around the compiled extension; everything interesting lives in
the C++ core. See the project README for the CLI and the file-based pipeline.
"""

from ._core import (
    cluster,
    fit_hawkes,
    hamming,
    ks_two_sample,
    louvain,
    medoid,
    phash_array,
    phash_bytes,
    phash_file,
    registrable_domain,
    simulate,
)

__all__ = [
    "cluster",
    "fit_hawkes",
    "hamming",
    "ks_two_sample",
    "louvain",
    "medoid",
    "phash_array",
    "phash_bytes",
    "phash_file",
    "registrable_domain",
    "simulate",
]

__version__ = "0.1.0"
