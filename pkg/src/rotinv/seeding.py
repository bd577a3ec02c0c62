"""Labelled random substreams derived from one master seed."""

import zlib

import numpy as np


def substream(seed, label):
    """Generator for ``label`` under master ``seed``; stable across runs and platforms."""
    return np.random.default_rng([int(seed), zlib.crc32(label.encode("utf-8"))])
