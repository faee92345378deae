"""Convolutional networks vs. brightness and color illusions.

A small numpy CNN engine, illusion stimulus generators, corpus/corruption
tools, an architecture zoo, a trainer and an effect-measurement harness.
"""

__version__ = "0.1.0"
