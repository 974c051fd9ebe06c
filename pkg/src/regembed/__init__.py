from .core import RandomSource
