"""Capacity-constrained treatment assignment via discrete optimal transport."""
from .__version__ import __author__, __copyright__, __title__, __version__
