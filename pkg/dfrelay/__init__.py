"""
Composite decode-forward relaying toolkit.
"""
__version__ = "0.3.0"
