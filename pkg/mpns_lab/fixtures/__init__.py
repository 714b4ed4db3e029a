"""
Canonical structural causal models with known PNS values.
"""
