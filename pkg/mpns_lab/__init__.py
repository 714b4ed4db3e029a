"""
A desk-scale laboratory for multimodal representation learning guided by the probability of necessity and sufficiency.
"""

__version__ = "0.1.0"
