"""
NFA-ViT package entry: noise-guided localized forgery detection on a numpy autograd.
"""
__version__ = "0.1.0"
