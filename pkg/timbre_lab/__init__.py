"""
timbre-lab
Desk-scale laboratory for timbre-reserved adversarial attacks on speaker identification
"""
__version__ = "1.0.0"
