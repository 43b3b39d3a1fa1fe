"""
vicsek-kinetics - kinetic alignment model laboratory
"""
__version__ = "0.1.0"
__author__ = "vicsek-kinetics developers"
