"""ionhom: multiscale simulation of ion transport in periodic cellular tissue"""

__version__ = "0.1.0"
