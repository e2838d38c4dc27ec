"""Ab initio cryo-EM reconstruction by frequency marching."""
__version__ = "0.1.0"
