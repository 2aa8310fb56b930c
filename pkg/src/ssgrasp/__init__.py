"""Scale-conditioned dense grasp prediction toolkit."""
__version__ = "0.1.0"
