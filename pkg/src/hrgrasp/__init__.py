"""High-resolution parallel-branch grasp detection toolkit."""

__version__ = "0.1.0"
