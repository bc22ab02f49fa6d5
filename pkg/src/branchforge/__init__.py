"""branchforge: grows branching visual-novel games with chat models."""

__version__ = "0.1.0"
