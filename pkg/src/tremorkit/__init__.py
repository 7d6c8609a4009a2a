"""tremorkit: simulated wearable-tremor capture, annotation and analysis."""

__version__ = "0.1.0"
