"""triforge: synthesizes paired depth and thermal frames from RGB
footage of people, plus the metrics to judge the result."""

__version__ = "0.1.0"
