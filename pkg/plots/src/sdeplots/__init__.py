"""sdeplots: post-hoc analysis of chartsde experiment results."""

__version__ = "0.1.0"
