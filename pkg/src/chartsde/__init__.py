"""chartsde: learn a nonlinear chart and latent SDE from sparse ambient
drift/covariance observations, then evaluate the reduced simulator."""

__version__ = "0.1.0"
