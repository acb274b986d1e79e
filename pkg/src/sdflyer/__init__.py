"""sdflyer: PPO-trained free-flyer control, sigma-delta conversion, and
closed-loop evaluation of both controllers."""

__version__ = "0.1.0"
