"""Kalman digital twin with a sliding-window KL divergence anomaly score."""

from ._itdt import *  # noqa: F401,F403
from ._itdt import Error  # noqa: F401

__version__ = "0.1.0"
