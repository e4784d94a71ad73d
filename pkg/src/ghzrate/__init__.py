"""Stationary GHZ-distribution rate of a multiplexed multipartite quantum repeater.

The star network has ``n`` parties, each holding ``m`` memories in the central
station; every empty memory is refilled with probability ``p`` per round and
as many GHZ measurements as possible are performed after each storage step.
"""

from ghzrate.core import NetworkParams, ParameterError, decode, encode, validate
from ghzrate.chain import (
    Distribution,
    RateEstimate,
    TransitionMatrix,
    exact_rate,
)

__all__ = [
    "Distribution",
    "NetworkParams",
    "ParameterError",
    "RateEstimate",
    "TransitionMatrix",
    "decode",
    "encode",
    "exact_rate",
    "validate",
]

__version__ = "0.1.0"
