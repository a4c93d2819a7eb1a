"""narrowforge: constructive synthesis of minimum-width approximator networks.

The package builds explicit ReLU (and ReLU-like) networks of width
max{dx, dy, 2} that approximate a target map on the unit cube to a requested
L^p tolerance, plus the matching verification and lower-bound tooling.
"""

from .activations import Activation, relu
from .network import AffineLayer, Network, activation_eval, compose, eval_network, width

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "relu",
    "AffineLayer",
    "Network",
    "activation_eval",
    "compose",
    "eval_network",
    "width",
    "__version__",
]
