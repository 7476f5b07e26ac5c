"""A small numpy CNN with forward, backward, relevance and training passes."""

from .layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU
from .network import (ForwardTrace, Network, backward, backward_params, build_network, forward, input_gradient,
                      layer_activations, predict_logits)
from .relevance import deeplift, lrp, lrp_layers
from .training import TrainConfig, evaluate, train
from .weights_io import load_weights, save_weights

__all__ = [
    "Conv2D", "Dense", "Flatten", "ForwardTrace", "MaxPool2D", "Network", "ReLU", "TrainConfig", "backward",
    "backward_params", "build_network", "deeplift", "evaluate", "forward", "input_gradient", "layer_activations",
    "load_weights", "lrp", "lrp_layers", "predict_logits", "save_weights", "train",
]
