"""Fixed-architecture CNN: construction, forward pass with trace, backprop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputShapeError, SelectorError, TraceError
from .layers import PARAMETRIC, Conv2D, Dense, Flatten, Layer, MaxPool2D, ReLU

HEADS = ("classification", "regression")


@dataclass(frozen=True)
class Network:
    """An ordered stack of layers followed by a softmax or identity head.

    Networks are immutable; training and dtype conversion return new objects.
    """

    layers: tuple
    input_shape: tuple
    head: str = "classification"
    shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                shapes.append(tuple(layer.output_shape(shapes[-1])))
            except ValueError as exc:
                raise ValueError(f"layer {i} ({layer.kind}): {exc}") from None
        if len(shapes[-1]) != 1:
            raise ValueError("network must end in a flat output")
        if self.head == "regression" and shapes[-1] != (1,):
            raise ValueError("regression head needs a single output")
        object.__setattr__(self, "shapes", tuple(shapes))

    @property
    def n_outputs(self) -> int:
        return self.shapes[-1][0]

    @property
    def dtype(self):
        for layer in self.layers:
            if isinstance(layer, PARAMETRIC):
                return layer.weight.dtype
        return np.dtype(np.float32)

    def parametric_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, PARAMETRIC)]

    def last_conv_index(self) -> int:
        idx = [i for i, layer in enumerate(self.layers) if isinstance(layer, Conv2D)]
        if not idx:
            raise ValueError("network has no convolutional layer")
        return idx[-1]

    def params(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.layers[i].weight, self.layers[i].bias) for i in self.parametric_indices()]

    def with_params(self, params) -> "Network":
        layers = list(self.layers)
        for i, (w, b) in zip(self.parametric_indices(), params):
            layers[i] = layers[i].with_params(w, b)
        return Network(tuple(layers), self.input_shape, self.head)

    def astype(self, dtype) -> "Network":
        return self.with_params([(w.astype(dtype), b.astype(dtype)) for w, b in self.params()])


@dataclass
class ForwardTrace:
    """Cached activations of one batched forward pass.

    ``activations[i]`` is the input of layer ``i`` and ``activations[i + 1]``
    its output, so the list is one longer than the layer stack.  The last
    entry is the pre-head output (logits); ``output`` is the post-head value.
    """

    activations: list
    winners: dict
    output: np.ndarray
    batched: bool = True

    @property
    def logits(self) -> np.ndarray:
        return self.activations[-1]

    def __len__(self):
        return len(self.activations)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def apply_head(net: Network, logits: np.ndarray) -> np.ndarray:
    return _softmax(logits) if net.head == "classification" else logits


def _as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.shape == net.input_shape:
        return x.astype(net.dtype, copy=False)[None], False
    if x.ndim == len(net.input_shape) + 1 and x.shape[1:] == net.input_shape:
        return x.astype(net.dtype, copy=False), True
    raise InputShapeError(f"expected input shape {net.input_shape} (optionally batched), got {x.shape}")


def run_layers(net: Network, x: np.ndarray, start: int = 0, stop: int | None = None,
               keep: bool = True):
    """Propagate a batch from the input of layer ``start`` to the output of ``stop - 1``.

    With ``keep=False`` only the final activation is retained and pool
    winners are not computed (inference fast path).
    """
    stop = len(net.layers) if stop is None else stop
    acts, winners = [x], {}
    for i in range(start, stop):
        layer = net.layers[i]
        if not keep:
            acts = [layer.forward(acts[-1])]
            continue
        if isinstance(layer, MaxPool2D):
            y, winners[i] = layer.forward_with_winners(acts[-1])
        else:
            y = layer.forward(acts[-1])
        acts.append(y)
    return acts, winners


def forward(net: Network, x) -> tuple[np.ndarray, ForwardTrace]:
    """Run ``x`` (single image or batch) through the network.

    Returns the post-head output and a trace of every intermediate activation.
    """
    xb, batched = _as_batch(net, x)
    acts, winners = run_layers(net, xb)
    out = apply_head(net, acts[-1])
    trace = ForwardTrace(acts, winners, out, batched)
    return (out if batched else out[0]), trace


def predict_logits(net: Network, x, batch_size: int = 32) -> np.ndarray:
    """Pre-head outputs for a batch, evaluated in cache-sized chunks."""
    xb, batched = _as_batch(net, x)
    chunks = [run_layers(net, xb[i:i + batch_size], keep=False)[0][-1]
              for i in range(0, len(xb), batch_size)]
    z = np.concatenate(chunks) if chunks else np.zeros((0, net.n_outputs), net.dtype)
    return z if batched else z[0]


def check_trace(net: Network, trace: ForwardTrace) -> None:
    if len(trace.activations) != len(net.layers) + 1:
        raise TraceError("trace length does not match the network's layer count")
    for i, (a, s) in enumerate(zip(trace.activations, net.shapes)):
        if a.shape[1:] != s:
            raise TraceError(f"trace activation {i} has shape {a.shape[1:]}, network expects {s}")
    for i, layer in enumerate(net.layers):
        if isinstance(layer, MaxPool2D) and i not in trace.winners:
            raise TraceError(f"trace lacks winner indices for pool layer {i}")


def layer_activations(trace: ForwardTrace, layer_index: int) -> np.ndarray:
    """Stored output activation of ``layer_index``."""
    n_layers = len(trace.activations) - 1
    if not 0 <= layer_index < n_layers:
        raise IndexError(f"layer index {layer_index} outside [0, {n_layers})")
    a = trace.activations[layer_index + 1]
    return a if trace.batched else a[0]


def _selector_grad(net: Network, n: int, target, dtype) -> np.ndarray:
    """One-hot seed gradient on the logits for a scalar-output selector."""
    k = net.n_outputs
    if target is None:
        if k != 1:
            raise SelectorError("target must be given for a multi-output network")
        target = 0
    t = np.broadcast_to(np.asarray(target), (n,))
    if not np.issubdtype(t.dtype, np.integer) or (t < 0).any() or (t >= k).any():
        raise SelectorError(f"target {target!r} is not an output index in [0, {k})")
    g = np.zeros((n, k), dtype=dtype)
    g[np.arange(n), t] = 1
    return g


def selected_scores(net: Network, logits: np.ndarray, target) -> np.ndarray:
    """Logit of ``target`` per batch row."""
    logits = np.atleast_2d(logits)
    return (logits * _selector_grad(net, len(logits), target, logits.dtype)).sum(axis=1)


def backward(net: Network, trace: ForwardTrace, grad: np.ndarray, stop: int = 0,
             relu_mode: str = "standard") -> np.ndarray:
    """Backpropagate ``grad`` (w.r.t. the logits) down to the input of layer ``stop``."""
    if relu_mode not in ("standard", "guided"):
        raise ValueError(f"unknown relu mode {relu_mode!r}")
    acts = trace.activations
    for i in range(len(net.layers) - 1, stop - 1, -1):
        layer = net.layers[i]
        x_in = acts[i]
        if isinstance(layer, ReLU):
            gate = x_in > 0
            if relu_mode == "guided":
                gate &= grad > 0
            grad = grad * gate
        elif isinstance(layer, MaxPool2D):
            grad = layer.route(grad, trace.winners[i], x_in.shape)
        elif isinstance(layer, Flatten):
            grad = grad.reshape(x_in.shape)
        else:
            grad = layer.backward_input(grad, x_in.shape)
    return grad


def backward_params(net: Network, trace: ForwardTrace, loss_grad) -> list:
    """Gradients of the loss w.r.t. every weight and bias.

    ``loss_grad`` is the loss gradient w.r.t. the pre-head output (logits),
    batched like the trace.  Returns one ``(grad_w, grad_b)`` pair per
    parametric layer, in layer order.
    """
    check_trace(net, trace)
    grad = np.asarray(loss_grad, dtype=trace.logits.dtype)
    if not trace.batched:
        grad = grad.reshape(trace.logits.shape)
    if grad.shape != trace.logits.shape:
        raise TraceError(f"loss gradient shape {grad.shape} does not match logits {trace.logits.shape}")
    acts = trace.activations
    grads = {}
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        x_in = acts[i]
        if isinstance(layer, PARAMETRIC):
            grads[i] = layer.param_grads(x_in, grad)
            if i > 0:
                grad = layer.backward_input(grad, x_in.shape)
        elif isinstance(layer, ReLU):
            grad = grad * (x_in > 0)
        elif isinstance(layer, MaxPool2D):
            grad = layer.route(grad, trace.winners[i], x_in.shape)
        else:
            grad = grad.reshape(x_in.shape)
    return [grads[i] for i in net.parametric_indices()]


def input_gradient(net: Network, trace: ForwardTrace, target=None, relu_mode: str = "standard") -> np.ndarray:
    """Gradient of the selected logit w.r.t. the network input.

    ``relu_mode="guided"`` additionally zeroes negative incoming gradients at
    every ReLU (guided backpropagation).
    """
    check_trace(net, trace)
    seed = _selector_grad(net, len(trace.logits), target, trace.logits.dtype)
    g = backward(net, trace, seed, 0, relu_mode)
    return g if trace.batched else g[0]


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_layers(specs, input_shape, seed: int, dtype=np.float32) -> tuple:
    """Instantiate layer specs with Glorot-uniform weights and zero biases.

    ``specs`` is a list of tuples: ``("conv", out, k, stride, padding)``,
    ``("dense", out)``, ``("relu",)``, ``("maxpool", k, stride)``, ``("flatten",)``.
    Input channels / dimensions are inferred from the running shape.
    """
    rng = np.random.default_rng(seed)
    shape = tuple(input_shape)
    layers = []
    for spec in specs:
        kind = spec[0]
        if kind == "conv":
            _, out, k, stride, pad = spec
            cin = shape[0]
            w = _glorot(rng, (out, cin, k, k), cin * k * k, out * k * k, dtype)
            layer = Conv2D(w, np.zeros(out, dtype), stride, pad)
        elif kind == "dense":
            out = spec[1]
            w = _glorot(rng, (out, shape[0]), shape[0], out, dtype)
            layer = Dense(w, np.zeros(out, dtype))
        elif kind == "relu":
            layer = ReLU()
        elif kind == "maxpool":
            layer = MaxPool2D(*spec[1:])
        elif kind == "flatten":
            layer = Flatten()
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
        shape = layer.output_shape(shape)
        layers.append(layer)
    return tuple(layers)


def default_specs(n_outputs: int) -> list:
    return [
        ("conv", 8, 3, 1, 1), ("relu",), ("maxpool", 2, 2),
        ("conv", 16, 3, 1, 1), ("relu",), ("maxpool", 2, 2),
        ("conv", 32, 3, 1, 1), ("relu",), ("maxpool", 2, 2),
        ("flatten",), ("dense", 64), ("relu",), ("dense", n_outputs),
    ]


def build_network(n_classes: int = 4, head: str = "classification", seed: int = 0,
                  input_size: int = 64) -> Network:
    """The benchmark CNN: three conv/ReLU/pool blocks and a two-layer MLP."""
    n_out = n_classes if head == "classification" else 1
    shape = (1, input_size, input_size)
    return Network(init_layers(default_specs(n_out), shape, seed), shape, head)
