"""
Network

Instantiates an ArchitectureSpec into trainable tensors and runs forward passes
on the tensor tape. Initialization is deterministic per seed: Kaiming-uniform
fan-in for conv and dense weights, zero biases, gamma=1 / beta=0 for BN, and
gammatone kernels for layers marked ``init="gammatone"``.
"""

import logging
from collections import OrderedDict
from typing import Dict, List, Optional, Tuple

import numpy as np

from services.gammatone import gammatone_filterbank
from services.model_zoo import ArchitectureSpec, LayerSpec, ResidualBlockSpec, propagate
from utils.tensor import (
    INFERENCE, MODES, TRAINING, BatchNormState, ShapeError, Tensor, TensorValidationError,
    activate, add, avgpool1d, batchnorm1d, conv1d, default_dtype, dense, dropout, flatten,
    leaky_relu, maxpool1d, reshape, softmax,
)

logger = logging.getLogger(__name__)

SAMPLE_RATE = 22050


class NetworkStateError(ValueError):
    """State dict does not match the network's tensors"""
    pass


def _kaiming_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, name: str) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def _zeros(size: int, name: str) -> Tensor:
    return Tensor(np.zeros(size), requires_grad=True, name=name)


class Layer:
    """One instantiated table row."""

    def __init__(self, spec: LayerSpec, prefix: str):
        self.spec = spec
        self.prefix = prefix

    def forward(self, x: Tensor, mode: str, rng: Optional[np.random.Generator]) -> Tensor:
        raise NotImplementedError

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return []

    def named_buffers(self) -> List[Tuple[str, BatchNormState, str]]:
        return []


def _bn_parameters(prefix: str, bn: Optional[BatchNormState]):
    if bn is None:
        return []
    return [(f"{prefix}.gamma", bn.gamma), (f"{prefix}.beta", bn.beta)]


def _bn_buffers(prefix: str, bn: Optional[BatchNormState]):
    if bn is None:
        return []
    return [(f"{prefix}.running_mean", bn, "running_mean"), (f"{prefix}.running_var", bn, "running_var")]


def _normalize(x: Tensor, bn: Optional[BatchNormState], mode: str) -> Tensor:
    if bn is None:
        return x
    bn.mode = mode
    return batchnorm1d(x, bn)


class ConvLayer(Layer):
    def __init__(self, spec: LayerSpec, prefix: str, in_channels: int, rng: np.random.Generator,
                 sample_rate: int = SAMPLE_RATE):
        super().__init__(spec, prefix)
        shape = (spec.filters, in_channels, spec.kernel)
        if spec.init == "gammatone":
            if in_channels != 1:
                raise ShapeError(f"Gammatone front end expects a single input channel, got {in_channels}")
            bank = gammatone_filterbank(spec.filters, spec.kernel, sample_rate)
            self.weight = Tensor(bank.data, requires_grad=True, name=f"{prefix}.weight")
        else:
            self.weight = _kaiming_uniform(rng, shape, in_channels * spec.kernel, f"{prefix}.weight")
        self.bias = _zeros(spec.filters, f"{prefix}.bias")
        self.bn = BatchNormState.create(spec.filters, name=f"{prefix}.bn") if spec.batch_norm else None

    def forward(self, x, mode, rng):
        h = conv1d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)
        return activate(_normalize(h, self.bn, mode), self.spec.activation)

    def named_parameters(self):
        return [(f"{self.prefix}.weight", self.weight), (f"{self.prefix}.bias", self.bias)] + \
            _bn_parameters(f"{self.prefix}.bn", self.bn)

    def named_buffers(self):
        return _bn_buffers(f"{self.prefix}.bn", self.bn)


class ResidualBlock(Layer):
    """Two kernel-3 conv+BN stages plus an identity or 1x1-projection shortcut."""

    def __init__(self, spec: LayerSpec, prefix: str, block: ResidualBlockSpec, rng: np.random.Generator):
        super().__init__(spec, prefix)
        self.block = block
        c_in, c_out, k = block.in_channels, block.out_channels, block.kernel
        self.conv1_weight = _kaiming_uniform(rng, (c_out, c_in, k), c_in * k, f"{prefix}.conv1.weight")
        self.conv1_bias = _zeros(c_out, f"{prefix}.conv1.bias")
        self.bn1 = BatchNormState.create(c_out, name=f"{prefix}.bn1")
        self.conv2_weight = _kaiming_uniform(rng, (c_out, c_out, k), c_out * k, f"{prefix}.conv2.weight")
        self.conv2_bias = _zeros(c_out, f"{prefix}.conv2.bias")
        self.bn2 = BatchNormState.create(c_out, name=f"{prefix}.bn2")
        if block.projection:
            self.shortcut_weight = _kaiming_uniform(rng, (c_out, c_in, 1), c_in, f"{prefix}.shortcut.weight")
            self.shortcut_bias = _zeros(c_out, f"{prefix}.shortcut.bias")
            self.shortcut_bn = BatchNormState.create(c_out, name=f"{prefix}.shortcut.bn")
        else:
            self.shortcut_weight = self.shortcut_bias = self.shortcut_bn = None

    def forward(self, x, mode, rng):
        return residual_block_forward(x, self, mode)

    def named_parameters(self):
        p = self.prefix
        params = [(f"{p}.conv1.weight", self.conv1_weight), (f"{p}.conv1.bias", self.conv1_bias)]
        params += _bn_parameters(f"{p}.bn1", self.bn1)
        params += [(f"{p}.conv2.weight", self.conv2_weight), (f"{p}.conv2.bias", self.conv2_bias)]
        params += _bn_parameters(f"{p}.bn2", self.bn2)
        if self.block.projection:
            params += [(f"{p}.shortcut.weight", self.shortcut_weight), (f"{p}.shortcut.bias", self.shortcut_bias)]
            params += _bn_parameters(f"{p}.shortcut.bn", self.shortcut_bn)
        return params

    def named_buffers(self):
        p = self.prefix
        buffers = _bn_buffers(f"{p}.bn1", self.bn1) + _bn_buffers(f"{p}.bn2", self.bn2)
        if self.block.projection:
            buffers += _bn_buffers(f"{p}.shortcut.bn", self.shortcut_bn)
        return buffers


def residual_block_forward(x: Tensor, block: ResidualBlock, mode: str = INFERENCE) -> Tensor:
    """
    out = LeakyReLU(BN(conv2(LeakyReLU(BN(conv1(x))))) + shortcut(x)); length preserved.

    ``x`` is C_in x L or N x C_in x L.
    """
    if mode not in MODES:
        raise TensorValidationError(f"Unknown mode {mode!r}")
    spec = block.block
    if x.ndim < 2 or x.shape[-2] != spec.in_channels:
        raise ShapeError(f"Residual block expects {spec.in_channels} input channels, got shape {x.shape}")

    h = conv1d(x, block.conv1_weight, block.conv1_bias, spec.stride, spec.padding)
    h = leaky_relu(_normalize(h, block.bn1, mode))
    h = conv1d(h, block.conv2_weight, block.conv2_bias, spec.stride, spec.padding)
    h = _normalize(h, block.bn2, mode)
    if spec.projection:
        shortcut = conv1d(x, block.shortcut_weight, block.shortcut_bias, 1, "same")
        shortcut = _normalize(shortcut, block.shortcut_bn, mode)
    else:
        shortcut = x
    return leaky_relu(add(h, shortcut))


class PoolLayer(Layer):
    def forward(self, x, mode, rng):
        pool = maxpool1d if self.spec.kind == "maxpool" else avgpool1d
        return pool(x, self.spec.pool, self.spec.stride)


class FlattenLayer(Layer):
    def forward(self, x, mode, rng):
        return flatten(x)


class DropoutLayer(Layer):
    def forward(self, x, mode, rng):
        return dropout(x, self.spec.rate, mode, rng)


class DenseLayer(Layer):
    """Dense or output row; the output row emits logits (softmax lives in the loss)."""

    def __init__(self, spec: LayerSpec, prefix: str, in_features: int, rng: np.random.Generator):
        super().__init__(spec, prefix)
        self.weight = _kaiming_uniform(rng, (spec.units, in_features), in_features, f"{prefix}.weight")
        self.bias = _zeros(spec.units, f"{prefix}.bias")

    def forward(self, x, mode, rng):
        h = dense(x, self.weight, self.bias)
        if self.spec.kind == "output":
            return h
        return activate(h, self.spec.activation)

    def named_parameters(self):
        return [(f"{self.prefix}.weight", self.weight), (f"{self.prefix}.bias", self.bias)]


class Network:
    """
    Trainable instance of an ArchitectureSpec.

    Usage:
        net = Network(build_architecture("dieleman"), seed=7)
        probs = net.predict_proba(segments)   # N x 10
    """

    def __init__(self, spec: ArchitectureSpec, seed: int = 0, sample_rate: int = SAMPLE_RATE):
        self.spec = spec
        self.seed = seed
        self.mode = TRAINING
        self.metadata: Dict[str, object] = {}
        rng = np.random.default_rng(seed)
        self.layers: List[Layer] = []
        shape: Tuple[int, ...] = (1, spec.input_length)
        for trace in propagate(spec):
            layer, prefix = trace.layer, f"layers.{trace.index}"
            if layer.kind == "conv":
                built = ConvLayer(layer, prefix, shape[0], rng, sample_rate)
            elif layer.kind == "residual_block":
                built = ResidualBlock(layer, prefix, ResidualBlockSpec(shape[0], layer.filters), rng)
            elif layer.kind in ("maxpool", "avgpool"):
                built = PoolLayer(layer, prefix)
            elif layer.kind == "flatten":
                built = FlattenLayer(layer, prefix)
            elif layer.kind == "dropout":
                built = DropoutLayer(layer, prefix)
            else:
                built = DenseLayer(layer, prefix, shape[0], rng)
            self.layers.append(built)
            shape = trace.shape
        logger.debug(f"Built {spec.name} ({len(self.layers)} layers, dtype={np.dtype(default_dtype()).name}, seed={seed})")

    # -- modes ------------------------------------------------------------

    def train(self):
        self.mode = TRAINING
        return self

    def eval(self):
        self.mode = INFERENCE
        return self

    # -- forward ----------------------------------------------------------

    def forward(self, x, mode: Optional[str] = None, rng: Optional[np.random.Generator] = None) -> Tensor:
        """
        Map N x L waveforms (or N x 1 x L) to N x num_classes logits.

        Dropout draws from ``rng`` in training mode; pass one for reproducible runs.
        """
        mode = mode or self.mode
        if mode not in MODES:
            raise TensorValidationError(f"Unknown mode {mode!r}")
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim == 2:
            x = reshape(x, (x.shape[0], 1, x.shape[1]))
        if x.ndim != 3 or x.shape[1:] != (1, self.spec.input_length):
            raise ShapeError(f"{self.spec.name} expects N x {self.spec.input_length} input, got {x.shape}")
        if mode == TRAINING and rng is None:
            rng = np.random.default_rng(self.seed)
        for layer in self.layers:
            x = layer.forward(x, mode, rng)
        return x

    __call__ = forward

    def predict_proba(self, segments: np.ndarray, batch_size: int = 21) -> np.ndarray:
        """Inference-mode class probabilities for an N x L array of segments."""
        segments = np.asarray(segments)
        outputs = []
        for start in range(0, segments.shape[0], batch_size):
            logits = self.forward(segments[start:start + batch_size], mode=INFERENCE)
            outputs.append(softmax(logits).data.astype(np.float64))
        if not outputs:
            return np.zeros((0, self.spec.num_classes))
        return np.concatenate(outputs, axis=0)

    # -- state ------------------------------------------------------------

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return [item for layer in self.layers for item in layer.named_parameters()]

    def parameters(self) -> List[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.parameters()))

    def _buffers(self):
        return [item for layer in self.layers for item in layer.named_buffers()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Copies of every parameter and BN running statistic, in layer order."""
        state = OrderedDict((name, tensor.data.copy()) for name, tensor in self.named_parameters())
        for name, bn, attr in self._buffers():
            state[name] = np.array(getattr(bn, attr), copy=True)
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        expected = self.state_dict()
        missing = [k for k in expected if k not in state]
        unexpected = [k for k in state if k not in expected]
        if missing or unexpected:
            raise NetworkStateError(f"State mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, value in state.items():
            if np.shape(value) != expected[name].shape:
                raise NetworkStateError(
                    f"Tensor {name} has shape {np.shape(value)}, expected {expected[name].shape}"
                )
        for name, tensor in self.named_parameters():
            tensor.data = np.array(state[name], dtype=tensor.dtype, copy=True)
            tensor.grad = None
        for name, bn, attr in self._buffers():
            setattr(bn, attr, np.array(state[name], dtype=getattr(bn, attr).dtype, copy=True))
        return self
