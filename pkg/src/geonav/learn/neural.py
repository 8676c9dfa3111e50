"""Dense network core: forward pass, exact reverse-mode gradients, Adam, Polyak tracking.

Networks are plain numpy float64 arrays. Layer ``k`` computes
``z = a @ W[k] + b[k]`` with ``W[k]`` of shape (fan_in, fan_out); hidden
layers apply ReLU (subgradient 0 at 0), the output layer applies ``tanh`` or
nothing.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.exceptions import ArchitectureMismatchError, NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "geonav-checkpoint"
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("identity", "tanh")


class Mlp:
    """Multi-layer perceptron with ReLU hidden layers."""

    def __init__(self, layer_dims: Sequence[int], output_activation: str = "identity",
                 rng: Optional[np.random.Generator] = None):
        if len(layer_dims) < 2 or any(int(d) < 1 for d in layer_dims):
            raise ShapeMismatchError(f"invalid layer_dims: {list(layer_dims)}")
        if output_activation not in ACTIVATIONS:
            raise ValueError(f"unknown output activation: {output_activation}")
        self.layer_dims = [int(d) for d in layer_dims]
        self.output_activation = output_activation
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            if rng is None:
                self.weights.append(np.zeros((fan_in, fan_out)))
                self.biases.append(np.zeros(fan_out))
            else:
                bound = 1.0 / np.sqrt(fan_in)
                self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    def __repr__(self) -> str:
        return f"Mlp(layer_dims={self.layer_dims}, output_activation='{self.output_activation}')"

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> List[np.ndarray]:
        """Parameter arrays in checkpoint order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def copy(self) -> "Mlp":
        clone = Mlp(self.layer_dims, self.output_activation)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def load_flat(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        expected = sum(p.size for p in self.params())
        if values.size != expected:
            raise ShapeMismatchError(f"expected {expected} parameters, got {values.size}")
        offset = 0
        for k in range(self.n_layers):
            w, b = self.weights[k], self.biases[k]
            self.weights[k] = values[offset:offset + w.size].reshape(w.shape).copy()
            offset += w.size
            self.biases[k] = values[offset:offset + b.size].copy()
            offset += b.size

    def checksum(self) -> str:
        return hashlib.sha256(self.flat().astype("<f8").tobytes()).hexdigest()

    def same_architecture(self, other: "Mlp") -> bool:
        return self.layer_dims == other.layer_dims and self.output_activation == other.output_activation


@dataclass
class ForwardCache:
    """Activations kept by ``forward_with_cache`` for the backward pass."""

    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    output: np.ndarray
    squeeze: bool


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def params(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


def _as_batch(net: Mlp, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise ShapeMismatchError(f"input shape {x.shape} does not match input dim {net.layer_dims[0]}")
    return x, squeeze


def forward_with_cache(net: Mlp, x: np.ndarray) -> ForwardCache:
    a, squeeze = _as_batch(net, x)
    inputs, pre = [], []
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        z = a @ w + b
        pre.append(z)
        if k < net.n_layers - 1:
            a = np.maximum(z, 0.0)
        elif net.output_activation == "tanh":
            a = np.tanh(z)
        else:
            a = z
    return ForwardCache(inputs=inputs, pre_activations=pre, output=a, squeeze=squeeze)


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Network output for one input vector or a batch of rows."""
    cache = forward_with_cache(net, x)
    return cache.output[0] if cache.squeeze else cache.output


def backward_from_cache(net: Mlp, cache: ForwardCache, upstream: np.ndarray) -> Tuple[Gradients, np.ndarray]:
    """Gradients of sum(upstream * output) w.r.t. parameters and input."""
    g = np.asarray(upstream, dtype=np.float64)
    if cache.squeeze and g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.output.shape:
        raise ShapeMismatchError(f"upstream shape {g.shape} does not match output {cache.output.shape}")
    if net.output_activation == "tanh":
        g = g * (1.0 - cache.output ** 2)
    dws: List[np.ndarray] = [None] * net.n_layers
    dbs: List[np.ndarray] = [None] * net.n_layers
    for k in range(net.n_layers - 1, -1, -1):
        dws[k] = cache.inputs[k].T @ g
        dbs[k] = g.sum(axis=0)
        g = g @ net.weights[k].T
        if k > 0:
            g = g * (cache.pre_activations[k - 1] > 0.0)
    input_grad = g[0] if cache.squeeze else g
    return Gradients(weights=dws, biases=dbs), input_grad


def backward(net: Mlp, x: np.ndarray, upstream: np.ndarray) -> Tuple[Gradients, np.ndarray]:
    """Exact reverse-mode gradients for the scalar loss sum(upstream * forward(net, x))."""
    return backward_from_cache(net, forward_with_cache(net, x), upstream)


@dataclass
class AdamState:
    """First/second moments per parameter array plus the step count."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 3e-4) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], lr=lr)

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {f"m{k}": m for k, m in enumerate(self.m)}
        out.update({f"v{k}": v for k, v in enumerate(self.v)})
        out["t"] = np.array([float(self.t)])
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        self.m = [arrays[f"m{k}"].reshape(m.shape).copy() for k, m in enumerate(self.m)]
        self.v = [arrays[f"v{k}"].reshape(v.shape).copy() for k, v in enumerate(self.v)]
        self.t = int(arrays["t"][0])


def adam_step(params: List[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> List[np.ndarray]:
    """Bias-corrected Adam descent step, applied in place to ``params``.

    A non-finite gradient aborts the update before any parameter changes.
    """
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ShapeMismatchError("gradient shapes do not mirror parameters")
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("gradient", {"array": k, "step": state.t})
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        p -= state.lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + state.eps)
    return params


def polyak_update(target: Mlp, online: Mlp, tau: float) -> Mlp:
    """target <- tau * online + (1 - tau) * target, in place."""
    if not target.same_architecture(online):
        raise ArchitectureMismatchError(target.layer_dims, online.layer_dims)
    for tp, op in zip(target.params(), online.params()):
        tp *= 1.0 - tau
        tp += tau * op
    return target


def assert_finite(value: float, what: str, **diagnostics: float) -> float:
    if not np.isfinite(value):
        raise NonFiniteError(what, diagnostics)
    return value


# -- checkpoints --------------------------------------------------------------

def _sidecar(manifest_path: Path) -> Path:
    return manifest_path.with_suffix(".bin")


def save_checkpoint(path: Union[str, Path], networks: Dict[str, Mlp],
                    arrays: Optional[Dict[str, np.ndarray]] = None,
                    metadata: Optional[dict] = None) -> Path:
    """Write a JSON manifest plus a little-endian float64 sidecar block.

    Networks are stored in manifest order, each as W0, b0, W1, b1, ...
    (weights row-major); extra named ``arrays`` follow.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blocks = []
    offset = 0
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "networks": {},
        "arrays": {},
        "metadata": metadata or {},
    }
    for name, net in networks.items():
        flat = net.flat()
        manifest["networks"][name] = {
            "layer_dims": net.layer_dims,
            "hidden_activation": "relu",
            "output_activation": net.output_activation,
            "offset": offset,
            "count": int(flat.size),
        }
        blocks.append(flat)
        offset += flat.size
    for name, arr in (arrays or {}).items():
        arr = np.asarray(arr, dtype=np.float64)
        manifest["arrays"][name] = {"shape": list(arr.shape), "offset": offset, "count": int(arr.size)}
        blocks.append(arr.ravel())
        offset += arr.size
    payload = np.concatenate(blocks).astype("<f8").tobytes() if blocks else b""
    manifest["sha256"] = hashlib.sha256(payload).hexdigest()
    _sidecar(path).write_bytes(payload)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


@dataclass
class Checkpoint:
    networks: Dict[str, Mlp]
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint written by ``save_checkpoint``."""
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a geonav checkpoint")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
    payload = _sidecar(path).read_bytes()
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise ValueError(f"checksum mismatch in {_sidecar(path)}")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    networks = {}
    for name, entry in manifest["networks"].items():
        net = Mlp(entry["layer_dims"], entry["output_activation"])
        net.load_flat(values[entry["offset"]:entry["offset"] + entry["count"]])
        networks[name] = net
    arrays = {
        name: values[e["offset"]:e["offset"] + e["count"]].reshape(e["shape"]).copy()
        for name, e in manifest["arrays"].items()
    }
    return Checkpoint(networks=networks, arrays=arrays, metadata=manifest["metadata"])
