"""Minimal dense network engine: forward pass, reverse-mode gradients,
inverted dropout, and Adam.

The engine covers exactly the topologies this package trains: a stack of
fully connected backbone layers feeding one or more named heads (each head its
own stack). Parameters live in plain float64 numpy arrays; everything is
deterministic given an explicit random generator.
"""

import base64
import copy
from dataclasses import dataclass, field

import numpy as np

from . import jsonio

ACTIVATIONS = ("relu", "sigmoid", "linear")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """Shape and behaviour of one dense layer.

    Dropout (inverted, scale 1/(1-p)) is applied after the activation and only
    in train mode.
    """

    in_dim: int
    out_dim: int
    activation: str = "relu"
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")


@dataclass
class DenseLayer:
    """Parameters of one layer: W is (out_dim, in_dim), b is (out_dim,)."""

    W: np.ndarray
    b: np.ndarray
    spec: LayerSpec

    def copy(self) -> "DenseLayer":
        return DenseLayer(W=self.W.copy(), b=self.b.copy(), spec=self.spec)


@dataclass
class NetworkParams:
    """Backbone layers plus named head stacks; the mutable state of training."""

    backbone: list[DenseLayer]
    heads: dict[str, list[DenseLayer]]

    @property
    def input_dim(self) -> int:
        return self.backbone[0].spec.in_dim if self.backbone else next(
            iter(self.heads.values())
        )[0].spec.in_dim

    def named_layers(self) -> list[tuple[str, DenseLayer]]:
        """Stable (path, layer) listing used by the optimiser and checkpoints."""
        out = [(f"backbone.{i}", layer) for i, layer in enumerate(self.backbone)]
        for head in sorted(self.heads):
            out.extend((f"{head}.{i}", layer) for i, layer in enumerate(self.heads[head]))
        return out

    def n_parameters(self) -> int:
        return sum(l.W.size + l.b.size for _, l in self.named_layers())

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            backbone=[l.copy() for l in self.backbone],
            heads={h: [l.copy() for l in ls] for h, ls in self.heads.items()},
        )

    def all_finite(self) -> bool:
        return all(
            np.isfinite(l.W).all() and np.isfinite(l.b).all() for _, l in self.named_layers()
        )


def glorot_uniform(spec: LayerSpec, rng: np.random.Generator) -> DenseLayer:
    """Uniform Glorot weights, zero biases."""
    limit = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
    W = rng.uniform(-limit, limit, size=(spec.out_dim, spec.in_dim))
    return DenseLayer(W=W, b=np.zeros(spec.out_dim), spec=spec)


def init_network(
    backbone: list[LayerSpec],
    heads: dict[str, list[LayerSpec]],
    rng: np.random.Generator,
) -> NetworkParams:
    """Initialise backbone then heads (sorted by name) in a fixed draw order."""
    return NetworkParams(
        backbone=[glorot_uniform(s, rng) for s in backbone],
        heads={h: [glorot_uniform(s, rng) for s in heads[h]] for h in sorted(heads)},
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return _sigmoid(z)
    return z


def _activation_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class _LayerCache:
    x: np.ndarray  # layer input
    z: np.ndarray  # pre-activation
    a: np.ndarray  # post-activation (pre-dropout)
    drop: np.ndarray | None  # inverted dropout mask, train mode only


@dataclass
class ForwardCache:
    mode: str
    backbone: list[_LayerCache] = field(default_factory=list)
    heads: dict[str, list[_LayerCache]] = field(default_factory=dict)


def _run_stack(
    layers: list[DenseLayer],
    x: np.ndarray,
    mode: str,
    rng: np.random.Generator | None,
    caches: list[_LayerCache],
) -> np.ndarray:
    for layer in layers:
        if x.shape[1] != layer.spec.in_dim:
            raise ValueError(
                f"shape mismatch: input has {x.shape[1]} columns, layer expects {layer.spec.in_dim}"
            )
        # divergence surfaces as the non-finite check in forward, not as a warning
        with np.errstate(over="ignore", invalid="ignore"):
            z = x @ layer.W.T + layer.b
            a = _activate(z, layer.spec.activation)
            drop = None
            out = a
            if mode == "train" and layer.spec.dropout_rate > 0.0:
                if rng is None:
                    raise ValueError("train-mode forward with dropout requires an rng")
                keep = 1.0 - layer.spec.dropout_rate
                drop = (rng.random(a.shape) < keep).astype(np.float64) / keep
                out = a * drop
        caches.append(_LayerCache(x=x, z=z, a=a, drop=drop))
        x = out
    return x


def forward(
    params: NetworkParams,
    X: np.ndarray,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> tuple[dict[str, np.ndarray], ForwardCache]:
    """Run the network; returns per-head outputs and the backward cache.

    Infer mode is deterministic and dropout-free. Train mode applies inverted
    dropout with the supplied generator.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a batch matrix, got ndim={X.ndim}")
    cache = ForwardCache(mode=mode)
    trunk = _run_stack(params.backbone, X, mode, rng, cache.backbone)
    outputs: dict[str, np.ndarray] = {}
    for head in sorted(params.heads):
        head_caches: list[_LayerCache] = []
        outputs[head] = _run_stack(params.heads[head], trunk, mode, rng, head_caches)
        cache.heads[head] = head_caches
    for head, out in outputs.items():
        if not np.isfinite(out).all():
            raise FloatingPointError(f"non-finite activations in head {head!r}")
    return outputs, cache


def _zero_grads_like(layers: list[DenseLayer]) -> list[DenseLayer]:
    return [
        DenseLayer(W=np.zeros_like(l.W), b=np.zeros_like(l.b), spec=l.spec) for l in layers
    ]


def _backprop_stack(
    layers: list[DenseLayer],
    caches: list[_LayerCache],
    delta: np.ndarray,
    grads: list[DenseLayer],
) -> np.ndarray:
    """Propagate dL/d(stack output) to dL/d(stack input), accumulating grads."""
    for layer, c, g in zip(reversed(layers), reversed(caches), reversed(grads)):
        if delta.shape != c.a.shape:
            raise ValueError(
                f"upstream gradient shape {delta.shape} does not match activations {c.a.shape}"
            )
        if c.drop is not None:
            delta = delta * c.drop
        delta = delta * _activation_grad(layer.spec.activation, c.z, c.a)
        g.W += delta.T @ c.x
        g.b += delta.sum(axis=0)
        delta = delta @ layer.W
    return delta


def backward(
    params: NetworkParams,
    cache: ForwardCache,
    upstream: dict[str, np.ndarray],
) -> NetworkParams:
    """Reverse-mode gradients for every parameter.

    ``upstream`` maps head name to dLoss/d(head output); heads absent from it
    contribute nothing. Backbone gradients sum the contributions of all heads.
    """
    grads = NetworkParams(
        backbone=_zero_grads_like(params.backbone),
        heads={h: _zero_grads_like(ls) for h, ls in params.heads.items()},
    )
    if cache.backbone:
        trunk_delta = np.zeros_like(cache.backbone[-1].a)
    else:
        any_head = next(iter(cache.heads.values()))
        trunk_delta = np.zeros_like(any_head[0].x)
    for head, delta in upstream.items():
        if head not in params.heads:
            raise KeyError(f"unknown head {head!r}")
        trunk_delta = trunk_delta + _backprop_stack(
            params.heads[head], cache.heads[head], np.asarray(delta, dtype=np.float64),
            grads.heads[head],
        )
    _backprop_stack(params.backbone, cache.backbone, trunk_delta, grads.backbone)
    return grads


@dataclass
class AdamState:
    """First/second moment accumulators keyed like NetworkParams."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: NetworkParams, learning_rate: float = 1e-3) -> "AdamState":
        state = cls(learning_rate=learning_rate)
        for path, layer in params.named_layers():
            state.m[f"{path}.W"] = np.zeros_like(layer.W)
            state.v[f"{path}.W"] = np.zeros_like(layer.W)
            state.m[f"{path}.b"] = np.zeros_like(layer.b)
            state.v[f"{path}.b"] = np.zeros_like(layer.b)
        return state


def adam_step(
    params: NetworkParams,
    grads: NetworkParams,
    state: AdamState,
) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update, in place; returns (params, state)."""
    named_params = dict(params.named_layers())
    named_grads = dict(grads.named_layers())
    if named_params.keys() != named_grads.keys():
        raise ValueError("gradient structure does not match parameters")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for path, layer in sorted(named_params.items()):
        g_layer = named_grads[path]
        for attr, g in (("W", g_layer.W), ("b", g_layer.b)):
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient for {path}.{attr}")
            key = f"{path}.{attr}"
            m = state.m[key]
            v = state.v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            target = getattr(layer, attr)
            target -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


# ---------------------------------------------------------------------------
# Checkpoint format: JSON with a shape header and base64 float64 payloads.
# Little-endian C-order bytes; fully deterministic, so artifact hashes are
# stable across runs.
# ---------------------------------------------------------------------------

def _encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")

def _decode_array(s: str, shape: tuple[int, ...]) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").reshape(shape).astype(np.float64)


def save_checkpoint(params: NetworkParams, path, extra: dict | None = None) -> None:
    layers = []
    for full_path, layer in params.named_layers():
        layers.append({
            "path": full_path,
            "in_dim": layer.spec.in_dim,
            "out_dim": layer.spec.out_dim,
            "activation": layer.spec.activation,
            "dropout_rate": layer.spec.dropout_rate,
            "W": _encode_array(layer.W),
            "b": _encode_array(layer.b),
        })
    doc = {"version": CHECKPOINT_VERSION, "layers": layers, "extra": extra or {}}
    jsonio.dump(doc, path)


def load_checkpoint(path) -> tuple[NetworkParams, dict]:
    doc = jsonio.load(path)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    backbone: list[DenseLayer] = []
    heads: dict[str, list[DenseLayer]] = {}
    for rec in doc["layers"]:
        spec = LayerSpec(
            in_dim=int(rec["in_dim"]),
            out_dim=int(rec["out_dim"]),
            activation=rec["activation"],
            dropout_rate=float(rec["dropout_rate"]),
        )
        layer = DenseLayer(
            W=_decode_array(rec["W"], (spec.out_dim, spec.in_dim)),
            b=_decode_array(rec["b"], (spec.out_dim,)),
            spec=spec,
        )
        group, _, _ = rec["path"].rpartition(".")
        if group == "backbone":
            backbone.append(layer)
        else:
            heads.setdefault(group, []).append(layer)
    return NetworkParams(backbone=backbone, heads=heads), doc.get("extra", {})


def clone_params(params: NetworkParams) -> NetworkParams:
    return copy.deepcopy(params)
