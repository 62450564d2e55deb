"""MLP generators/critics with spectral normalization, and RMSProp."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gradcore as gc
from .gradcore import DimensionError, Tensor

SIGMA_FLOOR = 1e-12


@dataclass
class SpectralState:
    """Persisted left singular vector estimate for one weight matrix."""

    u: np.ndarray  # (out, 1), unit norm
    n_iters: int = 1
    sigma: float = 1.0  # last estimate, reused when the state is frozen

    def __post_init__(self):
        if self.n_iters < 1:
            raise ValueError("n_iters must be positive")


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out, 1)
    spectral: SpectralState | None = None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Mlp:
    layers: list[DenseLayer]
    alpha: float = gc.DEFAULT_LEAKY_SLOPE

    def __post_init__(self):
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise DimensionError(
                    f"layer {i} outputs {a.out_dim} but layer {i + 1} expects {b.in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def widths(self) -> list[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def named_parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"layer{i}.weight"] = layer.weight
            params[f"layer{i}.bias"] = layer.bias
        return params

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            w, b = params[f"layer{i}.weight"], params[f"layer{i}.bias"]
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise DimensionError(f"parameter shape mismatch in layer {i}")
            layer.weight = np.array(w, dtype=np.float64)
            layer.bias = np.array(b, dtype=np.float64)

    def copy(self) -> "Mlp":
        layers = []
        for layer in self.layers:
            spec = None
            if layer.spectral is not None:
                s = layer.spectral
                spec = SpectralState(s.u.copy(), s.n_iters, s.sigma)
            layers.append(DenseLayer(layer.weight.copy(), layer.bias.copy(), spec))
        return Mlp(layers, self.alpha)


def build_mlp(
    widths: list[int],
    *,
    spectral: bool = True,
    n_power_iters: int = 1,
    alpha: float = gc.DEFAULT_LEAKY_SLOPE,
    seed: int | np.random.Generator = 0,
) -> Mlp:
    """Build and initialize an MLP with the given layer widths.

    ``widths=[2, 100, 100, 1]`` gives two hidden layers of 100 units.
    """
    layers = []
    for fan_in, fan_out in zip(widths, widths[1:]):
        spec = None
        if spectral:
            spec = SpectralState(np.ones((fan_out, 1)) / math.sqrt(fan_out), n_power_iters)
        layers.append(DenseLayer(np.zeros((fan_out, fan_in)), np.zeros((fan_out, 1)), spec))
    return init_params(Mlp(layers, alpha), seed)


def init_params(net: Mlp, seed: int | np.random.Generator) -> Mlp:
    """Glorot-uniform weights, zero biases, random unit power-iteration vectors.

    Mutates and returns ``net``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for layer in net.layers:
        fan_out, fan_in = layer.weight.shape
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        layer.weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layer.bias = np.zeros((fan_out, 1))
        if layer.spectral is not None:
            u = rng.standard_normal((fan_out, 1))
            layer.spectral.u = u / np.linalg.norm(u)
    return net


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / max(n, SIGMA_FLOOR)


def power_iteration(weight: np.ndarray, u: np.ndarray, n_iters: int) -> tuple[np.ndarray, float]:
    """Return the updated left vector and the spectral norm estimate."""
    for _ in range(n_iters):
        v = _normalize(weight.T @ u)
        u = _normalize(weight @ v)
    v = weight.T @ u
    # sigma = u^T W v / ||v|| with v = W^T u, which is ||W^T u||
    sigma = float(np.linalg.norm(v))
    return u, max(sigma, SIGMA_FLOOR)


def spectral_normalize(layer: DenseLayer, *, update: bool = True) -> np.ndarray:
    """Effective weight ``W / sigma``.

    With ``update`` the stored vector takes ``n_iters`` power-iteration steps
    first; otherwise the last sigma is reused unchanged.
    """
    state = layer.spectral
    if state is None:
        raise ValueError("layer has no spectral state")
    if update:
        state.u, state.sigma = power_iteration(layer.weight, state.u, state.n_iters)
    return layer.weight / state.sigma


def mlp_forward(
    net: Mlp,
    x,
    params: dict[str, Tensor] | None = None,
    *,
    update_spectral: bool = True,
) -> Tensor:
    """Batch forward pass; rows of ``x`` are samples.

    ``params`` supplies the leaf tensors to differentiate against (from
    :func:`parameter_leaves`); when omitted fresh constants are used.
    Sigma is treated as a constant in the backward pass.
    """
    h = gc.tensor(x)
    if h.shape[1] != net.in_dim:
        raise DimensionError(f"input has {h.shape[1]} columns, network expects {net.in_dim}")
    if params is None:
        params = parameter_leaves(net)
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        w = params[f"layer{i}.weight"]
        if layer.spectral is not None:
            spectral_normalize(layer, update=update_spectral)
            w = gc.scale(w, 1.0 / layer.spectral.sigma)
        h = gc.add(gc.matmul(h, gc.transpose(w)), gc.transpose(params[f"layer{i}.bias"]))
        if i < last:
            h = gc.leaky_relu(h, net.alpha)
    return h


def parameter_leaves(net: Mlp) -> dict[str, Tensor]:
    return {name: Tensor(value) for name, value in net.named_parameters().items()}


@dataclass
class RmsPropState:
    learning_rate: float = 2e-4
    decay: float = 0.9
    epsilon: float = 1e-8
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)


def rmsprop_step(
    state: RmsPropState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]
) -> dict[str, np.ndarray]:
    """One RMSProp update; accumulators in ``state`` are advanced in place."""
    updated = {}
    rho, lr, eps = state.decay, state.learning_rate, state.epsilon
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        acc = state.accumulators.get(name)
        if acc is None:
            acc = np.zeros_like(p)
        acc = rho * acc + (1.0 - rho) * g * g
        state.accumulators[name] = acc
        updated[name] = p - lr * g / (np.sqrt(acc) + eps)
    return updated


def sample_latent(m: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    if m <= 0 or dim <= 0:
        raise ValueError("m and dim must be positive")
    return rng.standard_normal((m, dim))


# ---------------------------------------------------------------------------
# checkpoint CSV: one row per tensor, "name,rows,cols,v0,v1,..."


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_tensor_csv(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "rows", "cols", "values"])
        for name, arr in tensors.items():
            arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
            writer.writerow([name, arr.shape[0], arr.shape[1], *map(_fmt, arr.reshape(-1))])


def read_tensor_csv(path: str | Path) -> dict[str, np.ndarray]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["name", "rows", "cols"]:
            raise ValueError(f"{path}: not a tensor checkpoint")
        for lineno, row in enumerate(reader, start=2):
            name, rows, cols = row[0], int(row[1]), int(row[2])
            values = [float(v) for v in row[3:]]
            if len(values) != rows * cols:
                raise ValueError(f"{path}:{lineno}: {name} expects {rows * cols} values")
            out[name] = np.array(values, dtype=np.float64).reshape(rows, cols)
    return out


def save_mlp(net: Mlp, path: str | Path) -> None:
    tensors = dict(net.named_parameters())
    for i, layer in enumerate(net.layers):
        if layer.spectral is not None:
            tensors[f"layer{i}.spectral_u"] = layer.spectral.u
            tensors[f"layer{i}.spectral_meta"] = np.array(
                [[layer.spectral.sigma, layer.spectral.n_iters]]
            )
    tensors["meta.alpha"] = np.array([[net.alpha]])
    write_tensor_csv(path, tensors)


def load_mlp(path: str | Path) -> Mlp:
    tensors = read_tensor_csv(path)
    layers = []
    i = 0
    while f"layer{i}.weight" in tensors:
        spec = None
        if f"layer{i}.spectral_u" in tensors:
            sigma, n_iters = tensors[f"layer{i}.spectral_meta"][0]
            spec = SpectralState(tensors[f"layer{i}.spectral_u"], int(n_iters), float(sigma))
        layers.append(DenseLayer(tensors[f"layer{i}.weight"], tensors[f"layer{i}.bias"], spec))
        i += 1
    if not layers:
        raise ValueError(f"{path}: no layers found")
    alpha = float(tensors["meta.alpha"][0, 0]) if "meta.alpha" in tensors else gc.DEFAULT_LEAKY_SLOPE
    return Mlp(layers, alpha)


def save_rmsprop(state: RmsPropState, path: str | Path) -> None:
    tensors = {"meta.hyper": np.array([[state.learning_rate, state.decay, state.epsilon]])}
    tensors.update({f"acc.{k}": v for k, v in state.accumulators.items()})
    write_tensor_csv(path, tensors)


def load_rmsprop(path: str | Path) -> RmsPropState:
    tensors = read_tensor_csv(path)
    lr, rho, eps = tensors.pop("meta.hyper")[0]
    accs = {k[len("acc."):]: v for k, v in tensors.items()}
    return RmsPropState(float(lr), float(rho), float(eps), accs)
