"""Parameterized layers: linear, MLP, GRU cell and symbol embeddings."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError(f"layer dimensions must be positive, got out={fan_out}, in={fan_in}")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class Module:
    """Parameters are discovered from attributes, in assignment order."""

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        items = []
        for name, value in self.__dict__.items():
            if isinstance(value, Tensor) and value.requires_grad:
                items.append((prefix + name, value))
            elif isinstance(value, Module):
                items.extend(value.named_parameters(prefix + name + "."))
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, m in enumerate(value):
                    items.extend(m.named_parameters(f"{prefix}{name}.{i}."))
        return items

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        bad = [
            f"{name}: expected {own[name].shape}, found {tuple(np.shape(state[name]))}"
            for name in own
            if name in state and tuple(np.shape(state[name])) != own[name].shape
        ]
        if missing or extra or bad:
            parts = []
            if missing:
                parts.append(f"missing {missing}")
            if extra:
                parts.append(f"unexpected {extra}")
            if bad:
                parts.append("shape mismatch: " + "; ".join(bad))
            raise DimensionError("state does not match module: " + ", ".join(parts))
        for name, p in own.items():
            p.data = np.array(state[name], dtype=np.float64)
            p.grad = np.zeros_like(p.data)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.W = T.parameter(xavier_uniform(rng, out_dim, in_dim))
        self.b = T.parameter(np.zeros(out_dim))

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.W, self.b)


class MLP(Module):
    """Stacked affine layers with an activation between them (none after the last)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, activation: str = "tanh"):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_forward(self.layers, self.activation, x)


def mlp_forward(layers: list[Linear], activation: str, x: Tensor) -> Tensor:
    for i, layer in enumerate(layers):
        if x.shape[-1] != layer.in_dim:
            raise DimensionError(f"layer {i} expects {layer.in_dim} inputs, got shape {x.shape}")
        x = layer(x)
        if i < len(layers) - 1:
            x = T.activation(activation, x)
    return x


class GRUCell(Module):
    """Gated recurrent unit.

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    h~ = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * h~
    """

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden = hidden
        for gate in ("z", "r", "h"):
            setattr(self, f"W_{gate}", T.parameter(xavier_uniform(rng, hidden, input_dim)))
            setattr(self, f"U_{gate}", T.parameter(xavier_uniform(rng, hidden, hidden)))
            setattr(self, f"b_{gate}", T.parameter(np.zeros(hidden)))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return gru_step(self, x, h)


def gru_step(cell: GRUCell, x: Tensor, h: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] != cell.input_dim:
        raise DimensionError(f"GRU input: expected [batch, {cell.input_dim}], got {x.shape}")
    if h.shape != (x.shape[0], cell.hidden):
        raise DimensionError(f"GRU state: expected [{x.shape[0]}, {cell.hidden}], got {h.shape}")
    d = cell.hidden
    # the three input projections and the two gate recurrences share a matmul each
    x_proj = T.linear(x, T.concat([cell.W_z, cell.W_r, cell.W_h]), T.concat([cell.b_z, cell.b_r, cell.b_h]))
    gates = T.sigmoid(T.slice_cols(x_proj, 0, 2 * d) + T.linear(h, T.concat([cell.U_z, cell.U_r])))
    z = T.slice_cols(gates, 0, d)
    r = T.slice_cols(gates, d, 2 * d)
    cand = T.tanh(T.slice_cols(x_proj, 2 * d, 3 * d) + T.linear(r * h, cell.U_h))
    return h + z * (cand - h)


class Embedding(Module):
    def __init__(self, rows: int, dim: int, rng: np.random.Generator):
        self.table = T.parameter(xavier_uniform(rng, rows, dim))

    @property
    def rows(self) -> int:
        return self.table.shape[0]

    def __call__(self, ids) -> Tensor:
        return embed_lookup(self, ids)


def embed_lookup(emb: Embedding, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= emb.rows):
        raise IndexError(f"symbol id out of range for an embedding table with {emb.rows} rows")
    return T.gather_rows(emb.table, ids)


def gru_parameter_count(input_dim: int, hidden: int) -> int:
    return 3 * (hidden * input_dim + hidden * hidden + hidden)
