"""Sender and receiver agents for the discrimination game.

Messages use symbol id 0 for EOS and ids 1..vocab_size for content symbols;
the embedding tables carry one extra row (vocab_size + 1) for BOS. A batch of
messages is a :class:`Messages` triple ``(symbols, lengths, eos)`` where
``symbols`` is zero-padded past each row's content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import MLP, Embedding, GRUCell, Linear, Module
from .tensor import DimensionError, Tensor

EOS = 0


@dataclass
class Messages:
    symbols: np.ndarray  # [B, L] int, content then zeros
    lengths: np.ndarray  # [B] content symbols before EOS
    eos: np.ndarray  # [B] bool, whether an EOS token terminates the row

    def __len__(self) -> int:
        return len(self.lengths)

    @property
    def max_len(self) -> int:
        return self.symbols.shape[1]

    def as_tuples(self) -> list[tuple[int, ...]]:
        out = []
        for row, n, e in zip(self.symbols, self.lengths, self.eos):
            msg = tuple(int(s) for s in row[:n])
            out.append(msg + (EOS,) if e else msg)
        return out

    @classmethod
    def from_tuples(cls, messages, max_len: int, vocab_size: int | None = None) -> "Messages":
        b = len(messages)
        symbols = np.zeros((b, max_len), dtype=np.int64)
        lengths = np.zeros(b, dtype=np.int64)
        eos = np.zeros(b, dtype=bool)
        for i, msg in enumerate(messages):
            msg = list(msg)
            if msg and msg[-1] == EOS:
                eos[i] = True
                msg = msg[:-1]
            if EOS in msg:
                raise ValueError(f"message {i}: symbols follow EOS")
            if len(msg) > max_len:
                raise ValueError(f"message {i}: {len(msg)} symbols exceeds max length {max_len}")
            if vocab_size is not None and any(not 1 <= s <= vocab_size for s in msg):
                raise IndexError(f"message {i}: symbol out of range [1, {vocab_size}]")
            symbols[i, : len(msg)] = msg
            lengths[i] = len(msg)
        return cls(symbols, lengths, eos)


def message_effective_length(message) -> int:
    """Content symbols before EOS."""
    n = 0
    for s in message:
        if s == EOS:
            break
        n += 1
    return n


def _unique_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # 1-D sort on a fixed random projection, verified exactly; falls back to a row sort
    key = x @ np.random.default_rng(0x5EED).random(x.shape[1])
    _, first, inverse = np.unique(key, return_index=True, return_inverse=True)
    uniq = x[first]
    if not np.array_equal(uniq[inverse], x):
        uniq, inverse = np.unique(x, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


def _perceive(mlp: MLP, x: np.ndarray) -> Tensor:
    # duplicate inputs share one forward row; gradients scatter back through the gather
    uniq, inverse = _unique_rows(x)
    return T.gather_rows(mlp(Tensor(uniq)), inverse)


def _categorical(log_probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(np.exp(log_probs), axis=1)
    u = rng.random(len(log_probs))[:, None] * cdf[:, -1:]
    return np.minimum((cdf < u).sum(axis=1), log_probs.shape[1] - 1)


@dataclass
class PolicySample:
    messages: Messages
    log_prob: Tensor  # [B], summed over decided steps
    entropy: Tensor  # [B], summed per-step entropies
    n_steps: np.ndarray  # [B] number of decided steps
    greedy: bool


class Sender(Module):
    def __init__(self, input_dim: int, vocab_size: int, max_len: int, rng: np.random.Generator,
                 hidden: int = 64, perception_hidden: int = 128, activation: str = "relu"):
        self.input_dim = input_dim
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.perception = MLP([input_dim, perception_hidden, hidden], rng, activation)
        self.init_proj = Linear(hidden, hidden, rng)
        self.embedding = Embedding(vocab_size + 2, hidden, rng)
        self.cell = GRUCell(hidden, hidden, rng)
        self.output = Linear(hidden, vocab_size + 1, rng)

    @property
    def bos(self) -> int:
        return self.vocab_size + 1

    def generate(self, x_s, mode: str = "sample", rng: np.random.Generator | None = None) -> PolicySample:
        return sender_generate(self, x_s, mode, rng)

    def score(self, x_s, messages: Messages) -> PolicySample:
        return sender_score(self, x_s, messages)


def _sender_rollout(sender: Sender, x, mode: str, rng, forced: Messages | None) -> PolicySample:
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != sender.input_dim:
        raise DimensionError(f"sender input: expected [batch, {sender.input_dim}], got {x.shape}")
    if mode not in ("sample", "greedy", "forced"):
        raise ValueError(f"unknown generation mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sampling needs an rng")
    b, max_len = x.shape[0], sender.max_len

    h = T.tanh(sender.init_proj(_perceive(sender.perception, x)))
    prev = np.full(b, sender.bos, dtype=np.int64)
    alive = np.ones(b, dtype=bool)
    symbols = np.zeros((b, max_len), dtype=np.int64)
    lengths = np.zeros(b, dtype=np.int64)
    n_steps = np.zeros(b, dtype=np.int64)
    log_prob = entropy = None

    for t in range(max_len):
        if not alive.any():
            break
        h = sender.cell(sender.embedding(prev), h)
        logits = sender.output(h)
        lp = T.log_softmax(logits)
        if mode == "forced":
            choice = np.where(t < forced.lengths, forced.symbols[:, t], EOS)
        elif mode == "greedy":
            choice = lp.data.argmax(axis=1)
        else:
            choice = _categorical(lp.data, rng)
        choice = np.where(alive, choice, EOS)
        mask = alive.astype(np.float64)
        step_lp = T.select(lp, choice) * mask
        step_h = T.entropy_categorical(logits) * mask
        log_prob = step_lp if log_prob is None else log_prob + step_lp
        entropy = step_h if entropy is None else entropy + step_h
        n_steps += alive

        content = alive & (choice != EOS)
        symbols[content, t] = choice[content]
        lengths += content
        alive = content
        prev = np.where(content, choice, EOS)

    # a row still alive here used all max_len symbols; its EOS is forced, not decided
    eos = lengths < max_len
    if log_prob is None:
        log_prob = T.Tensor(np.zeros(b))
        entropy = T.Tensor(np.zeros(b))
    return PolicySample(Messages(symbols, lengths, eos), log_prob, entropy, n_steps, mode == "greedy")


def sender_generate(sender: Sender, x_s, mode: str = "sample", rng=None) -> PolicySample:
    """Autoregressive generation, one categorical decision per step.

    Stops on EOS or after ``max_len`` content symbols. Log-probabilities and
    entropies are accumulated over the decided steps only.
    """
    return _sender_rollout(sender, x_s, mode, rng, None)


def sender_score(sender: Sender, x_s, messages: Messages) -> PolicySample:
    """Teacher-forced log-probability of given messages (same op sequence as sampling)."""
    if messages.max_len != sender.max_len:
        raise DimensionError(f"messages padded to {messages.max_len}, sender max length is {sender.max_len}")
    ok = messages.eos | (messages.lengths == sender.max_len)
    if not ok.all():
        raise ValueError("a sender message shorter than max length must end with EOS")
    return _sender_rollout(sender, x_s, "forced", None, messages)


@dataclass
class ReceiverOutput:
    actions: np.ndarray  # [B]
    log_prob: Tensor  # [B] log-probability of the chosen action
    entropy: Tensor  # [B]
    log_probs: Tensor  # [B, N]


class Receiver(Module):
    def __init__(self, input_dim: int, vocab_size: int, rng: np.random.Generator,
                 hidden: int = 64, perception_hidden: int = 128, activation: str = "relu"):
        self.input_dim = input_dim
        self.vocab_size = vocab_size
        self.hidden = hidden
        self.embedding = Embedding(vocab_size + 2, hidden, rng)
        self.cell = GRUCell(hidden, hidden, rng)
        self.perception = MLP([input_dim, perception_hidden, hidden], rng, activation)
        self.action = Linear(hidden, hidden, rng)

    def encode(self, messages: Messages) -> Tensor:
        return receiver_encode_message(self, messages)

    def act(self, encoding: Tensor, candidates, mode: str = "sample", rng=None) -> ReceiverOutput:
        return receiver_act(self, encoding, candidates, mode, rng)


def receiver_encode_message(receiver: Receiver, messages: Messages) -> Tensor:
    """Final GRU state after reading each message (EOS included when present)."""
    symbols = messages.symbols
    if symbols.size and (symbols.min() < 0 or symbols.max() > receiver.vocab_size):
        raise IndexError(f"message symbol out of range [0, {receiver.vocab_size}]")
    b = len(messages)
    n_inputs = messages.lengths + messages.eos
    h = Tensor(np.zeros((b, receiver.hidden)))
    for t in range(int(n_inputs.max()) if b else 0):
        h_new = receiver.cell(receiver.embedding(symbols[:, t]), h)
        active = t < n_inputs
        if active.all():
            h = h_new
        else:
            mask = np.repeat(active.astype(np.float64)[:, None], receiver.hidden, axis=1)
            h = h + (h_new - h) * mask
    return h


def receiver_act(receiver: Receiver, encoding: Tensor, candidates, mode: str = "sample", rng=None) -> ReceiverOutput:
    """Score candidates by dot product with the projected message, then choose."""
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 3 or candidates.shape[2] != receiver.input_dim:
        raise DimensionError(f"candidates: expected [batch, N, {receiver.input_dim}], got {candidates.shape}")
    b, n, _ = candidates.shape
    if encoding.shape != (b, receiver.hidden):
        raise DimensionError(f"encoding {encoding.shape} does not match {b} episodes of hidden size {receiver.hidden}")
    if n < 2:
        raise DimensionError(f"need at least 2 candidates, got {n}")
    reps = _perceive(receiver.perception, candidates.reshape(b * n, -1))
    query = T.repeat_rows(receiver.action(encoding), n)
    scores = T.reshape(T.sum(query * reps, axis=1), (b, n))
    lp = T.log_softmax(scores)
    if mode in ("argmax", "greedy"):
        actions = lp.data.argmax(axis=1)
    elif mode == "sample":
        if rng is None:
            raise ValueError("sampling needs an rng")
        actions = _categorical(lp.data, rng)
    else:
        raise ValueError(f"unknown action mode {mode!r}")
    return ReceiverOutput(actions, T.select(lp, actions), T.entropy_categorical(scores), lp)


def count_messages(vocab_size: int, max_len: int) -> int:
    """Distinct sender messages: content length 0..max_len, EOS implied below max_len."""
    return sum(vocab_size**k for k in range(max_len + 1))
