"""REINFORCE losses, the two learning pipelines and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .agents import Messages, Receiver, Sender
from .config import RunConfig
from .optim import AdamW, EarlyStopper, clip_global_norm
from .tensor import Tensor
from .world import (
    AttributeSpace,
    ConfigurationError,
    Dataset,
    DiscriminationBatch,
    batch_rewards,
    build_discrimination_batch,
    enumerate_objects,
    split_dataset,
)

log = logging.getLogger(__name__)

STREAMS = ("init", "data", "sender", "receiver", "eval")

LOG_COLUMNS = ("step", "train_reward", "sender_loss", "receiver_loss", "entropy_s", "entropy_r",
               "val_accuracy", "val_xent")


class NumericError(RuntimeError):
    pass


def make_streams(seed: int) -> dict[str, np.random.SeedSequence]:
    """Independent named seed sequences derived from one master seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return dict(zip(STREAMS, children))


def stream_rng(streams: dict, name: str) -> np.random.Generator:
    return np.random.default_rng(streams[name])


@dataclass
class World:
    space: AttributeSpace
    dataset: Dataset
    train: Dataset
    val: Dataset
    test: Dataset

    def split(self, name: str) -> Dataset:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def build_world(cfg: RunConfig, data_rng: np.random.Generator) -> World:
    space = AttributeSpace(cfg.world.K, cfg.world.V_attr)
    ds = enumerate_objects(space)
    train, val, test = split_dataset(ds, cfg.world.split, data_rng)
    return World(space, ds, train, val, test)


def build_agents(cfg: RunConfig, init_rng: np.random.Generator) -> tuple[Sender, Receiver]:
    dim = cfg.world.K * cfg.world.V_attr
    m, g = cfg.model, cfg.game
    sender = Sender(dim, g.vocab, g.L, init_rng, hidden=m.hidden, perception_hidden=m.perception_hidden,
                    activation=m.activation)
    receiver = Receiver(dim, g.vocab, init_rng, hidden=m.hidden, perception_hidden=m.perception_hidden,
                        activation=m.activation)
    return sender, receiver


def build_optimizers(cfg: RunConfig, sender: Sender, receiver: Receiver) -> tuple[AdamW, AdamW]:
    o = cfg.optimizer
    kw = dict(betas=(o.beta1, o.beta2), eps=o.eps, weight_decay=o.weight_decay)
    return (AdamW(sender.parameters(), lr=o.eta_sender, **kw),
            AdamW(receiver.parameters(), lr=o.eta_receiver, **kw))


# ---------------------------------------------------------------------------
# episodes and losses


@dataclass
class EpisodeTrace:
    """One batch of played episodes with everything both losses need."""

    batch: DiscriminationBatch
    messages: Messages
    actions: np.ndarray
    rewards: np.ndarray
    log_pi: Tensor  # [B] log pi(m | x_s)
    log_rho: Tensor  # [B] log rho(a | m, x_r)
    entropy_s: Tensor  # [B] summed over decided steps
    entropy_r: Tensor  # [B]
    receiver_log_probs: Tensor  # [B, N]
    sender_steps: np.ndarray  # [B]


def play_episodes(sender: Sender, receiver: Receiver, batch: DiscriminationBatch,
                  rng_sender: np.random.Generator, rng_receiver: np.random.Generator) -> EpisodeTrace:
    sample = sender.generate(batch.sender_inputs(), "sample", rng_sender)
    out = receiver.act(receiver.encode(sample.messages), batch.receiver_inputs(), "sample", rng_receiver)
    rewards = batch_rewards(batch, out.actions)
    return EpisodeTrace(batch, sample.messages, out.actions, rewards, sample.log_prob, out.log_prob,
                        sample.entropy, out.entropy, out.log_probs, sample.n_steps)


def baseline_mean(rewards) -> float:
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("baseline of an empty batch")
    return float(rewards.mean())


def _policy_gradient_loss(log_prob: Tensor, entropy: Tensor, rewards, baseline: float, coef: float) -> Tensor:
    # mean of -(R - B)_sg * log p - coef * H ; minimizing ascends reward and entropy
    advantage = T.detach(Tensor(np.asarray(rewards, dtype=np.float64) - baseline))
    per_episode = T.neg(T.mul(log_prob, advantage))
    if coef:
        per_episode = per_episode - entropy * coef
    return T.mean(per_episode)


def sender_loss(trace: EpisodeTrace, baseline: float, lambda_s: float) -> Tensor:
    return _policy_gradient_loss(trace.log_pi, trace.entropy_s, trace.rewards, baseline, lambda_s)


def receiver_loss_rl(trace: EpisodeTrace, baseline: float, lambda_r: float) -> Tensor:
    return _policy_gradient_loss(trace.log_rho, trace.entropy_r, trace.rewards, baseline, lambda_r)


def receiver_loss_sl(trace: EpisodeTrace) -> Tensor:
    """Cross-entropy of the receiver's distribution against the true target position."""
    return T.neg(T.mean(T.select(trace.receiver_log_probs, trace.batch.target_index)))


# ---------------------------------------------------------------------------
# optimization


@dataclass
class StepMetrics:
    reward: float
    sender_loss: float
    receiver_loss: float
    entropy_s: float  # mean per decided step
    entropy_r: float
    grad_norm_s: float = 0.0
    grad_norm_r: float = 0.0


def train_step(sender: Sender, receiver: Receiver, batch: DiscriminationBatch, cfg: RunConfig,
               optimizers, rngs) -> StepMetrics:
    """Play the batch, form both losses, then clip and update each agent once."""
    opt_s, opt_r = optimizers
    rng_s, rng_r = rngs
    tc = cfg.training
    s_params, r_params = sender.parameters(), receiver.parameters()
    with T.Tape() as tape:
        trace = play_episodes(sender, receiver, batch, rng_s, rng_r)
        baseline = baseline_mean(trace.rewards)
        loss_s = sender_loss(trace, baseline, tc.lambda_s)
        if tc.pipeline == "RL-SL":
            loss_r = receiver_loss_sl(trace)
        else:
            loss_r = receiver_loss_rl(trace, baseline, tc.lambda_r)
        ls, lr = loss_s.item(), loss_r.item()
        if not (math.isfinite(ls) and math.isfinite(lr)):
            raise NumericError(f"non-finite loss (sender={ls}, receiver={lr}); "
                               f"mean reward {trace.rewards.mean():.4f}")
        # cross terms vanish: messages are discrete and rewards are stop-gradient
        grads = tape.backward(loss_s + loss_r, s_params + r_params)
    T.zero_grad(s_params + r_params)
    g_s, norm_s = clip_global_norm([grads[p] for p in s_params], cfg.optimizer.clip_norm)
    g_r, norm_r = clip_global_norm([grads[p] for p in r_params], cfg.optimizer.clip_norm)
    if not (math.isfinite(norm_s) and math.isfinite(norm_r)):
        raise NumericError(f"non-finite gradient norm (sender={norm_s}, receiver={norm_r})")
    opt_s.step(g_s)
    opt_r.step(g_r)
    steps = max(int(trace.sender_steps.sum()), 1)
    return StepMetrics(
        reward=float(trace.rewards.mean()),
        sender_loss=ls,
        receiver_loss=lr,
        entropy_s=float(trace.entropy_s.data.sum()) / steps,
        entropy_r=float(trace.entropy_r.data.mean()),
        grad_norm_s=norm_s,
        grad_norm_r=norm_r,
    )


@dataclass
class EvalResult:
    accuracy: float
    mean_reward: float
    xent: float
    n_episodes: int


def evaluate_greedy(sender: Sender, receiver: Receiver, split: Dataset, n_candidates: int,
                    rng: np.random.Generator, n_episodes: int = 1000) -> EvalResult:
    """Greedy sender, argmax receiver, distractors drawn from ``rng``."""
    if len(split) == 0:
        raise ConfigurationError("cannot evaluate on an empty split")
    batch = build_discrimination_batch(split, n_candidates, n_episodes, rng)
    sample = sender.generate(batch.sender_inputs(), "greedy")
    out = receiver.act(receiver.encode(sample.messages), batch.receiver_inputs(), "argmax")
    rewards = batch_rewards(batch, out.actions)
    picked = out.log_probs.data[np.arange(n_episodes), batch.target_index]
    acc = float(rewards.mean())
    return EvalResult(acc, acc, float(-picked.mean()), n_episodes)


@dataclass
class LogRow:
    step: int
    train_reward: float
    sender_loss: float
    receiver_loss: float
    entropy_s: float
    entropy_r: float
    val_accuracy: float
    val_xent: float

    def values(self) -> tuple:
        return tuple(getattr(self, c) for c in LOG_COLUMNS)


@dataclass
class TrainResult:
    config: RunConfig
    world: World
    sender: Sender
    receiver: Receiver
    rows: list[LogRow] = field(default_factory=list)
    best_state: dict = field(default_factory=dict)
    best_step: int = 0
    final_state: dict = field(default_factory=dict)
    final_step: int = 0
    stop_reason: str = "max_steps"


def agent_state(sender: Sender, receiver: Receiver) -> dict:
    return {"sender": sender.state_dict(), "receiver": receiver.state_dict()}


def eval_split_for(world: World, n_candidates: int) -> Dataset:
    """Validation split when it can host an episode, otherwise the train split."""
    return world.val if len(world.val) >= n_candidates else world.train


def train_loop(cfg: RunConfig, on_eval=None, on_step=None) -> TrainResult:
    """Repeat train_step with periodic greedy evaluation and early stopping.

    ``on_eval(row)`` is called after each evaluation; ``on_step(step, metrics)``
    after every optimizer step.
    """
    streams = make_streams(cfg.seed)
    data_rng = stream_rng(streams, "data")
    world = build_world(cfg, data_rng)
    sender, receiver = build_agents(cfg, stream_rng(streams, "init"))
    optimizers = build_optimizers(cfg, sender, receiver)
    rngs = (stream_rng(streams, "sender"), stream_rng(streams, "receiver"))
    tc, n_cand = cfg.training, cfg.game.N
    eval_split = eval_split_for(world, n_cand)

    result = TrainResult(cfg, world, sender, receiver)
    result.best_state = agent_state(sender, receiver)
    stopper = EarlyStopper(tc.patience)
    window: list[StepMetrics] = []
    step = 0
    for step in range(1, tc.max_steps + 1):
        batch = build_discrimination_batch(world.train, n_cand, tc.batch_size, data_rng)
        metrics = train_step(sender, receiver, batch, cfg, optimizers, rngs)
        window.append(metrics)
        if on_step is not None:
            on_step(step, metrics)
        if step % tc.eval_every and step != tc.max_steps:
            continue
        ev = evaluate_greedy(sender, receiver, eval_split, n_cand, stream_rng(streams, "eval"), tc.eval_episodes)
        row = LogRow(
            step=step,
            train_reward=float(np.mean([m.reward for m in window])),
            sender_loss=float(np.mean([m.sender_loss for m in window])),
            receiver_loss=float(np.mean([m.receiver_loss for m in window])),
            entropy_s=float(np.mean([m.entropy_s for m in window])),
            entropy_r=float(np.mean([m.entropy_r for m in window])),
            val_accuracy=ev.accuracy,
            val_xent=ev.xent,
        )
        window = []
        result.rows.append(row)
        log.info("step %d reward %.3f val_acc %.3f val_xent %.4f", step, row.train_reward, ev.accuracy, ev.xent)
        if on_eval is not None:
            on_eval(row)
        stop, improved = stopper.observe(ev.xent)
        if stopper.nan_flagged:
            log.warning("validation loss is NaN at step %d", step)
        if improved:
            result.best_state = agent_state(sender, receiver)
            result.best_step = step
        if tc.target_accuracy is not None and ev.accuracy >= tc.target_accuracy:
            result.stop_reason = "target_accuracy"
            break
        if stop:
            result.stop_reason = "early_stopping"
            break
    result.final_state = agent_state(sender, receiver)
    result.final_step = step
    return result
