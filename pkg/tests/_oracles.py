"""Independent reference computations shared by the unit and acceptance tests."""

from types import SimpleNamespace

import numpy as np

from emergence import tensor as T
from emergence.agents import Messages, Sender
from emergence.training import sender_loss


def central_difference(f, params, eps=1e-5):
    """Central finite-difference gradient of scalar f() w.r.t. each parameter's data."""
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat, gflat = p.data.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            hi = f()
            flat[i] = old - eps
            lo = f()
            flat[i] = old
            gflat[i] = (hi - lo) / (2 * eps)
        out.append(g)
    return out


def autodiff(f_tensor, params):
    """Gradients of a Tensor-valued scalar function via the tape."""
    with T.Tape() as tape:
        loss = f_tensor()
        grads = tape.backward(loss, params)
    T.zero_grad(params)
    return [grads[p] for p in params]


def max_rel_error(a_list, n_list):
    """max |a - n| / max(1, |n|) over every entry."""
    worst = 0.0
    for a, n in zip(a_list, n_list):
        worst = max(worst, float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(n)), initial=0.0)))
    return worst


# ---------------------------------------------------------------------------
# the enumerable toy game: one object, two content symbols, L=1, a receiver
# that succeeds exactly when the message is symbol 1

TOY_MESSAGES = [(0,), (1,), (2,)]  # immediate EOS, "1", "2"
TOY_REWARD = np.array([0.0, 1.0, 0.0])


def toy_sender(seed=3, hidden=8):
    return Sender(1, 2, 1, np.random.default_rng(seed), hidden=hidden, perception_hidden=8)


def toy_inputs(n=1):
    return np.ones((n, 1))


def toy_log_probs(sender):
    msgs = Messages.from_tuples(TOY_MESSAGES, 1)
    return sender.score(toy_inputs(3), msgs).log_prob


def exact_expected_reward_grad(sender):
    """Gradient of E[R] = sum_m pi(m) R(m), differentiated as an expectation."""
    params = sender.parameters()
    return autodiff(lambda: T.sum(T.exp(toy_log_probs(sender)) * TOY_REWARD), params)


def reinforce_grad(sender, messages, rewards, baseline, lambda_s=0.0, weights=None):
    """Ascent direction -grad(sender_loss) on a batch of given messages.

    With ``weights`` the per-message estimates are combined as a weighted sum
    (probability weighting for exact enumeration) instead of a batch mean.
    """
    params = sender.parameters()
    msgs = Messages.from_tuples(messages, 1)
    n = len(messages)
    with T.Tape() as tape:
        sample = sender.score(toy_inputs(n), msgs)
        trace = SimpleNamespace(log_pi=sample.log_prob, entropy_s=sample.entropy,
                                rewards=np.asarray(rewards, dtype=np.float64))
        if weights is None:
            loss = sender_loss(trace, baseline, lambda_s)
        else:
            # sender_loss averages; rescale so each row carries its own weight
            scale = T.Tensor(np.asarray(weights, dtype=np.float64) * n)
            per_row = T.neg(T.mul(sample.log_prob, T.Tensor(trace.rewards - baseline)))
            loss = T.mean(per_row * scale)
        grads = tape.backward(loss, params)
    T.zero_grad(params)
    return [-grads[p] for p in params]


def probability_weighted_reinforce(sender, baseline):
    probs = np.exp(toy_log_probs(sender).data)
    return reinforce_grad(sender, TOY_MESSAGES, TOY_REWARD, baseline, weights=probs)


def toy_expected_reward(sender):
    return float(np.exp(toy_log_probs(sender).data) @ TOY_REWARD)


def sample_toy_batch(sender, batch, rng):
    sample = sender.generate(toy_inputs(batch), "sample", rng)
    msgs = sample.messages.as_tuples()
    rewards = np.array([TOY_REWARD[m[0]] for m in msgs])
    return msgs, rewards


def flat(grads):
    return np.concatenate([g.reshape(-1) for g in grads])
