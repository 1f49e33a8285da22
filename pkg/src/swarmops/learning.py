"""Policy and value networks with hand-written gradients, and the
clipped-surrogate update that trains them.

All drones share one actor and one critic. The actor maps a boundary
observation to action probabilities; the critic scores (observation,
action) pairs, or observations alone in its state-value variant. Both
are two-hidden-layer tanh networks in plain numpy with explicit
forward caches and backward passes, verified against finite
differences in the test suite. Updates happen once per episode: sample
a minibatch, step the critic against the mean squared one-step
advantage, step the actor up the clipped surrogate, then refresh the
frozen old-policy snapshot.
"""

from __future__ import annotations

import copy
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .environment import Transition


class LearningError(RuntimeError):
    """Bad shapes, empty buffers, or malformed checkpoints."""


@dataclass
class LearningConfig:
    """Hyperparameters; defaults follow the experiment setup."""

    episodes: int = 1000
    gamma: float = 0.95
    clip_epsilon: float = 0.2
    batch_size: int = 64
    buffer_capacity: int = 4096
    update_steps: int = 4      # minibatch steps per episode-end update
    actor_lr: float = 0.02
    critic_lr: float = 0.05
    grad_clip: float = 5.0
    hidden_size: int = 64
    recurrent: bool = False
    # "v" scores the observation alone; "q" scores (obs, action). The
    # advantage r + gamma*critic(next) - critic(now) only carries an
    # action preference under "v": with a fitted Q the same expression
    # is a SARSA residual with zero conditional mean for every action,
    # and the policy gradient starves.
    critic_type: str = "v"
    seed: int = 0
    keep_best: bool = True     # return the peak rolling-reward snapshot
    snapshot_window: int = 50

    def __post_init__(self) -> None:
        if self.critic_type not in ("q", "v"):
            raise LearningError("critic_type must be 'q' or 'v'")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise LearningError("clip_epsilon must lie in (0, 1)")
        if not 0.0 <= self.gamma <= 1.0:
            raise LearningError("gamma must lie in [0, 1]")


class Mlp:
    """Fully connected network, tanh hidden layers, linear head."""

    def __init__(self, layer_sizes: Sequence[int], rng: np.random.Generator) -> None:
        if len(layer_sizes) < 2:
            raise LearningError("need at least input and output sizes")
        self.layer_sizes = list(layer_sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fin, fout in zip(layer_sizes, layer_sizes[1:]):
            scale = 1.0 / np.sqrt(fin)
            self.weights.append(rng.uniform(-scale, scale, size=(fin, fout)))
            self.biases.append(np.zeros(fout))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns (head output, activations); activations[0] is the input."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            acts.append(h)
        return h, acts

    def backward(self, acts: list[np.ndarray], dout: np.ndarray,
                 dhidden: dict[int, np.ndarray] | None = None,
                 ) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
        """Gradients for one forward pass.

        dout is the loss gradient at the head. dhidden optionally injects
        extra gradient at activation index i (used for backprop through
        time). Returns (weight grads, bias grads, input gradient).
        """
        n = len(self.weights)
        gw = [np.empty(0)] * n
        gb = [np.empty(0)] * n
        delta = dout
        for i in range(n - 1, -1, -1):
            if i != n - 1:
                if dhidden is not None and (i + 1) in dhidden:
                    delta = delta + dhidden[i + 1]
                delta = delta * (1.0 - acts[i + 1] ** 2)
            gw[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        return gw, gb, delta

    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def set_params(self, arrays: Sequence[np.ndarray]) -> None:
        n = len(self.weights)
        for i in range(n):
            self.weights[i][...] = arrays[i]
            self.biases[i][...] = arrays[n + i]

    def clone(self) -> "Mlp":
        other = object.__new__(Mlp)
        other.layer_sizes = list(self.layer_sizes)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other


def masked_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax with optional 0/1 legality mask."""
    z = np.array(logits, dtype=float, copy=True)
    if mask is not None:
        z = np.where(mask > 0, z, -1e30)
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    if mask is not None:
        e = e * (mask > 0)
    return e / e.sum(axis=-1, keepdims=True)


class PolicyNetwork:
    """Actor: observation in, action distribution out.

    With recurrent=True the input is the observation concatenated with
    the previous hidden state and the first tanh layer doubles as an
    Elman cell; step() threads the state. Sampled transitions store the
    concatenated input, so the update code is identical either way (the
    stored state is treated as a constant input, a one-step truncation).
    """

    def __init__(self, obs_dim: int, n_actions: int, hidden: int,
                 rng: np.random.Generator, *, recurrent: bool = False) -> None:
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden = hidden
        self.recurrent = recurrent
        in_dim = obs_dim + (hidden if recurrent else 0)
        self.net = Mlp([in_dim, hidden, hidden, n_actions], rng)

    def initial_hidden(self) -> np.ndarray:
        return np.zeros(self.hidden)

    def network_input(self, obs: np.ndarray, h_prev: np.ndarray | None = None) -> np.ndarray:
        if not self.recurrent:
            return obs
        if h_prev is None:
            h_prev = np.zeros(obs.shape[:-1] + (self.hidden,))
        return np.concatenate([obs, h_prev], axis=-1)

    def probs(self, net_input: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        x = np.atleast_2d(net_input)
        logits, _ = self.net.forward(x)
        p = masked_softmax(logits, None if mask is None else np.atleast_2d(mask))
        return p if net_input.ndim > 1 else p[0]

    def step(self, obs: np.ndarray, h_prev: np.ndarray | None = None,
             mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray | None]:
        """One decision: (action probabilities, new hidden state or None)."""
        x = self.network_input(obs, h_prev)
        logits, acts = self.net.forward(np.atleast_2d(x))
        p = masked_softmax(logits, None if mask is None else np.atleast_2d(mask))[0]
        h_new = acts[1][0] if self.recurrent else None
        return p, h_new

    def unroll(self, obs_seq: np.ndarray, h0: np.ndarray | None = None,
               ) -> tuple[np.ndarray, list[list[np.ndarray]]]:
        """Sequence forward for the recurrent cell; returns (logits, caches)."""
        if not self.recurrent:
            raise LearningError("unroll is only defined for the recurrent actor")
        h = np.atleast_2d(h0 if h0 is not None else self.initial_hidden())
        logits_seq = []
        caches = []
        for t in range(obs_seq.shape[0]):
            x = np.concatenate([np.atleast_2d(obs_seq[t]), h], axis=1)
            logits, acts = self.net.forward(x)
            logits_seq.append(logits[0])
            caches.append(acts)
            h = acts[1]
        return np.array(logits_seq), caches

    def unroll_backward(self, caches: list[list[np.ndarray]], dlogits_seq: np.ndarray,
                        ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Backprop through time over an unroll; returns summed gradients."""
        n = len(self.net.weights)
        gw_total = [np.zeros_like(w) for w in self.net.weights]
        gb_total = [np.zeros_like(b) for b in self.net.biases]
        dh_next = np.zeros((1, self.hidden))
        for t in range(len(caches) - 1, -1, -1):
            gw, gb, dx = self.net.backward(
                caches[t], np.atleast_2d(dlogits_seq[t]), dhidden={1: dh_next})
            for i in range(n):
                gw_total[i] += gw[i]
                gb_total[i] += gb[i]
            dh_next = dx[:, self.obs_dim:]
        return gw_total, gb_total

    def clone(self) -> "PolicyNetwork":
        other = copy.copy(self)
        other.net = self.net.clone()
        return other


class ValueNetwork:
    """Critic: (observation, action) in the Q variant, observation alone
    in the V variant; scalar value out."""

    def __init__(self, obs_dim: int, n_actions: int, hidden: int,
                 rng: np.random.Generator, *, critic_type: str = "q") -> None:
        if critic_type not in ("q", "v"):
            raise LearningError("critic_type must be 'q' or 'v'")
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.critic_type = critic_type
        in_dim = obs_dim + (n_actions if critic_type == "q" else 0)
        self.net = Mlp([in_dim, hidden, hidden, 1], rng)

    def features(self, obs: np.ndarray, actions: np.ndarray | None) -> np.ndarray:
        obs = np.atleast_2d(obs)
        if self.critic_type == "v":
            return obs
        if actions is None:
            raise LearningError("the q critic needs actions")
        onehot = np.zeros((obs.shape[0], self.n_actions))
        onehot[np.arange(obs.shape[0]), np.asarray(actions, dtype=int)] = 1.0
        return np.concatenate([obs, onehot], axis=1)

    def value(self, obs: np.ndarray, actions: np.ndarray | None) -> np.ndarray:
        out, _ = self.net.forward(self.features(obs, actions))
        return out[:, 0]

    def clone(self) -> "ValueNetwork":
        other = copy.copy(self)
        other.net = self.net.clone()
        return other


class ReplayBuffer:
    """Bounded FIFO of transitions with uniform no-replacement sampling."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise LearningError("buffer capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def push(self, item: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
            self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def sample(self, rng: np.random.Generator, k: int) -> list[Transition]:
        if k > len(self._items):
            raise LearningError(f"cannot sample {k} of {len(self._items)} transitions")
        idx = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[i] for i in idx]

    def clear(self) -> None:
        self._items.clear()
        self._next = 0


def advantage(rewards: np.ndarray, q_next: np.ndarray, q_now: np.ndarray,
              gamma: float) -> np.ndarray:
    """One-step advantage: r + gamma * q(next) - q(now); q_next is zero
    on terminal transitions (the caller masks it)."""
    return rewards + gamma * q_next - q_now


def policy_ratio(p_new: np.ndarray, p_old: np.ndarray) -> np.ndarray:
    """Elementwise probability ratio with a tiny denominator floor."""
    return p_new / np.maximum(p_old, 1e-12)


def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray, clip_epsilon: float) -> np.ndarray:
    """Per-sample clipped objective min(r*A, clip(r)*A)."""
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return np.minimum(ratio * adv, clipped * adv)


def _clip_gradients(grads: list[np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((g ** 2).sum()) for g in grads)))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


@dataclass
class UpdateStats:
    actor_loss: float
    critic_loss: float
    mean_ratio: float
    actor_grad_norm: float
    critic_grad_norm: float


def _batch_arrays(batch: Sequence[Transition], n_actions: int):
    obs = np.stack([t.observation for t in batch])
    act = np.array([t.action for t in batch], dtype=int)
    rew = np.array([t.reward for t in batch])
    nxt = np.stack([t.next_observation for t in batch])
    term = np.array([t.terminal for t in batch])
    nxt_act = np.array([0 if t.next_action is None else t.next_action for t in batch], dtype=int)
    if any(t.action_mask is not None for t in batch):
        mask = np.stack([t.action_mask if t.action_mask is not None else np.ones(n_actions)
                         for t in batch])
        nxt_mask = np.stack([t.next_action_mask if t.next_action_mask is not None
                             else np.ones(n_actions) for t in batch])
    else:
        mask = nxt_mask = None
    return obs, act, rew, nxt, term, nxt_act, mask, nxt_mask


def critic_loss_on_batch(critic: ValueNetwork, obs: np.ndarray, act: np.ndarray,
                         targets: np.ndarray) -> float:
    """Mean squared advantage against frozen targets; finite-difference anchor."""
    q = critic.value(obs, act)
    return float(np.mean((q - targets) ** 2))


def actor_loss_on_batch(actor: PolicyNetwork, obs: np.ndarray, act: np.ndarray,
                        p_old: np.ndarray, adv: np.ndarray, clip_epsilon: float,
                        mask: np.ndarray | None = None) -> float:
    """Negated mean clipped surrogate with frozen advantages and old probs."""
    probs = actor.probs(obs, mask)
    p_new = probs[np.arange(len(act)), act]
    s = clipped_surrogate(policy_ratio(p_new, p_old), adv, clip_epsilon)
    return float(-np.mean(s))


def update(buffer: ReplayBuffer, actor: PolicyNetwork, actor_old: PolicyNetwork,
           critic: ValueNetwork, cfg: LearningConfig, rng: np.random.Generator,
           ) -> UpdateStats:
    """One end-of-episode update: minibatch steps, then old <- new.

    The critic descends the mean squared one-step advantage with the
    bootstrap target held constant. The actor ascends the clipped
    surrogate with advantages and old-policy probabilities frozen.
    Gradients are clipped by global norm before plain SGD steps.
    """
    if len(buffer) < cfg.batch_size:
        raise LearningError("buffer holds fewer transitions than one batch")
    stats = UpdateStats(0.0, 0.0, 0.0, 0.0, 0.0)
    for _ in range(max(cfg.update_steps, 1)):
        batch = buffer.sample(rng, cfg.batch_size)
        obs, act, rew, nxt, term, nxt_act, mask, nxt_mask = _batch_arrays(batch, actor.n_actions)
        n = len(batch)

        # Critic: semi-gradient TD step on the Q (or V) head.
        feats = critic.features(obs, act if critic.critic_type == "q" else None)
        q_now_out, cache = critic.net.forward(feats)
        q_now = q_now_out[:, 0]
        q_next = critic.value(nxt, nxt_act if critic.critic_type == "q" else None)
        q_next = np.where(term, 0.0, q_next)
        adv = advantage(rew, q_next, q_now, cfg.gamma)
        targets = rew + cfg.gamma * q_next
        critic_loss = float(np.mean((q_now - targets) ** 2))
        dout = (2.0 / n) * (q_now - targets)[:, None]
        gw, gb, _ = critic.net.backward(cache, dout)
        cgrads = gw + gb
        cnorm = _clip_gradients(cgrads, cfg.grad_clip)
        for p, g in zip(critic.net.params(), cgrads):
            p -= cfg.critic_lr * g

        # Actor: ascend the clipped surrogate (descend its negation).
        p_old_all = actor_old.probs(obs, mask)
        p_old = p_old_all[np.arange(n), act]
        logits, acache = actor.net.forward(obs)
        probs = masked_softmax(logits, mask)
        p_new = probs[np.arange(n), act]
        ratio = policy_ratio(p_new, p_old)
        u_plain = ratio * adv
        u_clip = np.clip(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv
        surrogate = np.minimum(u_plain, u_clip)
        actor_loss = float(-np.mean(surrogate))
        # d surrogate / d ratio is adv where the unclipped branch is active.
        active = (u_plain <= u_clip).astype(float)
        dratio = -(active * adv) / n
        dp_new = dratio / np.maximum(p_old, 1e-12)
        # Through the softmax: d p_a / d logit_j = p_a (1[a=j] - p_j).
        dlogits = dp_new[:, None] * p_new[:, None] * (-probs)
        dlogits[np.arange(n), act] += dp_new * p_new
        gw, gb, _ = actor.net.backward(acache, dlogits)
        agrads = gw + gb
        anorm = _clip_gradients(agrads, cfg.grad_clip)
        for p, g in zip(actor.net.params(), agrads):
            p -= cfg.actor_lr * g

        stats = UpdateStats(actor_loss=actor_loss, critic_loss=critic_loss,
                            mean_ratio=float(ratio.mean()),
                            actor_grad_norm=anorm, critic_grad_norm=cnorm)

    actor_old.net.set_params(actor.net.params())
    return stats


@dataclass
class TrainResult:
    actor: PolicyNetwork
    critic: ValueNetwork
    curves: list[dict] = field(default_factory=list)


EpisodeFn = Callable[[int], tuple[object, list[Transition]]]


def train_loop(make_episode: EpisodeFn, actor: PolicyNetwork, critic: ValueNetwork,
               cfg: LearningConfig, rng: np.random.Generator,
               progress: Callable[[int, dict], None] | None = None) -> TrainResult:
    """Generic episode loop: roll out, accumulate, update, discard.

    make_episode(i) runs one episode with the current actor (captured by
    the caller's closure) and returns (metrics, transitions); metrics
    must expose mean_reward, avg_delay_hours and mean_energy_kj_per_drone
    for the learning curves.

    The buffer is a rollout buffer, not experience replay: it drains
    after every update, so each update only ever sees transitions
    collected since the last old-policy sync. That keeps the surrogate's
    probability ratio exact; replaying stale transitions would weight
    them as if the current policy had collected them and the updates
    stop tracking the objective.

    Returns the networks whose rolling mean reward peaked, not the last
    iterate: the clipped-surrogate updates keep oscillating after the
    policy has converged, and the final episode is a lottery draw.
    """
    buffer = ReplayBuffer(cfg.buffer_capacity)
    actor_old = actor.clone()
    curves: list[dict] = []
    recent: deque[float] = deque(maxlen=cfg.snapshot_window)
    best_score = -np.inf
    best: tuple[PolicyNetwork, ValueNetwork] | None = None
    for ep in range(cfg.episodes):
        metrics, transitions = make_episode(ep)
        for tr in transitions:
            buffer.push(tr)
        row = {
            "episode": ep,
            "mean_reward": metrics.mean_reward,
            "avg_delay_hours": metrics.avg_delay_hours,
            "mean_energy_kj_per_drone": metrics.mean_energy_kj_per_drone,
            "actor_loss": float("nan"),
            "critic_loss": float("nan"),
        }
        if len(buffer) >= cfg.batch_size:
            stats = update(buffer, actor, actor_old, critic, cfg, rng)
            buffer.clear()
            row["actor_loss"] = stats.actor_loss
            row["critic_loss"] = stats.critic_loss
        curves.append(row)
        recent.append(metrics.mean_reward)
        if cfg.keep_best and len(recent) == recent.maxlen:
            score = float(np.mean(recent))
            if score > best_score:
                best_score = score
                best = (actor.clone(), critic.clone())
        if progress is not None:
            progress(ep, row)
    if best is not None:
        actor, critic = best
    return TrainResult(actor=actor, critic=critic, curves=curves)


def save_checkpoint(path: str | Path, actor: PolicyNetwork, critic: ValueNetwork,
                    meta: dict | None = None) -> None:
    """JSON checkpoint: layer shapes plus flattened parameters."""
    def dump(net: Mlp) -> dict:
        return {"layer_sizes": net.layer_sizes,
                "params": [p.ravel().tolist() for p in net.params()]}
    payload = {
        "format_version": 1,
        "actor": {
            "obs_dim": actor.obs_dim, "n_actions": actor.n_actions,
            "hidden": actor.hidden, "recurrent": actor.recurrent,
            "net": dump(actor.net),
        },
        "critic": {
            "obs_dim": critic.obs_dim, "n_actions": critic.n_actions,
            "critic_type": critic.critic_type,
            "hidden": critic.net.layer_sizes[1],
            "net": dump(critic.net),
        },
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(payload) + "\n")


def load_checkpoint(path: str | Path) -> tuple[PolicyNetwork, ValueNetwork, dict]:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise LearningError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format_version") != 1:
        raise LearningError(f"unsupported checkpoint version in {path}")

    def restore(net: Mlp, blob: dict) -> None:
        if blob["layer_sizes"] != net.layer_sizes:
            raise LearningError(f"checkpoint layer sizes {blob['layer_sizes']} "
                                f"do not match {net.layer_sizes}")
        arrays = []
        for current, flat in zip(net.params(), blob["params"]):
            arr = np.array(flat, dtype=float)
            if arr.size != current.size:
                raise LearningError("checkpoint parameter count mismatch")
            arrays.append(arr.reshape(current.shape))
        net.set_params(arrays)

    a = payload["actor"]
    rng = np.random.default_rng(0)  # placeholder init, overwritten below
    actor = PolicyNetwork(a["obs_dim"], a["n_actions"], a["hidden"], rng,
                          recurrent=a["recurrent"])
    restore(actor.net, a["net"])
    c = payload["critic"]
    critic = ValueNetwork(c["obs_dim"], c["n_actions"], c["hidden"], rng,
                          critic_type=c["critic_type"])
    restore(critic.net, c["net"])
    return actor, critic, payload.get("meta", {})


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an action index from a probability row."""
    p = np.asarray(probs, dtype=float)
    p = p / p.sum()
    return int(rng.choice(len(p), p=p))


def greedy_action(probs: np.ndarray) -> int:
    """Deterministic evaluation choice: highest probability, lowest index."""
    return int(np.argmax(probs))
