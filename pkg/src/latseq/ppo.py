"""Clipped-surrogate policy optimisation with generalized advantage estimation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neuralnet import AdamState, Mlp, adam_step, clip_grad_norm, log_softmax

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class PpoConfig:
    clip_ratio: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 10
    minibatch_size: int = 64
    lr: float = 3e-4
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    max_grad_norm: float = 0.5
    hidden: int = 64
    init_log_std: float = 0.0

    def __post_init__(self):
        if not 0 < self.clip_ratio < 1:
            raise ValueError("clip_ratio must lie in (0, 1)")
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")


def _log1m_tanh2(u):
    # log(1 - tanh(u)^2), stable for large |u|
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


class GaussianPolicy:
    """Diagonal Gaussian squashed by ``delta * tanh``; the log-std is state independent."""

    kind = "continuous"

    def __init__(self, state_dim, action_dim, delta, hidden=64, init_log_std=0.0, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.delta = float(delta)
        self.net = Mlp([state_dim, hidden, hidden, action_dim], ["tanh", "tanh", "identity"], rng=rng)
        self.log_std = np.full(action_dim, float(init_log_std))

    def parameters(self):
        return self.net.parameters() + [self.log_std]

    def mark_updated(self):
        self.net.mark_updated()

    def squash(self, u):
        return self.delta * np.tanh(u)

    def act(self, states, rng, deterministic=False):
        """Return ``(actions, pre-squash samples, log-probabilities)``."""
        states = np.atleast_2d(states)
        mu = self.net(states)
        if deterministic:
            u = mu
        else:
            u = mu + np.exp(self.log_std) * rng.standard_normal(mu.shape)
        logp, _ = self.log_prob(states, u)
        return self.squash(u), u, logp

    def log_prob(self, states, u):
        """Log-density of the squashed action ``delta * tanh(u)``."""
        states = np.atleast_2d(states)
        u = np.atleast_2d(u)
        mu, net_cache = self.net.forward(states)
        std = np.exp(self.log_std)
        z = (u - mu) / std
        base = -0.5 * z * z - self.log_std - 0.5 * _LOG_2PI
        correction = np.log(self.delta) + _log1m_tanh2(u)
        logp = (base - correction).sum(axis=1)
        return logp, {"net": net_cache, "z": z, "std": std, "n": len(states)}

    def entropy(self, cache):
        # entropy of the pre-squash Gaussian
        return np.full(cache["n"], float(np.sum(self.log_std + 0.5 * (1.0 + _LOG_2PI))))

    def backward(self, cache, dlogp, dentropy=None):
        """Gradients of ``sum(dlogp * logp) + sum(dentropy * entropy)``."""
        z, std = cache["z"], cache["std"]
        dlogp = np.asarray(dlogp)[:, None]
        dmu = dlogp * z / std
        dlog_std = (dlogp * (z * z - 1.0)).sum(axis=0)
        if dentropy is not None:
            dlog_std = dlog_std + np.sum(dentropy)
        grads, _ = self.net.backward(cache["net"], dmu)
        return grads + [dlog_std]

    def mean_action(self, states):
        return self.squash(self.net(np.atleast_2d(states)))

    def get_state(self):
        return {"net": self.net.get_state(), "log_std": self.log_std.tolist(), "delta": self.delta}


class CategoricalPolicy:
    """Softmax policy over a finite action set."""

    kind = "discrete"

    def __init__(self, state_dim, n_actions, hidden=64, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.net = Mlp([state_dim, hidden, hidden, n_actions], ["tanh", "tanh", "identity"], rng=rng)

    def parameters(self):
        return self.net.parameters()

    def mark_updated(self):
        self.net.mark_updated()

    def act(self, states, rng, deterministic=False):
        states = np.atleast_2d(states)
        logp_all = log_softmax(self.net(states))
        if deterministic:
            a = logp_all.argmax(axis=1)
        else:
            g = rng.gumbel(size=logp_all.shape)
            a = (logp_all + g).argmax(axis=1)
        return a, a, logp_all[np.arange(len(a)), a]

    def log_prob(self, states, actions):
        states = np.atleast_2d(states)
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        logits, net_cache = self.net.forward(states)
        logp_all = log_softmax(logits)
        return logp_all[np.arange(len(actions)), actions], {"net": net_cache, "logp_all": logp_all, "a": actions}

    def entropy(self, cache):
        lp = cache["logp_all"]
        return -(np.exp(lp) * lp).sum(axis=1)

    def backward(self, cache, dlogp, dentropy=None):
        lp, a = cache["logp_all"], cache["a"]
        p = np.exp(lp)
        n = len(a)
        onehot = np.zeros_like(p)
        onehot[np.arange(n), a] = 1.0
        dlogits = np.asarray(dlogp)[:, None] * (onehot - p)
        if dentropy is not None:
            h = -(p * lp).sum(axis=1, keepdims=True)
            # dH/dlogits = -p * (log p + H)
            dlogits += np.asarray(dentropy)[:, None] * (-p * (lp + h))
        grads, _ = self.net.backward(cache["net"], dlogits)
        return grads

    def get_state(self):
        return {"net": self.net.get_state()}


class ValueFunction:
    def __init__(self, state_dim, hidden=64, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.net = Mlp([state_dim, hidden, hidden, 1], ["tanh", "tanh", "identity"], rng=rng)

    def __call__(self, states):
        return self.net(np.atleast_2d(states))[:, 0]

    def parameters(self):
        return self.net.parameters()

    def mark_updated(self):
        self.net.mark_updated()


def compute_gae(trajectory, value_fn, gamma=0.99, lam=0.95):
    """Advantages and returns for one episode (list of transitions)."""
    if not trajectory:
        return np.zeros(0), np.zeros(0)
    if any(tr.reward is None for tr in trajectory):
        raise ValueError("trajectory contains unrewarded transitions")
    r = np.array([tr.reward for tr in trajectory], dtype=float)
    done = np.array([tr.done for tr in trajectory], dtype=float)
    v = value_fn(np.stack([tr.s for tr in trajectory]))
    v_next = value_fn(np.stack([tr.s_next for tr in trajectory]))
    return gae_from_arrays(r, v, v_next, done, gamma, lam)


def gae_from_arrays(rewards, values, next_values, dones, gamma, lam):
    n = len(rewards)
    adv = np.zeros(n)
    last = 0.0
    for t in reversed(range(n)):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values[t] * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + values


def build_batch(trajectories, value_fn, config: PpoConfig) -> dict:
    states, samples, logps, advs, rets = [], [], [], [], []
    for traj in trajectories:
        if not traj:
            continue
        a, r = compute_gae(traj, value_fn, config.gamma, config.gae_lambda)
        advs.append(a)
        rets.append(r)
        for tr in traj:
            states.append(tr.s)
            samples.append(tr.sample)
            logps.append(tr.log_prob)
    if not states:
        return {"states": np.zeros((0, 0)), "samples": np.zeros(0), "log_probs": np.zeros(0),
                "advantages": np.zeros(0), "returns": np.zeros(0)}
    return {
        "states": np.stack(states),
        "samples": np.asarray(samples),
        "log_probs": np.asarray(logps, dtype=float),
        "advantages": np.concatenate(advs),
        "returns": np.concatenate(rets),
    }


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=float)
    std = adv.std()
    return (adv - adv.mean()) / (std if std >= 1e-8 else 1.0)


def clipped_surrogate_grad(ratio, adv, clip):
    """d(-mean(min(r A, clip(r) A)))/d(log-prob) per sample."""
    clipped = ((adv > 0) & (ratio > 1 + clip)) | ((adv < 0) & (ratio < 1 - clip))
    return np.where(clipped, 0.0, -ratio * adv / len(adv)), clipped


class PpoLearner:
    """Holds a policy, a value function and their shared optimizer state."""

    def __init__(self, policy, value_fn, config: PpoConfig, rng=None):
        self.policy = policy
        self.value_fn = value_fn
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.opt = AdamState(lr=config.lr)

    def update(self, batch):
        return ppo_update(self.policy, self.value_fn, batch, self.config, self.opt, self.rng)


def ppo_update(policy, value_fn, batch, config: PpoConfig, opt: AdamState | None = None, rng=None) -> dict:
    """Run ``config.epochs`` passes of minibatch updates; returns a loss report."""
    rng = rng if rng is not None else np.random.default_rng(0)
    opt = opt if opt is not None else AdamState(lr=config.lr)
    n = len(batch["advantages"])
    report = {"policy_loss": [], "value_loss": [], "clip_fraction": [], "approx_kl": [], "samples": n}
    if n == 0:
        return report
    adv_all = normalize_advantages(batch["advantages"])
    params = policy.parameters() + value_fn.parameters()
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            states = batch["states"][idx]
            adv = adv_all[idx]
            logp, pcache = policy.log_prob(states, batch["samples"][idx])
            ratio = np.exp(logp - batch["log_probs"][idx])
            pg_loss = -np.mean(np.minimum(ratio * adv, np.clip(ratio, 1 - config.clip_ratio, 1 + config.clip_ratio) * adv))
            dlogp, clipped = clipped_surrogate_grad(ratio, adv, config.clip_ratio)
            v, vcache = value_fn.net.forward(states)
            diff = v[:, 0] - batch["returns"][idx]
            v_loss = float(np.mean(diff * diff))
            ent = policy.entropy(pcache)
            loss = pg_loss + config.vf_coef * v_loss - config.ent_coef * float(np.mean(ent))
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite PPO loss (policy {pg_loss}, value {v_loss}); "
                    f"max |log ratio| {np.max(np.abs(logp - batch['log_probs'][idx]))}")
            dent = np.full(len(idx), -config.ent_coef / len(idx)) if config.ent_coef else None
            pgrads = policy.backward(pcache, dlogp, dent)
            vgrads, _ = value_fn.net.backward(vcache, (config.vf_coef * 2.0 * diff / len(idx))[:, None])
            grads = pgrads + vgrads
            clip_grad_norm(grads, config.max_grad_norm)
            adam_step(opt, params, grads)
            policy.mark_updated()
            value_fn.mark_updated()
            report["policy_loss"].append(float(pg_loss))
            report["value_loss"].append(v_loss)
            report["clip_fraction"].append(float(np.mean(clipped)))
            report["approx_kl"].append(float(np.mean(batch["log_probs"][idx] - logp)))
    return report
