"""Episodic MDP over latent (or sequence) states with sparse oracle reward."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .core import one_hot
from .landscape import BudgetExceededError, OracleBudget, oracle_query

log = logging.getLogger(__name__)


@dataclass
class EnvConfig:
    delta: float = 0.1
    T_ep: int = 4
    m_step: int = 3
    m_total: int = 15
    m_decode: int = 8
    latent_dim: int = 16

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.T_ep < 1:
            raise ValueError("T_ep must be at least 1")
        if not 1 <= self.m_step <= self.m_decode:
            raise ValueError("need 1 <= m_step <= m_decode")
        if self.m_total < self.m_step:
            raise ValueError("need m_total >= m_step")


@dataclass
class EpisodeState:
    t: int
    s: np.ndarray
    x: np.ndarray
    x0: np.ndarray
    done: bool = False


@dataclass
class Transition:
    s: np.ndarray
    a: Any
    s_next: np.ndarray
    x_next: np.ndarray
    valid: bool
    done: bool
    reward: float | None = None
    # policy bookkeeping filled by the collector
    sample: Any = None
    log_prob: float | None = None
    info: dict = field(default_factory=dict)


def _distance(a, b) -> int:
    return int(np.count_nonzero(a != b))


class LatentEnv:
    """Latent-perturbation MDP: ``s' = clip(s + a)``, decoded onto the previous sequence."""

    action_kind = "continuous"

    def __init__(self, ved, config: EnvConfig, calibrate: bool = True):
        self.ved = ved
        self.config = config
        self.calibrate = calibrate
        self.clamp_events = 0
        self.action_clip_events = 0

    @property
    def state_dim(self) -> int:
        return self.config.latent_dim

    def encode(self, x):
        return self.ved.transform(x)

    def reset(self, starts) -> EpisodeState:
        x0 = starts.top()
        return EpisodeState(t=0, s=np.asarray(self.encode(x0), dtype=float), x=x0, x0=x0.copy())

    def step(self, state: EpisodeState, action):
        if state.done:
            raise RuntimeError("step() called on a finished episode")
        cfg = self.config
        a = np.asarray(action, dtype=float)
        if np.any(np.abs(a) > cfg.delta):
            self.action_clip_events += 1
            log.debug("action outside [-delta, delta] clamped")
            a = np.clip(a, -cfg.delta, cfg.delta)
        raw = state.s + a
        s_next = np.clip(raw, -1.0, 1.0)
        if not np.array_equal(raw, s_next):
            self.clamp_events += 1
            log.debug("latent state clamped to [-1, 1]")
        x_next = self.ved.constrained_decode(s_next, state.x, cfg.m_decode)
        return self._advance(state, a, s_next, x_next)

    def _advance(self, state, a, s_next, x_next):
        cfg = self.config
        valid = _distance(x_next, state.x) <= cfg.m_step or not self.calibrate
        done = _distance(x_next, state.x0) > cfg.m_total or state.t + 1 == cfg.T_ep
        tr = Transition(s=state.s, a=a, s_next=s_next, x_next=x_next, valid=bool(valid), done=bool(done))
        nxt = EpisodeState(t=state.t + 1, s=s_next, x=x_next, x0=state.x0, done=bool(done))
        return tr, nxt


class MutationEnv(LatentEnv):
    """Discrete single-mutation actions; ``a = position * V + symbol``.

    The state is the VED latent of the current sequence (``"lat"``) or its
    one-hot encoding (``"seq"``).
    """

    action_kind = "discrete"

    def __init__(self, config: EnvConfig, vocab_size: int, seq_len: int, state_repr: str = "lat",
                 ved=None, calibrate: bool = True):
        if state_repr not in ("lat", "seq"):
            raise ValueError(f"unknown state representation {state_repr!r}")
        if state_repr == "lat" and ved is None:
            raise ValueError("latent state representation needs a VED")
        super().__init__(ved, config, calibrate)
        self.vocab_size = vocab_size
        self.seq_len = seq_len
        self.state_repr = state_repr

    @property
    def state_dim(self) -> int:
        return self.config.latent_dim if self.state_repr == "lat" else self.seq_len * self.vocab_size

    @property
    def n_actions(self) -> int:
        return self.seq_len * self.vocab_size

    def encode(self, x):
        if self.state_repr == "lat":
            return self.ved.transform(x)
        return one_hot(x, self.vocab_size)

    def step(self, state: EpisodeState, action):
        if state.done:
            raise RuntimeError("step() called on a finished episode")
        a = int(action)
        if not 0 <= a < self.n_actions:
            raise ValueError(f"action {a} outside [0, {self.n_actions})")
        x_next = state.x.copy()
        x_next[a // self.vocab_size] = a % self.vocab_size
        s_next = np.asarray(self.encode(x_next), dtype=float)
        return self._advance(state, a, s_next, x_next)


def assign_rewards(trajectories, reward_fn: Callable, budget: OracleBudget | None = None,
                   buffer=None, dense: bool = False) -> int:
    """Fill in rewards in place; returns the number of ``reward_fn`` evaluations.

    Invalid transitions get -1 without evaluation. Valid terminal transitions
    get ``reward_fn(x_next)`` and offer ``x_next`` to ``buffer``. Other
    transitions get 0, or ``reward_fn(x_next)`` when ``dense``. With a
    ``budget`` every evaluation is charged against it.
    """
    to_eval = []
    for traj in trajectories:
        for tr in traj:
            if tr.valid and (tr.done or dense):
                to_eval.append(tr)
    if budget is not None and len(to_eval) > budget.remaining:
        raise BudgetExceededError(
            f"{len(to_eval)} evaluations requested with {budget.remaining} calls left in round")
    if to_eval:
        batch = np.stack([tr.x_next for tr in to_eval])
        if budget is not None:
            values = oracle_query(reward_fn, batch, budget)
        else:
            values = np.asarray(reward_fn(batch), dtype=float)
        for tr, v in zip(to_eval, values):
            tr.reward = float(v)
    for traj in trajectories:
        for tr in traj:
            if not tr.valid:
                tr.reward = -1.0
            elif tr.reward is None:
                tr.reward = 0.0
            if tr.valid and tr.done and buffer is not None:
                buffer.update(tr.x_next, tr.reward)
    return len(to_eval)
