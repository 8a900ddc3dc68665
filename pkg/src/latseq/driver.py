"""Round driver: collect episodes, reward them, update the policy.

:class:`LatProtRL` wraps the whole loop as an estimator: ``fit(X, y)``
takes the starting dataset and leaves the final frontier buffer and the
per-round metrics on the instance.
"""
from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator

from .core import Dataset, substream
from .env import EnvConfig, LatentEnv, MutationEnv, assign_rewards
from .frontier_buffer import FrontierBuffer
from .landscape import OracleBudget, SurrogatePredictor
from .eval import compute_metrics
from .ppo import CategoricalPolicy, GaussianPolicy, PpoConfig, PpoLearner, ValueFunction, build_batch

log = logging.getLogger(__name__)

STATE_ACTION_MODES = ("lat/lat", "lat/mut", "seq/mut")


class UniformStarts:
    """Episode starts drawn uniformly from a fixed set (the no-buffer ablation)."""

    def __init__(self, sequences, rng):
        self.sequences = np.asarray(sequences, dtype=np.int64)
        self.rng = rng

    def top(self):
        return self.sequences[self.rng.integers(len(self.sequences))].copy()


def top_distinct(data: Dataset, n: int) -> Dataset:
    """The ``n`` best distinct sequences, each at its highest fitness."""
    order = np.argsort(-data.fitness, kind="stable")
    seen, keep = set(), []
    for i in order:
        k = data.sequences[i].tobytes()
        if k not in seen:
            seen.add(k)
            keep.append(i)
            if len(keep) == n:
                break
    return data.subset(keep)


def run_episode(policy, env, starts, rng):
    state = env.reset(starts)
    traj = []
    while not state.done:
        a, sample, logp = policy.act(state.s, rng)
        tr, state = env.step(state, a[0])
        tr.sample = sample[0]
        tr.log_prob = float(logp[0])
        traj.append(tr)
    return traj


def collect_round(policy, env, starts, n_episodes, rng, max_episode_factor=10):
    """Run episodes until ``n_episodes`` of them end on a valid transition.

    Gives up after ``max_episode_factor * n_episodes`` attempts.
    """
    trajectories = []
    valid_terminal = 0
    cap = max_episode_factor * n_episodes
    while valid_terminal < n_episodes and len(trajectories) < cap:
        traj = run_episode(policy, env, starts, rng)
        trajectories.append(traj)
        valid_terminal += traj[-1].valid
    report = {"episodes": len(trajectories), "valid_terminal": valid_terminal,
              "capped": valid_terminal < n_episodes,
              "invalid_steps": sum(not tr.valid for t in trajectories for tr in t),
              "steps": sum(len(t) for t in trajectories)}
    if report["capped"]:
        log.warning("round stopped after %d episodes with only %d valid terminal episodes",
                    len(trajectories), valid_terminal)
    return trajectories, report


def collect_steps(policy, env, starts, n_steps, rng):
    """Run whole episodes until at least ``n_steps`` transitions are collected."""
    trajectories, steps = [], 0
    while steps < n_steps:
        traj = run_episode(policy, env, starts, rng)
        trajectories.append(traj)
        steps += len(traj)
    return trajectories


def double_loop_schedule(outer_rounds=5, predictor_rounds=2, final_rounds=10):
    """Round types: ``"O"`` oracle-rewarded, ``"P"`` predictor-rewarded."""
    return (["O"] + ["P"] * predictor_rounds) * outer_rounds + ["P"] * final_rounds


class LatProtRL(BaseEstimator):
    """Latent-space PPO optimiser over a frontier buffer of sequences.

    Parameters mirror the environment, buffer and PPO settings. ``mode`` is
    ``"active"`` (oracle reward per round), ``"predictor"`` (dense reward
    from a surrogate for ``total_timesteps`` steps) or ``"double-loop"``.
    """

    def __init__(self, oracle=None, ved=None, vocab_size=20, rounds=15, calls_per_round=256,
                 delta=0.1, T_ep=4, m_step=3, m_total=15, m_decode=8, buffer_size=128,
                 epsilon_decay=0.96, update_period=50, temperature=10.0, ppo_config=None,
                 mode="active", predictor=None, predictor_params=None, total_timesteps=20_000,
                 rollout_steps=2048, double_loop=(5, 2, 10), no_buffer=False, no_calibration=False,
                 state_action_mode="lat/lat", max_episode_factor=10, random_state=0, callback=None):
        self.oracle = oracle
        self.ved = ved
        self.vocab_size = vocab_size
        self.rounds = rounds
        self.calls_per_round = calls_per_round
        self.delta = delta
        self.T_ep = T_ep
        self.m_step = m_step
        self.m_total = m_total
        self.m_decode = m_decode
        self.buffer_size = buffer_size
        self.epsilon_decay = epsilon_decay
        self.update_period = update_period
        self.temperature = temperature
        self.ppo_config = ppo_config
        self.mode = mode
        self.predictor = predictor
        self.predictor_params = predictor_params
        self.total_timesteps = total_timesteps
        self.rollout_steps = rollout_steps
        self.double_loop = double_loop
        self.no_buffer = no_buffer
        self.no_calibration = no_calibration
        self.state_action_mode = state_action_mode
        self.max_episode_factor = max_episode_factor
        self.random_state = random_state
        self.callback = callback

    # -- setup ----------------------------------------------------------------
    def _make_env(self, seq_len):
        latent_dim = self.ved.latent_dim if self.ved is not None else 1
        cfg = EnvConfig(delta=self.delta, T_ep=self.T_ep, m_step=self.m_step, m_total=self.m_total,
                        m_decode=self.m_decode, latent_dim=latent_dim)
        calibrate = not self.no_calibration
        if self.state_action_mode == "lat/lat":
            return LatentEnv(self.ved, cfg, calibrate)
        state_repr = self.state_action_mode.split("/")[0]
        return MutationEnv(cfg, self.vocab_size, seq_len, state_repr, ved=self.ved, calibrate=calibrate)

    def _make_learner(self, env, rng):
        cfg = self.ppo_config or PpoConfig()
        if env.action_kind == "continuous":
            policy = GaussianPolicy(env.state_dim, env.config.latent_dim, self.delta, cfg.hidden,
                                    cfg.init_log_std, rng=rng)
        else:
            policy = CategoricalPolicy(env.state_dim, env.n_actions, cfg.hidden, rng=rng)
        value_fn = ValueFunction(env.state_dim, cfg.hidden, rng=rng)
        return PpoLearner(policy, value_fn, cfg, rng=rng)

    def _metrics(self, round_index, kind, evaluate):
        seqs = np.array(self.buffer_.sequences)
        fit = np.array(self.buffer_.fitness)
        if evaluate:
            fit = np.asarray(self.oracle(seqs), dtype=float)
            self.evaluation_calls_ += len(seqs)
        m = compute_metrics(seqs, fit, self._init_set, self._high_set, round_index,
                            oracle_calls=self.budget_.total_calls, epsilon=self._starts_epsilon())
        row = m.as_row()
        self.history_.append(row)
        self.round_kinds_.append(kind)
        if self.callback is not None:
            self.callback(self, round_index, row)
        return row

    def _starts_epsilon(self):
        return None if self.no_buffer else self.buffer_.epsilon

    # -- main loop ------------------------------------------------------------
    def fit(self, X, y, init_set=None, high_set=None):
        """Optimise starting from the top ``buffer_size`` entries of ``(X, y)``.

        ``init_set`` (default ``X``) and ``high_set`` are the reference sets
        for the ``d_init`` and ``d_high`` metrics.
        """
        if self.state_action_mode not in STATE_ACTION_MODES:
            raise ValueError(f"state_action_mode must be one of {STATE_ACTION_MODES}")
        if self.mode not in ("active", "predictor", "double-loop"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.state_action_mode != "seq/mut" and self.ved is None:
            raise ValueError("latent states need a fitted VED")
        if self.oracle is None:
            raise ValueError("an oracle is required")
        X = np.asarray(X, dtype=np.int64)
        y = np.asarray(y, dtype=float)
        data = Dataset(X, y, _AnyVocab(self.vocab_size))
        seed = self.random_state
        self._init_set = X if init_set is None else np.asarray(init_set)
        self._high_set = high_set
        initial = top_distinct(data, self.buffer_size)

        self.buffer_ = FrontierBuffer(self.buffer_size, epsilon_decay=self.epsilon_decay,
                                      update_period=self.update_period, temperature=self.temperature,
                                      rng=substream(seed, "buffer"))
        self.buffer_.initialize(initial)
        starts = UniformStarts(initial.sequences, substream(seed, "starts")) if self.no_buffer else self.buffer_
        self.env_ = self._make_env(X.shape[1])
        self.learner_ = self._make_learner(self.env_, substream(seed, "policy"))
        env_rng = substream(seed, "env")
        self.budget_ = OracleBudget(self.calls_per_round)
        self.history_, self.round_kinds_, self.round_reports_ = [], [], []
        self.evaluation_calls_ = 0
        evaluate = self.mode != "active"
        self._metrics(0, "init", evaluate)

        if self.mode == "active":
            for r in range(1, self.rounds + 1):
                self._sparse_round(r, "O", starts, env_rng)
                self._metrics(r, "O", False)
        elif self.mode == "predictor":
            reward_fn = self.predictor
            if reward_fn is None:
                reward_fn = SurrogatePredictor(vocab_size=self.vocab_size, random_state=seed,
                                               **(self.predictor_params or {})).fit(X, y)
            self.predictor_ = reward_fn
            steps, r = 0, 0
            while steps < self.total_timesteps:
                r += 1
                n = min(self.rollout_steps, self.total_timesteps - steps)
                trajs = collect_steps(self.learner_.policy, self.env_, starts, n, env_rng)
                assign_rewards(trajs, reward_fn, None, self.buffer_, dense=True)
                self._update(trajs, r, {"steps": sum(len(t) for t in trajs)})
                steps += sum(len(t) for t in trajs)
                self._metrics(r, "P", True)
        else:
            self._double_loop(X, y, starts, env_rng)
        self.n_oracle_calls_ = self.budget_.total_calls
        return self

    def _sparse_round(self, r, kind, starts, env_rng, reward_fn=None):
        policy = self.learner_.policy
        trajs, report = collect_round(policy, self.env_, starts, self.calls_per_round, env_rng,
                                      self.max_episode_factor)
        if kind == "O":
            self.budget_.new_round()
            calls = assign_rewards(trajs, self.oracle, self.budget_, self.buffer_)
        else:
            calls = assign_rewards(trajs, reward_fn, None, self.buffer_)
        report["evaluations"] = calls
        self._update(trajs, r, report)
        return trajs

    def _update(self, trajs, r, report):
        batch = build_batch(trajs, self.learner_.value_fn, self.learner_.config)
        losses = self.learner_.update(batch)
        report = dict(report, round=r,
                      policy_loss=float(np.mean(losses["policy_loss"])) if losses["policy_loss"] else None,
                      value_loss=float(np.mean(losses["value_loss"])) if losses["value_loss"] else None,
                      mean_reward=float(np.mean([tr.reward for t in trajs for tr in t])))
        self.round_reports_.append(report)

    def _double_loop(self, X, y, starts, env_rng):
        outer, inner, final = self.double_loop
        schedule = double_loop_schedule(outer, inner, final)
        labelled_x, labelled_y = [], []
        params = dict(self.predictor_params or {})
        predictor = None
        for r, kind in enumerate(schedule, start=1):
            if kind == "O":
                trajs = self._sparse_round(r, "O", starts, env_rng)
                for t in trajs:
                    if t[-1].valid:
                        labelled_x.append(t[-1].x_next)
                        labelled_y.append(t[-1].reward)
                predictor = SurrogatePredictor(vocab_size=self.vocab_size, random_state=self.random_state + r,
                                               **params).fit(np.array(labelled_x), np.array(labelled_y))
            else:
                self._sparse_round(r, "P", starts, env_rng, reward_fn=predictor)
            self._metrics(r, kind, True)
        self.predictor_ = predictor

    # -- results ----------------------------------------------------------------
    def result_sequences(self):
        return np.array(self.buffer_.sequences), np.array(self.buffer_.fitness)


class _AnyVocab:
    """Vocabulary stand-in that only carries a size (for internal Dataset use)."""

    def __init__(self, size):
        self.size = size
