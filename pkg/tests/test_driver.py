import numpy as np
import pytest
from sklearn.base import clone

from latseq.driver import LatProtRL, double_loop_schedule, top_distinct
from latseq.core import Dataset, Vocabulary
from latseq.ppo import PpoConfig

FAST_PPO = PpoConfig(epochs=2, minibatch_size=64, hidden=16)


class FarDecoder:
    """Every decode changes ``k`` positions of the template."""

    latent_dim = 2

    def __init__(self, k):
        self.k = k

    def transform(self, X):
        X = np.asarray(X)
        return np.zeros((len(X), 2)) if X.ndim == 2 else np.zeros(2)

    def constrained_decode(self, z, template, m):
        out = np.array(template, copy=True)
        out[:self.k] = (out[:self.k] + 1) % 4
        return out


def model(task, ved, **kw):
    params = dict(oracle=task.oracle, ved=ved, vocab_size=4, rounds=2, calls_per_round=8, buffer_size=16,
                  ppo_config=FAST_PPO, random_state=0)
    params.update(kw)
    return LatProtRL(**params)


def test_schedule():
    assert "".join(double_loop_schedule()) == "OPP" * 5 + "P" * 10
    assert double_loop_schedule(1, 0, 1) == ["O", "P"]


def test_top_distinct_dedupes():
    d = Dataset(np.array([[0], [0], [1], [2]]), [5.0, 4.0, 3.0, 3.0], Vocabulary("ACGT"))
    t = top_distinct(d, 3)
    assert t.sequences[:, 0].tolist() == [0, 1, 2] and t.fitness.tolist() == [5.0, 3.0, 3.0]


def test_zero_rounds_reports_initial_state_only(small_task, small_ved):
    m = model(small_task, small_ved, rounds=0).fit(small_task.data.sequences, small_task.data.fitness)
    assert len(m.history_) == 1 and m.n_oracle_calls_ == 0
    best = {}
    for x, f in zip(small_task.data.sequences, small_task.data.fitness):
        best[x.tobytes()] = max(f, best.get(x.tobytes(), -np.inf))
    top = sorted(best.values(), reverse=True)[:16]
    assert m.history_[0]["fitness"] == pytest.approx(np.median(top))


def test_active_rounds_spend_exact_budget(small_task, small_ved):
    calls = []
    oracle = lambda X: calls.append(len(X)) or small_task.oracle(X)  # noqa: E731
    m = model(small_task, small_ved, oracle=oracle, rounds=4, calls_per_round=8)
    m.fit(small_task.data.sequences, small_task.data.fitness)
    assert len(m.history_) == 5
    assert [r["oracle_calls"] for r in m.history_] == [0, 8, 16, 24, 32]
    assert sum(calls) == 32 == m.n_oracle_calls_
    assert all(r["valid_terminal"] == 8 for r in m.round_reports_)
    # buffer never gets worse
    mins = [r["buffer_min"] for r in m.history_]
    assert mins == sorted(mins)


def test_episode_cap_when_every_step_is_invalid(small_task):
    m = model(small_task, FarDecoder(5), m_step=3, rounds=1, calls_per_round=4)
    m.fit(small_task.data.sequences, small_task.data.fitness)
    rep = m.round_reports_[0]
    assert rep["capped"] and rep["episodes"] == 40 and rep["valid_terminal"] == 0
    assert m.n_oracle_calls_ == 0 and rep["mean_reward"] == -1.0


def test_no_calibration_makes_far_steps_valid(small_task):
    m = model(small_task, FarDecoder(5), m_step=3, rounds=1, calls_per_round=4, no_calibration=True)
    m.fit(small_task.data.sequences, small_task.data.fitness)
    assert m.round_reports_[0]["episodes"] == 4 and m.n_oracle_calls_ == 4


def test_no_buffer_still_records_results(small_task, small_ved):
    m = model(small_task, small_ved, no_buffer=True).fit(small_task.data.sequences, small_task.data.fitness)
    assert m.history_[-1]["epsilon"] is None
    assert m.buffer_.calls == 0  # starts never drawn from the buffer
    assert m.history_[-1]["buffer_min"] >= m.history_[0]["buffer_min"]


@pytest.mark.parametrize("mode", ["lat/mut", "seq/mut"])
def test_mutation_action_modes(small_task, small_ved, mode):
    ved = small_ved if mode == "lat/mut" else None
    m = model(small_task, ved, state_action_mode=mode).fit(small_task.data.sequences, small_task.data.fitness)
    assert m.n_oracle_calls_ == 16 and m.env_.action_kind == "discrete"


def test_double_loop_trace(small_task, small_ved):
    calls = []
    oracle = lambda X: calls.append(len(X)) or small_task.oracle(X)  # noqa: E731
    m = model(small_task, small_ved, oracle=oracle, mode="double-loop", double_loop=(2, 1, 1),
              predictor_params={"epochs": 5})
    m.fit(small_task.data.sequences, small_task.data.fitness)
    assert m.round_kinds_ == ["init", "O", "P", "O", "P", "P"]
    assert m.n_oracle_calls_ == 16
    # predictor rounds leave the budget alone
    assert [r["oracle_calls"] for r in m.history_] == [0, 8, 8, 16, 16, 16]
    # metric evaluations are tracked apart from the budget
    assert sum(calls) == 16 + m.evaluation_calls_


def test_predictor_mode_never_charges_budget(small_task, small_ved):
    m = model(small_task, small_ved, mode="predictor", total_timesteps=60, rollout_steps=30,
              predictor_params={"epochs": 5})
    m.fit(small_task.data.sequences, small_task.data.fitness)
    assert m.n_oracle_calls_ == 0 and len(m.history_) >= 3
    assert hasattr(m, "predictor_")


def test_same_seed_same_history(small_task, small_ved):
    a = model(small_task, small_ved).fit(small_task.data.sequences, small_task.data.fitness)
    b = model(small_task, small_ved).fit(small_task.data.sequences, small_task.data.fitness)
    c = model(small_task, small_ved, random_state=1).fit(small_task.data.sequences, small_task.data.fitness)
    assert a.history_ == b.history_
    assert a.history_ != c.history_


def test_estimator_api(small_task, small_ved):
    m = model(small_task, small_ved, delta=0.2)
    assert clone(m).get_params()["delta"] == 0.2
    with pytest.raises(ValueError):
        model(small_task, small_ved, mode="bogus").fit(small_task.data.sequences, small_task.data.fitness)
    with pytest.raises(ValueError):
        model(small_task, None).fit(small_task.data.sequences, small_task.data.fitness)
