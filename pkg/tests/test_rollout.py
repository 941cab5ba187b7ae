import numpy as np
import pytest
import torch

import bruteforce as bf
from conftest import random_params, random_simplex
from prefshift.data import Trajectory, read_jsonl, stack, write_jsonl
from prefshift.env import LearnedEstimators, rollout_oracle, rollout_sim, simulate_users
from prefshift.errors import BinRangeError, ConfigurationError, ParameterError, ShapeError
from prefshift.oracle import NHMMOracle
from prefshift.policies import FixedMixturePolicy, HistoryPolicy, near_random_policy, random_policy, rl_action_slates
from prefshift.pref_model import SequenceModel
from prefshift.rollout import (
    ModelPredictor,
    OracleEstimators,
    OraclePredictor,
    counterfactual_shortcut,
    generate_dataset,
    generate_training_trajectory,
    simulate_counterfactual,
    simulate_future,
    split_dataset,
    split_indices,
)
from prefshift.space import PrefSpace, total_variation, uniform_slate
from prefshift.user import UserParams


def _small(seed=0, n=4, T=2):
    rng = np.random.default_rng(seed)
    p = random_params(rng, n)
    prior = random_simplex(rng, n)
    slates = [random_simplex(rng, n) for _ in range(T)]
    choices = [int(rng.integers(n)) for _ in range(T)]
    actions = np.stack([random_simplex(rng, n, 0.5) for _ in range(3)])
    return p, prior, slates, choices, actions


@pytest.mark.parametrize("seed", [0, 1])
def test_oracle_in_the_loop_matches_exact_future(seed):
    p, prior, slates, choices, actions = _small(seed)
    probs = np.array([0.5, 0.3, 0.2])
    pol = FixedMixturePolicy(actions, probs)
    ora = NHMMOracle(p, prior)
    rep = simulate_future(slates, choices, pol, OraclePredictor(ora), 5, 10_000, np.random.default_rng(seed))
    exact = ora.predict_future(slates, choices, pol, 5)
    assert rep.beliefs.shape == (4, 4)
    assert total_variation(rep.beliefs[0], exact[0]) < 1e-12
    for g, e in zip(rep.beliefs, exact):
        assert total_variation(g, e) < 0.02


def test_oracle_in_the_loop_adaptive_policy_matches_enumeration():
    p, prior, slates, choices, actions = _small(2, n=4, T=1)
    actions = actions[:2]
    pol = HistoryPolicy(actions, lambda hs, hx: np.array([0.8, 0.2]) if hx[-1] % 2 else np.array([0.1, 0.9]))
    ora = NHMMOracle(p, prior)
    rep = simulate_future(slates, choices, pol, OraclePredictor(ora), 3, 10_000, np.random.default_rng(0))
    ref = bf.future_marginals(bf.Tables(p), prior, slates, choices, actions, pol.action_probs, 3)
    for g, r in zip(rep.beliefs, ref):
        assert total_variation(g, r) < 0.02


def test_horizon_equal_to_history_gives_filter_belief():
    p, prior, slates, choices, actions = _small(3)
    ora = NHMMOracle(p, prior)
    rep = simulate_future(slates, choices, FixedMixturePolicy(actions), OraclePredictor(ora), 2, 1,
                          np.random.default_rng(0))
    assert rep.beliefs.shape == (1, 4) and rep.choice_dists.shape == (0, 4)
    np.testing.assert_allclose(rep.beliefs[0], ora.filter_sequence(slates, choices), atol=1e-12)


def test_simulate_future_errors():
    p, prior, slates, choices, actions = _small(4)
    pred = OraclePredictor(NHMMOracle(p, prior))
    pol = FixedMixturePolicy(actions)
    with pytest.raises(ParameterError):
        simulate_future(slates, choices, pol, pred, 1, 10, np.random.default_rng(0))
    with pytest.raises(ParameterError):
        simulate_future(slates, choices, pol, pred, 4, 0, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        simulate_future(slates, choices[:1], pol, pred, 4, 10, np.random.default_rng(0))


def test_counterfactual_with_oracle_estimators():
    p, prior, slates, choices, actions = _small(5)
    ora = NHMMOracle(p, prior)
    pol = FixedMixturePolicy(actions, np.array([0.2, 0.2, 0.6]))
    est = OracleEstimators(ora)
    rep0 = simulate_counterfactual(slates, choices, pol, est, 0, 10, np.random.default_rng(0))
    np.testing.assert_allclose(rep0.beliefs[0], ora.smooth_initial(slates, choices), atol=1e-12)
    rep = simulate_counterfactual(slates, choices, pol, est, 3, 10_000, np.random.default_rng(1))
    for t in range(4):
        assert total_variation(rep.at(t), ora.counterfactual(slates, choices, pol, t)) < 0.02
    with pytest.raises(ParameterError):
        simulate_counterfactual(slates, choices, pol, est, -1, 10, np.random.default_rng(0))


def test_model_predictor_bootstraps_from_initial_belief():
    torch.manual_seed(0)
    m = SequenceModel("counterfactual", hidden=8, k=2)
    b0 = random_simplex(np.random.default_rng(0), 36)
    pred = ModelPredictor(m, np.ones(36), b0)
    st = pred.start(np.zeros((0, 36)), np.zeros(0, dtype=int), 3)
    np.testing.assert_allclose(pred.belief(st), np.tile(b0, (3, 1)))
    with pytest.raises(ConfigurationError):
        ModelPredictor(m, np.ones(36))
    with pytest.raises(ConfigurationError):
        ModelPredictor(SequenceModel("initial", hidden=8, k=2), np.ones(36))
    path = counterfactual_shortcut(m, b0, uniform_slate(), 3)
    assert path.shape == (4, 36)
    np.testing.assert_allclose(path[0], b0)
    np.testing.assert_allclose(path.sum(1), 1.0, atol=1e-6)


def test_model_predictor_window_cap():
    torch.manual_seed(0)
    m = SequenceModel("future", hidden=8, k=2)
    pred = ModelPredictor(m, np.ones(36), window=3)
    rng = np.random.default_rng(0)
    s = np.stack([random_simplex(rng, 36) for _ in range(6)])
    x = rng.integers(0, 36, 6)
    long_ = pred.belief(pred.start(s, x, 1))
    short = pred.belief(pred.start(s[-3:], x[-3:], 1))
    np.testing.assert_allclose(long_, short, atol=1e-6)


# ---------------------------------------------------------------- datasets


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(UserParams(), 10_000, 10, np.random.default_rng(7))


def test_dataset_layout(dataset):
    assert len(dataset) == 10_000
    assert all(len(t) == 10 and len(t.gt_prefs) == 11 for t in dataset)
    ids = [t.policy_id for t in dataset]
    assert ids[:5000] == ["slate_set"] * 5000 and ids[5000:] == ["near_random"] * 5000
    assert [t.user_id for t in dataset] == list(range(10_000))


def test_near_random_half_shows_uniform_slate_at_rate(dataset):
    arr = stack(dataset[5000:])
    uni = np.all(np.abs(arr.slates - 1 / 36) < 1e-12, axis=-1).ravel()
    rate, se = uni.mean(), np.sqrt(0.8 * 0.2 / uni.size)
    assert abs(rate - 0.8) < 3 * se
    first = stack(dataset[:5000])
    assert not np.any(np.all(np.abs(first.slates - 1 / 36) < 1e-12, axis=-1))


def test_dataset_split(dataset):
    tr, va = split_indices(10_000)
    assert len(tr) == 7500 and len(va) == 2500
    assert not set(tr) & set(va)
    a, b = split_dataset(dataset)
    assert len(a) == 7500 and len(b) == 2500
    assert b.policy_ids.count("slate_set") == 1250


def test_jsonl_round_trip_is_bit_exact(dataset, tmp_path):
    sub = dataset[::500]
    write_jsonl(sub, tmp_path / "a.jsonl")
    back = read_jsonl(tmp_path / "a.jsonl")
    for x, y in zip(sub, back):
        assert x.slates == y.slates and x.choices == y.choices and x.gt_prefs == y.gt_prefs
        assert x.policy_id == y.policy_id and x.user_id == y.user_id
    write_jsonl(back, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_dataset_reproducible():
    a = generate_dataset(UserParams(), 40, 5, np.random.default_rng(3))
    b = generate_dataset(UserParams(), 40, 5, np.random.default_rng(3))
    assert [t.to_json() for t in a] == [t.to_json() for t in b]
    c = generate_dataset(UserParams(), 40, 5, np.random.default_rng(4))
    assert [t.to_json() for t in a] != [t.to_json() for t in c]


def test_trajectory_validation():
    with pytest.raises(ShapeError):
        Trajectory([[0.5, 0.5]], [])
    with pytest.raises(BinRangeError):
        Trajectory([[0.5, 0.5]], [2])
    with pytest.raises(ParameterError):
        generate_dataset(UserParams(), 0)


# ---------------------------------------------------------------- environments


def test_rollout_beliefs_agree_with_oracle_inference():
    p = UserParams()
    acts = rl_action_slates()
    pol = FixedMixturePolicy(acts)
    batch = rollout_oracle(p, pol, 20, 6, np.random.default_rng(0))
    ora = NHMMOracle(p)
    for i in range(20):
        s, x = list(batch.slates[i]), list(batch.choices[i])
        np.testing.assert_allclose(batch.beliefs[i], ora.predictive_beliefs(s, x)[:6], atol=1e-10)
        np.testing.assert_allclose(batch.final_u0_belief[i], ora.smooth_initial(s, x), atol=1e-10)
        np.testing.assert_allclose(batch.final_nps_beliefs[i],
                                   ora.counterfactual_path(batch.final_u0_belief[i], random_policy(), 5), atol=1e-10)


def test_rollout_and_simulate_users_share_streams():
    p = UserParams()
    pol = near_random_policy()
    batch = rollout_oracle(p, pol, 30, 5, np.random.default_rng(9))
    acts, slates, choices, prefs = simulate_users(p, pol, 30, 5, np.random.default_rng(9))
    np.testing.assert_array_equal(batch.choices, choices)
    np.testing.assert_array_equal(batch.prefs, prefs)


def test_training_trajectory_rewards():
    p = UserParams()
    pol = FixedMixturePolicy(rl_action_slates())
    traj, r0 = generate_training_trajectory("oracle", p, pol, 10, np.random.default_rng(1))
    batch = rollout_oracle(p, pol, 1, 10, np.random.default_rng(1), nu=(1.0, 1.0))
    np.testing.assert_allclose(r0, batch.eng[0])
    traj2, r1 = generate_training_trajectory("oracle", p, pol, 10, np.random.default_rng(1), nu=(1.0, 1.0))
    np.testing.assert_allclose(r1, batch.eng[0] + batch.eng_u0[0] + batch.eng_nps[0])
    assert traj.to_json() == traj2.to_json()
    assert len(traj) == 10 and len(traj.gt_prefs) == 11
    with pytest.raises(ConfigurationError):
        generate_training_trajectory("sim", p, pol, 10, np.random.default_rng(1))
    with pytest.raises(ConfigurationError):
        generate_training_trajectory("other", p, pol, 10, np.random.default_rng(1))


def _untrained_estimators():
    torch.manual_seed(0)
    p = UserParams()
    return p, LearnedEstimators(SequenceModel("future", hidden=8, k=2, beta_field=p.beta_c_field),
                                SequenceModel("initial", hidden=8, k=2, beta_field=p.beta_c_field),
                                SequenceModel("counterfactual", hidden=8, k=2, beta_field=p.beta_c_field),
                                p.beta_c_field)


def test_rollout_sim_shapes_and_reproducibility():
    p, est = _untrained_estimators()
    pol = FixedMixturePolicy(rl_action_slates())
    a = rollout_sim(p, est, pol, 16, 4, np.random.default_rng(0), nu=(1.0, 1.0))
    b = rollout_sim(p, est, pol, 16, 4, np.random.default_rng(0), nu=(1.0, 1.0))
    np.testing.assert_array_equal(a.choices, b.choices)
    np.testing.assert_array_equal(a.rewards, b.rewards)
    assert a.prefs is None
    for arr in (a.beliefs, a.choice_dists, a.final_nps_beliefs):
        np.testing.assert_allclose(arr.sum(-1), 1.0, atol=1e-6)
    np.testing.assert_allclose(a.final_nps_beliefs[:, 0], a.final_u0_belief, atol=1e-12)


def test_estimators_validate_slots():
    p, est = _untrained_estimators()
    with pytest.raises(ConfigurationError):
        LearnedEstimators(est.initial, est.initial, est.counterfactual, p.beta_c_field)
