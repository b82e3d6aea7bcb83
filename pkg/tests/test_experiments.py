import numpy as np
import pytest

from biad.exceptions import ConfigurationError
from biad.experiments import (
    ErrorRates,
    SweepResult,
    TrialConfig,
    estimate_error_rates,
    evaluate_configs,
    resolve_matrix,
    run_sweep,
    run_trial,
    select_tau,
    simulate_trial,
    wilson_interval,
)


def test_config_from_dict_names_bad_key():
    with pytest.raises(ConfigurationError, match="'gama'"):
        TrialConfig.from_dict({"gama": 0.3})
    with pytest.raises(ConfigurationError):
        TrialConfig.from_dict({"gamma": 1.3})
    with pytest.raises(ConfigurationError):
        TrialConfig.from_dict({"learner": "svd"})
    cfg = TrialConfig.from_dict({"synthetic": {"seed": 9}, "A": 3})
    assert cfg.synthetic["m"] == 2000 and cfg.synthetic["seed"] == 9 and cfg.A == 3
    assert TrialConfig.from_dict(cfg.to_dict()) == cfg


def test_run_trial_deterministic(tiny_config):
    a, b = run_trial(tiny_config, 3), run_trial(tiny_config, 3)
    assert a.verdict == b.verdict and a.s_trace == b.s_trace
    assert np.array_equal(a.log.item, b.log.item)
    c = run_trial(tiny_config, 4)
    assert not np.array_equal(a.log.item, c.log.item)


def test_run_trial_log_shape(tiny_config):
    out = run_trial(tiny_config, 0)
    assert out.log.n_rounds == tiny_config.q_max
    assert len(out.log) == tiny_config.q_max * tiny_config.n_players
    assert 0 <= out.mean_rating <= 10


def test_zero_gamma_biased_equals_objective(tiny_config):
    cfg = tiny_config.replace(gamma=0.0)
    biased, _ = simulate_trial(cfg, 1, "biased")
    objective, _ = simulate_trial(cfg, 1, "objective")
    assert np.array_equal(biased.item, objective.item)


def test_detector_params_do_not_perturb_simulation(tiny_config):
    a, _ = simulate_trial(tiny_config, 2, rounds=10)
    b, _ = simulate_trial(tiny_config.replace(f_tilde=20.0, variant="prime", q_max=5), 2,
                          rounds=10)
    assert np.array_equal(a.item, b.item)


def test_player_sets_are_nested(tiny_config):
    small, _ = simulate_trial(tiny_config.replace(n_players=10), 0)
    large, _ = simulate_trial(tiny_config.replace(n_players=20), 0)
    assert set(small.player.tolist()) <= set(large.player.tolist())


def test_exhaustion_is_configuration_error(tiny_config):
    cfg = tiny_config.replace(synthetic={"m": 20, "n_users": 30, "target_effective_mean": 5.0},
                              q_max=25, f_tilde=30.0)
    with pytest.raises(ConfigurationError):
        simulate_trial(cfg, 0)


def test_matrix_subsampling(tiny_config):
    matrix = resolve_matrix(tiny_config.replace(m=100))
    assert matrix.shape == (80, 100)
    with pytest.raises(ConfigurationError):
        resolve_matrix(tiny_config.replace(m=400))


def test_degenerate_biased_config_always_detected(tiny_config):
    cfg = tiny_config.replace(A=1, gamma=1.0, explore_prob=0.0, ad_ineffective_share=1.0)
    rates = estimate_error_rates(cfg, num_trials=10)
    assert rates.type_ii == 0.0
    assert all(o[1] == 1 for o in rates.biased_outcomes)


def test_estimate_needs_ten_trials(tiny_config):
    with pytest.raises(ConfigurationError):
        estimate_error_rates(tiny_config, num_trials=5)


def test_wilson_interval():
    low, high = wilson_interval(0, 50)
    assert low == pytest.approx(0.0, abs=1e-12) and high == pytest.approx(0.0713, abs=1e-3)
    low, high = wilson_interval(25, 50)
    assert low < 0.5 < high


def test_sweep_unknown_param(tiny_config):
    with pytest.raises(ConfigurationError, match="valid"):
        run_sweep(tiny_config, "eta", [1.0], num_trials=10)
    with pytest.raises(ConfigurationError):
        run_sweep(tiny_config, "A", [1.5], num_trials=10)


def test_sweep_reproducible_across_workers(tiny_config, tmp_path):
    cfg = tiny_config.replace(q_max=6)
    a = run_sweep(cfg, "gamma", [0.2, 0.6], num_trials=10, workers=1).to_csv(tmp_path / "a.csv")
    b = run_sweep(cfg, "gamma", [0.2, 0.6], num_trials=10, workers=2).to_csv(tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()
    header = a.read_text().splitlines()[0]
    assert header == "param,value,type_i,type_ii,ci_i,ci_ii,mean_detect_round,trials"


def test_sweep_shares_objective_trials(tiny_config):
    sweep = run_sweep(tiny_config.replace(q_max=6), "A", [2, 4], num_trials=10)
    assert sweep.rates[0].objective_outcomes == sweep.rates[1].objective_outcomes


def test_tau_sweep_and_trace_dump(tiny_config, tmp_path):
    cfg = tiny_config.replace(q_max=6)
    sweep = run_sweep(cfg, "tau", [0.0, 10.0], num_trials=10, trace_dir=tmp_path / "tr")
    assert sweep.rates[0].type_i == 0.0 and sweep.rates[0].type_ii == 1.0
    assert sweep.rates[1].type_i == 1.0 and sweep.rates[1].type_ii == 0.0
    assert len(list((tmp_path / "tr").glob("*.csv"))) == 2 * 2 * 10


def test_select_tau_prefers_largest_tie():
    def rates(total):
        return ErrorRates(total, 0.0, 0, 0, float("nan"), 10)

    sweep = SweepResult("tau", [1.0, 2.0, 3.0, 4.0], [rates(0.5), rates(0.0), rates(0.0),
                                                      rates(0.2)])
    assert select_tau(sweep) == 3.0


def test_evaluate_configs_matches_single(tiny_config):
    cfg = tiny_config.replace(q_max=6)
    many = evaluate_configs([cfg, cfg.replace(variant="prime")], num_trials=10)
    single = estimate_error_rates(cfg, num_trials=10)
    assert (many[0].type_i, many[0].type_ii) == (single.type_i, single.type_ii)
    assert many[1].type_i >= many[0].type_i
