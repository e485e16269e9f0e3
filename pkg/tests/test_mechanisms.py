
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mechgrl.actions import JointActionSet
from mechgrl.errors import ContractError, DomainError, RangeWarning
from mechgrl.mechanisms import (
    ClarkVCG,
    ExponentialVCG,
    ExpVCGConfig,
    ValuationTable,
    clark_payments,
    dp_ratio_check,
    exp_mech_distribution,
    exp_vcg_expected_utility,
    exp_vcg_payments,
    gibbs_welfare,
    kl_divergence,
    profile_from_json,
    profile_to_json,
    soft_welfare,
    vcg_choose,
)

ALT3 = JointActionSet.exclusive(3)


def tables(alt, rows):
    return [ValuationTable(alt, r) for r in rows]


def brute_clark(V, n):
    """Pivot payments by explicit loops."""
    k, m = len(V), len(V[0])
    out = []
    for i in range(k):
        others = lambda b: sum(V[j][b] for j in range(k) if j != i)
        out.append(max(others(b) for b in range(m)) - others(n))
    return out


def test_valuation_table_contracts():
    with pytest.raises(ContractError):
        ValuationTable(ALT3, [1, 2])
    with pytest.raises(DomainError):
        ValuationTable(ALT3, [1, np.nan, 0])
    with pytest.raises(ContractError):
        ValuationTable.from_mapping(ALT3, {"1|0|0": 1.0})
    t = ValuationTable.from_mapping(ALT3, {"1|0|0": 1.0, "0|1|0": 2.0, (0, 0, 1): 3.0})
    assert t[(0, 1, 0)] == 2.0 and t.as_dict()["0|0|1"] == 3.0


def test_profile_json_round_trip():
    prof = tables(ALT3, [[1, 2, 3], [0, 0.5, 0]])
    ids, back = profile_from_json(profile_to_json(prof, ["a", "b"]), ALT3)
    assert ids == ["a", "b"] and back == prof


def test_factory_first_step_example():
    prof = tables(ALT3, [[100, 40, 20], [20, 80, 0], [0, 0, 0]])
    out = ClarkVCG()(prof, np.random.default_rng(0))
    assert out.tie_set == ((1, 0, 0), (0, 1, 0))
    assert set(out.payments) <= {0.0, 60.0}


def test_deterministic_tie_rule():
    prof = tables(ALT3, [[1, 1, 0], [0, 0, 0]])
    assert vcg_choose(prof).chosen == (1, 0, 0)


def test_mixed_action_sets_rejected():
    with pytest.raises(ContractError):
        vcg_choose([ValuationTable(ALT3, [0, 0, 0]), ValuationTable(JointActionSet.exclusive(2), [0, 0])])


@given(arrays(float, (3, 4), elements=st.floats(0, 10, allow_nan=False)))
def test_clark_matches_brute_force_and_is_nonnegative(V):
    alt = JointActionSet.exclusive(4)
    prof = tables(alt, V)
    chosen = vcg_choose(prof).chosen
    pays = clark_payments(prof, chosen)
    assert np.allclose(pays, brute_clark(V.tolist(), alt.position(chosen)))
    assert min(pays) >= 0
    # truthful utility is each agent's marginal contribution, hence >= 0
    welfare = V.sum(axis=0)
    n = alt.position(chosen)
    for i in range(3):
        assert V[i, n] - pays[i] == pytest.approx(welfare[n] - np.delete(V, i, 0).sum(0).max())


@given(arrays(float, (2, 3), elements=st.floats(0, 5, allow_nan=False)),
       arrays(float, 3, elements=st.floats(0, 5, allow_nan=False)))
def test_clark_dominant_strategy(V, lie):
    prof = tables(ALT3, V)
    truthful = vcg_choose(prof).chosen
    u_true = V[0, ALT3.position(truthful)] - clark_payments(prof, truthful)[0]
    bad = tables(ALT3, [lie, V[1]])
    c = vcg_choose(bad).chosen
    u_lie = V[0, ALT3.position(c)] - clark_payments(bad, c)[0]
    assert u_lie <= u_true + 1e-9


def test_exp_vcg_reference_values():
    # computed with plain-Python math.exp/log loops
    V = np.array([[0.2, 0.9, 0.4], [0.6, 0.1, 0.3]])
    cfg = ExpVCGConfig(1.0)
    assert np.allclose(exp_mech_distribution(V, cfg), [0.32718226930869276, 0.3615923289499618, 0.31122540174134544])
    assert np.allclose(exp_vcg_payments(V, cfg), [0.02206962865213402, 0.010689235450781709], atol=1e-12)


def test_exp_vcg_outcome_and_rng_requirement():
    mech = ExponentialVCG(1.0)
    prof = tables(ALT3, [[0.2, 0.9, 0.4], [0.6, 0.1, 0.3]])
    with pytest.raises(ContractError):
        mech(prof)
    out = mech(prof, np.random.default_rng(3))
    assert out.chosen in ALT3 and sum(out.distribution) == pytest.approx(1.0)
    assert mech.get_params() == {"epsilon": 1.0, "sensitivity": 1.0}


def test_exp_vcg_range_warning_and_bad_epsilon():
    with pytest.warns(RangeWarning):
        exp_mech_distribution(np.array([[2.0, 0.0]]), ExpVCGConfig(1.0))
    with pytest.raises(DomainError):
        ExpVCGConfig(0.0)


@given(arrays(float, (2, 3), elements=st.floats(0, 1, allow_nan=False)),
       arrays(float, 3, elements=st.floats(0, 1, allow_nan=False)),
       st.sampled_from([0.1, 1.0, 3.0]))
def test_exp_vcg_kl_identity_and_ir(V, lie, eps):
    cfg = ExpVCGConfig(eps)
    truthful = exp_vcg_expected_utility(V[0], V, 0, cfg)
    assert truthful == pytest.approx(soft_welfare(V, cfg) - soft_welfare(V, cfg, exclude=0), abs=1e-9)
    assert truthful >= -1e-9
    B = V.copy()
    B[0] = lie
    gap = kl_divergence(exp_mech_distribution(B, cfg), exp_mech_distribution(V, cfg)) / cfg.beta
    assert exp_vcg_expected_utility(V[0], B, 0, cfg) == pytest.approx(truthful - gap, abs=1e-9)


@given(arrays(float, (2, 4), elements=st.floats(0, 1, allow_nan=False)),
       st.lists(st.floats(0.01, 1), min_size=4, max_size=4))
def test_gibbs_welfare_maximised_by_exp_distribution(V, w):
    xi = np.array(w) / sum(w)
    star = exp_mech_distribution(V, ExpVCGConfig(2.0))
    assert gibbs_welfare(xi, V, 2.0) <= gibbs_welfare(star, V, 2.0) + 1e-12


@pytest.mark.parametrize("eps", [0.1, 0.5, 1.0, 2.0])
def test_dp_ratio(eps):
    cfg = ExpVCGConfig(eps)
    assert dp_ratio_check(cfg, alt=3) <= eps + 1e-12
    assert dp_ratio_check(cfg, alt=3, trials=2000) <= eps + 1e-12
