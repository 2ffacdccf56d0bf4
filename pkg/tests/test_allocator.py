import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from isacsim.allocator import (
    InfeasibleError,
    QosConstraints,
    SinrProfile,
    allocate_joint,
    comm_rate,
    eta_grid,
    partition_subcarriers,
    raca_baselines,
    random_partition,
    sensing_mi,
    sweep_eta,
    uniform_power,
    waterfill,
)
from oracles import brute_force_min_power

sinr = st.floats(0.05, 100.0)
sinr_lists = st.lists(sinr, min_size=1, max_size=12)


def test_waterfill_two_equal_carriers():
    # 2 log2(1 + p) = 2 -> p = 1 on each
    res = waterfill([1.0, 1.0], 2.0, 10.0)
    np.testing.assert_allclose(res.powers, [1.0, 1.0], atol=1e-8)
    assert res.level == pytest.approx(2.0, abs=1e-8)


def test_waterfill_skips_weak_carrier():
    res = waterfill([10.0, 0.01], 1.0, 50.0)
    assert res.powers[1] == 0.0
    assert res.powers[0] == pytest.approx(0.1, abs=1e-8)


def test_waterfill_cap_binds():
    # level 1.5 would put 1.25 W on the strong carrier; the cap holds it at 1
    res = waterfill([4.0, 1.0], np.log2(5.0) + np.log2(1.5), 1.0)
    np.testing.assert_allclose(res.powers, [1.0, 0.5], atol=1e-7)


def test_waterfill_zero_floor():
    res = waterfill([3.0, 4.0], 0.0, 5.0)
    assert not res.powers.any()


def test_waterfill_zero_sinr_gets_nothing():
    res = waterfill([0.0, 2.0], 1.0, 5.0)
    assert res.powers[0] == 0.0


def test_waterfill_infeasible_reports_maximum():
    with pytest.raises(InfeasibleError) as err:
        waterfill([1.0], 10.0, 1.0, "sensing")
    assert err.value.service == "sensing"
    assert err.value.max_achievable == pytest.approx(1.0)
    with pytest.raises(InfeasibleError) as err:
        waterfill([], 1.0, 1.0)
    assert err.value.max_achievable == 0.0


@given(sinr_lists, st.floats(0.01, 1.0), st.floats(0.5, 50.0))
def test_waterfill_kkt(s, frac, p_max):
    s = np.array(s)
    floor = frac * float(np.sum(np.log2(1 + p_max * s)))
    res = waterfill(s, floor, p_max)
    p = res.powers
    assert np.all(p >= 0) and np.all(p <= p_max)
    assert res.achieved >= floor - 1e-6
    ideal = res.level - 1 / s
    inner = (p > 0) & (p < p_max)
    assert np.all(np.abs(p[inner] - ideal[inner]) <= 1e-9)
    assert np.all(ideal[p == 0] <= 1e-9)
    assert np.all(ideal[p == p_max] >= p_max - 1e-9)


@given(st.lists(st.floats(0.2, 20.0), min_size=1, max_size=3), st.floats(0.05, 0.9))
def test_waterfill_matches_brute_force(s, frac):
    p_max = 3.0
    floor = frac * float(np.sum(np.log2(1 + p_max * np.array(s))))
    got = waterfill(s, floor, p_max).powers.sum()
    ref = brute_force_min_power(s, floor, p_max)
    assert ref - 0.01 <= got <= ref + 1e-7


@given(sinr_lists, st.floats(0.05, 0.9))
def test_uniform_never_beats_waterfill(s, frac):
    p_max = 20.0
    floor = frac * float(np.sum(np.log2(1 + p_max * np.array(s))))
    u = uniform_power(s, floor, p_max)
    assert np.all(u == u[0])
    assert float(np.sum(np.log2(1 + u * np.array(s)))) >= floor - 1e-6
    assert waterfill(s, floor, p_max).powers.sum() <= u.sum() + 1e-6


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), min_size=1, max_size=30),
       st.floats(0.01, 5.0))
def test_partition_invariant(pairs, eta):
    com, rad = np.array(pairs).T
    part = partition_subcarriers(SinrProfile(com, rad), eta)
    c, r = set(part.comm), set(part.radar)
    assert c.isdisjoint(r) and c | r == set(range(len(pairs)))
    np.testing.assert_array_equal(part.gamma, com >= eta * rad)


@given(st.lists(st.tuples(sinr, sinr), min_size=2, max_size=20), st.floats(0.05, 4.0), st.floats(0.05, 4.0))
def test_partition_monotone_in_eta(pairs, e1, e2):
    assume(e1 < e2)
    prof = SinrProfile(*np.array(pairs).T)
    assert np.all(partition_subcarriers(prof, e2).gamma <= partition_subcarriers(prof, e1).gamma)


def test_partition_tie_goes_to_communication():
    part = partition_subcarriers(SinrProfile([2.0, 1.0], [1.0, 1.0]), 2.0)
    assert list(part.gamma) == [True, False]


def test_rate_and_mi():
    prof = SinrProfile([1.0, 3.0], [7.0, 1.0])
    part = partition_subcarriers(prof, 1.0)
    p = np.array([1.0, 1.0])
    assert comm_rate(part, p, prof) == pytest.approx(2.0)
    assert sensing_mi(part, p, prof) == pytest.approx(3.0)


def test_profile_validation():
    with pytest.raises(ValueError):
        SinrProfile([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        SinrProfile([-1.0], [1.0])
    with pytest.raises(ValueError):
        SinrProfile([np.nan], [1.0])


def test_eta_grid():
    g = eta_grid((0.1, 3.0, 0.1))
    assert len(g) == 30 and g[0] == 0.1 and g[-1] == 3.0
    assert list(eta_grid((1.0, 1.0, 0.5))) == [1.0]


def _profile(seed, n=128):
    rng = np.random.default_rng(seed)
    return SinrProfile(10 ** rng.uniform(0, 2, n), 10 ** rng.uniform(0, 2, n))


def test_sweep_picks_cheapest_feasible_point():
    qos = QosConstraints(c_min=100, i_min=100, p_max=50)
    res = sweep_eta(_profile(1), qos)
    feasible = [pt for pt in res.curve if pt.feasible]
    assert res.best.total_w == pytest.approx(min(pt.power_total_w for pt in feasible))
    assert len(res.curve) == 30
    for pt in res.curve:
        assert pt.n_com + pt.n_rad == 128


def test_sweep_all_infeasible():
    qos = QosConstraints(c_min=1e5, i_min=1e5, p_max=1)
    with pytest.raises(InfeasibleError):
        sweep_eta(_profile(2), qos)


def test_zero_floors_give_zero_power():
    res = allocate_joint(_profile(3), 1.0, QosConstraints(c_min=0, i_min=0))
    assert res.total_w == 0.0


def test_allocation_meets_floors():
    qos = QosConstraints(c_min=150, i_min=150)
    res = allocate_joint(_profile(4), 1.0, qos)
    assert res.power.achieved_rate >= qos.c_min - 1e-6
    assert res.power.achieved_mi >= qos.i_min - 1e-6
    assert res.power_com + res.power_rad == pytest.approx(res.total_w)


def test_joint_not_worse_than_baselines():
    qos = QosConstraints(c_min=150, i_min=150)
    prof = _profile(5)
    jspa = allocate_joint(prof, 1.0, qos)
    base = raca_baselines(prof, 1.0, qos, np.random.default_rng(0))
    assert set(base) == {"raca1", "raca2", "raca3"}
    assert jspa.total_w <= base["raca1"].total_w + 1e-9
    for res in base.values():
        if not isinstance(res, InfeasibleError):
            assert res.power.achieved_rate >= qos.c_min - 1e-6


def test_random_partition_keeps_count(rng):
    part = random_partition(20, 7, rng)
    assert part.gamma.sum() == 7


def test_qos_validation():
    with pytest.raises(ValueError):
        QosConstraints(p_max=0)
    with pytest.raises(ValueError):
        QosConstraints(eta_range=(2.0, 1.0, 0.1))
    with pytest.raises(ValueError):
        QosConstraints(c_min=-1)


def test_rate_examples():
    from isacsim.allocator import SubcarrierPartition
    prof = SinrProfile([7.0, 2.0], [1.5, 1.5])
    none = SubcarrierPartition([False, False])
    every = SubcarrierPartition([True, True])
    assert comm_rate(none, [1, 1], prof) == 0.0
    assert comm_rate(SubcarrierPartition([True]), [1.0], SinrProfile([7.0], [0.0])) == pytest.approx(3.0)
    assert comm_rate(every, [0, 0], prof) == 0.0
    assert sensing_mi(every, [1, 1], prof) == 0.0
    assert sensing_mi(none, [2, 2], prof) == pytest.approx(2 * np.log2(4.0))


def test_partition_examples():
    assert partition_subcarriers(SinrProfile([2.0], [1.0]), 1.9).gamma[0]
    assert partition_subcarriers(SinrProfile([3.0], [2.0]), 1.5).gamma[0]
    assert not partition_subcarriers(SinrProfile([5.0, 9.0], [0.1, 0.2]), 1e9).gamma.any()


def test_waterfill_examples():
    assert waterfill([1.0], 3.0, 50.0).powers[0] == pytest.approx(7.0, abs=1e-7)
    s, f = 2.5, 5.0
    np.testing.assert_allclose(waterfill([s, s], f, 50.0).powers, (2 ** (f / 2) - 1) / s, atol=1e-7)


def test_one_service_reduces_to_waterfill():
    prof = SinrProfile([3.0, 1.0, 0.5], [0.1, 0.1, 0.1])
    res = allocate_joint(prof, 0.1, QosConstraints(c_min=4.0, i_min=0.0))
    assert res.partition.gamma.all()
    np.testing.assert_allclose(res.power.p, waterfill(prof.sinr_com, 4.0, 50.0).powers)


def test_single_point_sweep():
    qos = QosConstraints(c_min=50, i_min=50, eta_range=(1.2, 1.2, 0.1))
    res = sweep_eta(_profile(6), qos)
    assert res.best_eta == 1.2 and len(res.curve) == 1


def test_symmetric_profile_uniform_equals_waterfill():
    qos = QosConstraints(c_min=20, i_min=20)
    prof = SinrProfile(np.r_[np.full(8, 4.0), np.full(8, 1.0)], np.r_[np.full(8, 1.0), np.full(8, 4.0)])
    jspa = allocate_joint(prof, 1.0, qos)
    raca1 = raca_baselines(prof, 1.0, qos, np.random.default_rng(0))["raca1"]
    np.testing.assert_allclose(raca1.power.p, jspa.power.p, rtol=1e-6)
