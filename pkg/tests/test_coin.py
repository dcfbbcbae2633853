from collections import Counter

import pytest

from dagbab.coin import CoinOracle, coin_value, splitmix64


def test_splitmix64_reference_values():
    # first outputs of the reference generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert splitmix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4


def test_gate_needs_f_plus_one_callers():
    coin = CoinOracle(4, 1, seed=11)
    assert coin.choose_leader(0, 1) is None
    assert coin.adversary_peek(1) is None
    assert coin.choose_leader(0, 1) is None  # same caller again does not count
    leader = coin.choose_leader(2, 1)
    assert leader is not None
    assert coin.adversary_peek(1) == leader


def test_all_callers_agree():
    coin = CoinOracle(7, 2, seed=5)
    values = [coin.choose_leader(p, 3) for p in range(7)]
    assert values[:2] == [None, None]
    assert len(set(values[2:])) == 1
    assert values[2] == coin_value(5, 3, 7)


def test_peek_before_any_invocation_is_empty():
    coin = CoinOracle(4, 1, seed=0)
    assert coin.adversary_peek(1) is None


def test_eager_processes_count_toward_gate():
    coin = CoinOracle(4, 1, seed=2, eager=frozenset({3}))
    assert coin.choose_leader(0, 1) is not None


def test_reveal_listener_called_once():
    coin = CoinOracle(4, 1, seed=9)
    seen = []
    coin.on_reveal(lambda w, l: seen.append((w, l)))
    for p in range(4):
        coin.choose_leader(p, 2)
    assert seen == [(2, coin_value(9, 2, 4))]


def test_waves_start_at_one():
    with pytest.raises(ValueError):
        CoinOracle(4, 1, 0).choose_leader(0, 0)


def test_deterministic_across_oracles():
    a, b = CoinOracle(4, 1, 123), CoinOracle(4, 1, 123)
    for w in range(1, 50):
        for p in (0, 1):
            a.choose_leader(p, w)
            b.choose_leader(p, w)
    assert a.revealed == b.revealed


@pytest.mark.parametrize("n", [4, 7, 10])
def test_leader_frequency_uniform(n):
    # One fixed seed; a +-0.01 band is about 2.3 standard deviations at n=4,
    # so the pooled chi-square test below is the stronger statement.
    waves = 10_000
    counts = Counter(coin_value(0, w, n) for w in range(1, waves + 1))
    for p in range(n):
        assert abs(counts[p] / waves - 1 / n) <= 0.01


# 99.9% quantiles of chi-square with n-1 degrees of freedom
CHI2_999 = {4: 16.266, 7: 22.458, 10: 27.877}


@pytest.mark.parametrize("n", [4, 7, 10])
def test_leader_frequency_chi_square(n):
    waves = 20_000
    counts = Counter(coin_value(s, w, n) for s in range(5) for w in range(1, waves // 5 + 1))
    expected = waves / n
    stat = sum((counts[p] - expected) ** 2 / expected for p in range(n))
    assert stat < CHI2_999[n]
