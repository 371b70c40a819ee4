import math
import zlib
from fractions import Fraction
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flsim.attacks import (
    AttackConfig,
    craft_malicious,
    flip_labels,
    lie_attack,
    lie_z,
    minmax_attack,
    minsum_attack,
    perturbation_direction,
    search_gamma,
    select_compromised,
)
from flsim.data import SynthSpec, synth_generate
from flsim.errors import ConfigError, FLSimError
from oracles import grid_gamma, oracle_feasible, random_attack_instance


ATTACKS = {"min_max": minmax_attack, "min_sum": minsum_attack}


# ---- selection and label flipping -------------------------------------------------


class TestSelectCompromised:
    def test_zero(self):
        assert select_compromised(200, 0.0, 1) == frozenset()

    def test_five_percent_of_200(self):
        ids = select_compromised(200, 0.05, 3)
        assert len(ids) == 10 and all(0 <= i < 200 for i in ids)

    def test_deterministic(self):
        assert select_compromised(50, 0.3, 9) == select_compromised(50, 0.3, 9)

    def test_half_rounds_up(self):
        assert len(select_compromised(20, 0.05, 0)) == 1
        assert len(select_compromised(10, 0.25, 0)) == 3

    def test_out_of_range(self):
        with pytest.raises(FLSimError):
            select_compromised(10, 1.5, 0)


class TestFlipLabels:
    def data(self, n=10):
        return synth_generate(SynthSpec(n // 2, n - n // 2, 3, attribute_domain=2), 0)

    def test_p_zero_identity(self):
        d = self.data()
        assert flip_labels(d, 0.0, 1) is d

    def test_p_one_flips_all(self):
        d = self.data()
        assert np.array_equal(flip_labels(d, 1.0, 1).y, 1 - d.y)

    def test_half_flips_five(self):
        d = self.data()
        assert int((flip_labels(d, 0.5, 4).y != d.y).sum()) == 5

    def test_involution(self):
        d = self.data(12)
        assert np.array_equal(flip_labels(flip_labels(d, 1.0, 2), 1.0, 3).y, d.y)

    @settings(max_examples=100)
    @given(st.integers(1, 40), st.fractions(0, 1), st.integers(0, 1000))
    def test_exact_count_and_payload_untouched(self, n, p, seed):
        d = self.data(n)
        out = flip_labels(d, float(p), seed)
        assert int((out.y != d.y).sum()) == math.ceil(Fraction(float(p)) * n)
        assert np.array_equal(out.X, d.X)
        assert np.array_equal(out.attributes, d.attributes)

    def test_original_not_mutated(self):
        d = self.data()
        before = d.y.copy()
        flip_labels(d, 1.0, 0)
        assert np.array_equal(d.y, before)


# ---- LIE --------------------------------------------------------------------------


class TestLie:
    def test_hand_example(self):
        assert lie_attack([[1.0], [3.0]], 20, 2, z=1.0).tolist() == [1.0]

    def test_zero_spread(self):
        assert lie_attack([[0.5, -1.0]] * 3, 20, 3).tolist() == [0.5, -1.0]

    def test_forced_zero_z(self):
        assert lie_attack([[1.0, 2.0], [3.0, 6.0]], 20, 2, z=0.0).tolist() == [2.0, 4.0]

    def test_z_formula(self):
        # n=20, m=2: s = 11 - 2 = 9, z = inv_cdf(9 / 18) = 0
        assert lie_z(20, 2) == pytest.approx(0.0, abs=1e-12)
        # n=50, m=5: s = 21, (45 - 21) / 45
        assert lie_z(50, 5) == NormalDist().inv_cdf(24 / 45)

    def test_z_clamped_when_attackers_are_majority(self):
        assert math.isfinite(lie_z(10, 8))
        assert lie_z(10, 9) == 0.0

    def test_empty(self):
        with pytest.raises(FLSimError):
            lie_attack([], 10, 0)


# ---- perturbation directions ------------------------------------------------------


class TestPerturbation:
    def test_inverse_unit(self):
        np.testing.assert_allclose(perturbation_direction("inverse_unit", [[3.0, 4.0]]), [-0.6, -0.8])

    def test_inverse_sign(self):
        v = perturbation_direction("inverse_sign", [[5.0, -2.0]])
        np.testing.assert_allclose(v, np.array([-1.0, 1.0]) / math.sqrt(2))

    def test_inverse_std(self):
        v = perturbation_direction("inverse_std", [[0.0, 0.0], [2.0, 4.0]])
        np.testing.assert_allclose(v, -np.array([1.0, 2.0]) / math.sqrt(5))

    @pytest.mark.parametrize("kind", ["inverse_unit", "inverse_sign", "inverse_std"])
    def test_zero_norm_fallback(self, kind):
        v = perturbation_direction(kind, [[0.0, 0.0, 0.0]] * 2, seed=4)
        assert np.linalg.norm(v) == pytest.approx(1.0)
        assert np.array_equal(v, perturbation_direction(kind, [[0.0, 0.0, 0.0]] * 2, seed=4))


# ---- MIN-MAX and MIN-SUM ----------------------------------------------------------


@pytest.mark.parametrize("algorithm", ["min_max", "min_sum"])
class TestOptimisedAttacks:
    def test_two_point_example(self, algorithm):
        out, gamma = ATTACKS[algorithm]([[0.0], [2.0]], "inverse_sign", return_gamma=True)
        assert gamma == pytest.approx(1.0, abs=1e-5) and gamma <= 1.0
        assert out[0] == pytest.approx(0.0, abs=1e-5)

    def test_two_point_grid(self, algorithm):
        U = np.array([[0.0], [2.0]])
        g = grid_gamma(algorithm, U, U.mean(axis=0), np.array([-1.0]), 1e-3, 3.0)
        assert g == pytest.approx(1.0, abs=1e-4)

    def test_identical_updates(self, algorithm):
        out = ATTACKS[algorithm]([[0.25, -4.0]] * 4)
        assert out.tolist() == [0.25, -4.0]

    def test_empty(self, algorithm):
        with pytest.raises(FLSimError):
            ATTACKS[algorithm]([])

    @pytest.mark.parametrize("perturbation", ["inverse_unit", "inverse_sign", "inverse_std"])
    def test_constraint_tight_against_grid(self, algorithm, perturbation):
        rng = np.random.default_rng(zlib.crc32(f"{algorithm}/{perturbation}".encode()))
        tau = 1e-3
        for _ in range(10):
            U = random_attack_instance(rng)
            mu = U.mean(axis=0)
            d = perturbation_direction(perturbation, U)
            _, gamma = ATTACKS[algorithm](U, perturbation, tau=tau, return_gamma=True)
            feas = oracle_feasible(algorithm, U, mu, d, [gamma, gamma + tau])
            assert feas[0] and not feas[1]
            assert abs(gamma - grid_gamma(algorithm, U, mu, d, tau, gamma + 2 * tau)) <= tau


def test_search_gamma_expands_past_init():
    assert search_gamma(lambda g: g <= 37.0, 1.0, 1e-6) == pytest.approx(37.0, abs=1e-6)


def test_search_gamma_respects_cap():
    assert search_gamma(lambda g: True, 1.0, 1e-3, max_steps=5) == 16.0


class TestCraft:
    def test_dispatch(self):
        U = np.random.default_rng(0).normal(size=(4, 3))
        assert np.array_equal(craft_malicious(AttackConfig("model_poison", 0.1, algorithm="min_sum"), U, 20), minsum_attack(U))
        assert np.array_equal(
            craft_malicious(AttackConfig("model_poison", 0.1, algorithm="lie"), U, 20), lie_attack(U, 20, 4)
        )

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            AttackConfig("sabotage")
        with pytest.raises(ConfigError):
            AttackConfig("data_poison", M=2.0)
        assert not AttackConfig("data_poison", M=0.0).active
