import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coagfrag.grid import Grid
from coagfrag.kernels import (
    CoagulationTable,
    DaughterTable,
    FragmentationRates,
    FragmentationTable,
    KernelSet,
    PowerLawCoagulation,
    PowerLawDaughterDistribution,
)
from coagfrag.oracle import brute_force_weak_rate
from coagfrag.reaction import (
    ReactionOperator,
    TruncatedState,
    TruncationMode,
    coag_fast,
    coag_gain,
    coag_loss,
    frag_gain,
    frag_loss,
    mass_rate,
    rhs,
    weak_moment_rate,
    weak_moment_rate_parts,
)

CONS, FULL = TruncationMode.CONSERVATIVE, TruncationMode.FULL_LOSS
G1 = Grid(1, 1.0, 1)


def ks(C_Q=0.5, a=0.0, b=0.0, C_F=0.0, g=1.0, nu=0.0):
    return KernelSet(PowerLawCoagulation(C_Q, a, b), FragmentationRates(C_F, g),
                     PowerLawDaughterDistribution(nu))


def random_state(rng, n, grid=G1):
    c = rng.random((n,) + grid.shape) * rng.random((n,) + (1,) * grid.dim) ** 3
    return TruncatedState(n, grid, c)


def table_set(n, a_val=1.0, B=None, beta=None):
    A = np.full((n, n), a_val)
    B = np.zeros(n) if B is None else np.asarray(B, float)
    beta = np.zeros((n, n)) if beta is None else beta
    return KernelSet(CoagulationTable(A), FragmentationTable(B), DaughterTable(beta))


class TestState:
    def test_shape_checked(self):
        with pytest.raises(ValueError):
            TruncatedState(3, Grid(1, 1.0, 4), np.zeros((3, 5)))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            TruncatedState(2, G1, np.array([[1.0], [np.inf]]))

    def test_mode_parse(self):
        assert TruncationMode.parse("full_loss") is FULL
        with pytest.raises(ValueError, match="truncation.mode"):
            TruncationMode.parse("partial")


class TestHandValues:
    def test_gain_of_monomer_is_empty(self):
        s = random_state(np.random.default_rng(0), 6)
        assert np.all(coag_gain(s, ks(), 1) == 0)

    def test_two_species_gain(self):
        s = TruncatedState.uniform(Grid(1, 1.0, 3), [1.0, 0.0])
        np.testing.assert_array_equal(coag_gain(s, table_set(2), 2), 0.5)

    def test_monodisperse_gain_support(self):
        s = TruncatedState.uniform(G1, [1.0, 0, 0, 0, 0])
        for i in range(3, 6):
            assert coag_gain(s, ks(0.5, 1, 1), i)[0] == 0

    def test_loss_values(self):
        s = TruncatedState.uniform(G1, [1.0, 0.0])
        k = table_set(2)
        assert coag_loss(s, k, 1, CONS)[0] == 1.0
        assert coag_loss(s, k, 2, CONS)[0] == 0.0
        assert coag_loss(s, k, 2, FULL)[0] == 0.0
        assert np.all(coag_loss(TruncatedState.uniform(G1, [0.0, 1.0]), k, 1) == 0)

    def test_frag_values(self):
        beta = np.zeros((3, 3))
        beta[1, 0] = 2.0
        beta[2, 0], beta[2, 1] = 1.0, 1.0
        k = table_set(3, 0.0, B=[0.0, 4.0, 1.0], beta=beta)
        s = TruncatedState.uniform(G1, [0.0, 1.0, 0.0])
        assert frag_gain(s, k, 1)[0] == 8.0
        assert frag_gain(s, k, 3)[0] == 0.0
        assert frag_loss(s, k, 2)[0] == 4.0
        assert frag_loss(s, k, 1)[0] == 0.0
        z = TruncatedState.uniform(G1, [0.0, 0.0, 0.0])
        assert frag_loss(z, k, 2)[0] == 0.0

    def test_rhs_two_species(self):
        s = TruncatedState.uniform(G1, [1.0, 0.0])
        r = rhs(s, table_set(2), CONS)
        np.testing.assert_array_equal(r[:, 0], [-1.0, 0.5])
        assert mass_rate(s, r)[0] == 0.0

    def test_weak_rate_second_moment(self):
        s = TruncatedState.uniform(G1, [1.0, 0.0])
        assert weak_moment_rate(s, table_set(2), [1.0, 4.0])[0] == pytest.approx(1.0, rel=1e-15)

    def test_fast_gain_small_case(self):
        s = TruncatedState.uniform(G1, [1.0, 1.0, 0.0, 0.0])
        gain = coag_fast(s, PowerLawCoagulation(0.5, 0, 0))[:, 0]
        # direct enumeration of (1/2) sum_{j<i} c_{i-j} c_j with a = 1
        c = [1.0, 1.0, 0.0, 0.0]
        oracle = [0.5 * sum(c[i - j - 1] * c[j - 1] for j in range(1, i)) for i in range(1, 5)]
        np.testing.assert_allclose(gain, oracle, atol=1e-15)
        np.testing.assert_allclose(oracle, [0, 0.5, 1.0, 0.5])

    def test_fast_gain_support(self):
        c = np.zeros(12)
        c[2] = 1.3
        s = TruncatedState.uniform(G1, c)
        gain = coag_fast(s, PowerLawCoagulation(0.5, 0.5, 0.5))[:, 0]
        assert np.argmax(np.abs(gain)) == 5
        assert np.all(np.abs(np.delete(gain, 5)) < 1e-14)


class TestOperatorPaths:
    @pytest.mark.parametrize("mode", [CONS, FULL])
    @pytest.mark.parametrize("params", [(0.5, 0.5, 0.5, 1.0, 2.0, 1.0), (0.3, 0.0, 1.0, 0.2, 3.0, 0.0)])
    def test_fast_equals_direct(self, mode, params):
        C_Q, a, b, C_F, g, nu = params
        k = ks(C_Q, a, b, C_F, g, nu)
        rng = np.random.default_rng(11)
        fast = ReactionOperator(k, 96, mode, "fast")
        direct = ReactionOperator(k, 96, mode, "direct")
        for _ in range(100):
            c = random_state(rng, 96, Grid(1, 1.0, 3)).c
            scale = np.abs(direct.coag_gain(c)).max() + np.abs(direct.coag_loss(c)).max()
            np.testing.assert_allclose(fast.rhs(c), direct.rhs(c), atol=1e-10 * scale)

    def test_operator_matches_per_species_loops(self):
        k = ks(0.4, 0.3, 0.8, 0.5, 1.5, 0.5)
        rng = np.random.default_rng(2)
        s = random_state(rng, 20, Grid(2, (1, 1), (2, 3)))
        for mode in (CONS, FULL):
            op = ReactionOperator(k, 20, mode, "direct")
            loops = np.stack([coag_gain(s, k, i) - coag_loss(s, k, i, mode)
                              + frag_gain(s, k, i) - frag_loss(s, k, i) for i in range(1, 21)])
            np.testing.assert_allclose(op.rhs(s.c), loops, rtol=1e-13, atol=1e-15)

    def test_fast_path_needs_power_law(self):
        with pytest.raises(ValueError):
            ReactionOperator(table_set(4), 4, CONS, "fast")

    def test_zero_kernels_give_zero(self):
        s = random_state(np.random.default_rng(1), 10)
        assert np.all(rhs(s, ks(0.0, 0, 0, 0.0), CONS) == 0)


class TestMassIdentity:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 200), st.floats(0, 1), st.floats(0, 1), st.floats(0, 3),
           st.floats(0, 2), st.integers(0, 2**31))
    def test_conservative_mass_rate_vanishes(self, n, a, b, g, nu, seed):
        k = ks(0.5, a, b, 1.0, g, nu)
        s = random_state(np.random.default_rng(seed), n)
        op = ReactionOperator(k, n, CONS)
        c = s.c
        terms = op.coag_gain(c) + op.coag_loss(c) + op.frag_gain(c) + op.frag_loss(c)
        scale = mass_rate(s, terms)
        assert np.all(np.abs(mass_rate(s, op.rhs(c))) <= 1e-12 * scale)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 100), st.integers(0, 2**31))
    def test_full_loss_leaks_mass(self, n, seed):
        s = random_state(np.random.default_rng(seed), n)
        r = rhs(s, ks(0.5, 1, 1), FULL)
        assert np.all(mass_rate(s, r) <= 1e-12 * np.abs(r).max())


class TestWeakForm:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for trial in range(100):
            k = ks(0.5, rng.random(), rng.random(), rng.random(), 3 * rng.random(), 2 * rng.random())
            mode = CONS if trial % 2 else FULL
            s = random_state(rng, 64)
            phi = rng.standard_normal(64)
            got = weak_moment_rate(s, k, phi, mode)[0]
            ref = brute_force_weak_rate(s, k, phi, mode)
            op = ReactionOperator(k, 64, mode, "direct")
            c = s.c
            parts = (op.coag_gain(c) + op.coag_loss(c) + op.frag_gain(c) + op.frag_loss(c))[:, 0]
            assert abs(got - ref) <= 1e-12 * np.sum(np.abs(phi) * parts)

    def test_agrees_with_rhs_sum(self):
        rng = np.random.default_rng(6)
        k = ks(0.5, 0.5, 0.2, 1.0, 2.0, 1.0)
        for mode in (CONS, FULL):
            s = random_state(rng, 40, Grid(1, 1.0, 5))
            phi = rng.random(40)
            r = rhs(s, k, mode)
            np.testing.assert_allclose(weak_moment_rate(s, k, phi, mode),
                                       np.tensordot(phi, r, axes=(0, 0)), rtol=1e-11, atol=1e-11)

    def test_mass_weight_vanishes(self):
        s = random_state(np.random.default_rng(7), 30)
        v = weak_moment_rate(s, ks(0.5, 1, 1, 1.0, 2.0), np.arange(1.0, 31.0), CONS)
        assert abs(v[0]) < 1e-11

    def test_unit_weight_parts(self):
        rng = np.random.default_rng(8)
        k = ks(0.5, 0.5, 1.0, 0.7, 1.5, 1.0)
        s = random_state(rng, 25)
        c = s.c[:, 0]
        t = k.tables(25)
        coag, frag = weak_moment_rate_parts(s, k, np.ones(25), CONS)
        mask = np.add.outer(np.arange(1, 26), np.arange(1, 26)) <= 25
        expect_coag = -0.5 * np.sum(np.where(mask, t.A, 0) * np.outer(c, c))
        expect_frag = np.sum(t.B * c * (t.beta.sum(axis=1) - 1))
        assert coag[0] == pytest.approx(expect_coag, rel=1e-12)
        assert frag[0] == pytest.approx(expect_frag, rel=1e-12)

    def test_zero_weight(self):
        s = random_state(np.random.default_rng(9), 12)
        assert weak_moment_rate(s, ks(0.5, 1, 1, 1, 2), np.zeros(12))[0] == 0.0
        assert brute_force_weak_rate(s, ks(0.5, 1, 1, 1, 2), np.zeros(12)) == 0.0
