import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from coagfrag.grid import Grid, cosine_mode, diffuse, integrate, laplacian, neumann_eigenvalue


def test_grid_geometry():
    g = Grid(2, (2.0, 1.0), (4, 5))
    assert g.shape == (4, 5) and g.ncells == 20
    assert g.spacing == (0.5, 0.2)
    assert g.cell_volume == pytest.approx(0.1)
    np.testing.assert_allclose(g.centers[0], [0.25, 0.75, 1.25, 1.75])


def test_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        Grid(3, (1, 1, 1), (2, 2, 2))
    with pytest.raises(ValueError):
        Grid(1, -1.0, 4)
    with pytest.raises(ValueError):
        Grid(2, (1.0,), (4, 4))


class TestIntegrate:
    def test_constant(self):
        g = Grid(1, 2.0, 10)
        assert integrate(np.full(10, 3.0), g) == pytest.approx(6.0, rel=1e-15)

    def test_single_cell(self):
        g = Grid(1, 1.0, 8)
        f = np.zeros(8)
        f[3] = 2.5
        assert integrate(f, g) == 2.5 * g.cell_volume

    def test_linear_is_exact(self):
        g = Grid(1, 1.0, 100)
        assert integrate(g.centers[0], g) == pytest.approx(0.5, abs=1e-15)

    def test_leading_axes(self):
        g = Grid(2, (1.0, 1.0), (3, 3))
        f = np.stack([np.ones((3, 3)), 2 * np.ones((3, 3))])
        np.testing.assert_allclose(integrate(f, g), [1.0, 2.0])


class TestLaplacian:
    def test_constant_is_kernel(self):
        g = Grid(2, (1.0, 2.0), (6, 7))
        assert np.all(laplacian(np.full(g.shape, 4.2), g) == 0)

    @pytest.mark.parametrize("N", [8, 33, 128])
    def test_cosine_eigenmode(self, N):
        g = Grid(1, 3.0, N)
        h = g.spacing[0]
        f = cosine_mode(g, [1])
        lam = neumann_eigenvalue(1, N, h)
        # independent form of the same eigenvalue, written with the spacing
        assert lam == pytest.approx(-(2 / h**2) * (1 - np.cos(np.pi * h / 3.0)), rel=1e-12)
        np.testing.assert_allclose(laplacian(f, g), lam * f, rtol=1e-12, atol=1e-12 * abs(lam))

    def test_linear_field(self):
        g = Grid(1, 1.0, 20)
        L = laplacian(g.centers[0], g)
        assert np.all(np.abs(L[1:-1]) < 1e-9)
        assert L[0] > 0 and L[-1] < 0
        assert abs(L.sum()) < 1e-9


class TestDiffuse:
    def test_constant_preserved(self):
        g = Grid(1, 1.0, 16)
        out = diffuse(np.full(16, 2.0), g, 1.5, 0.1)
        np.testing.assert_allclose(out, 2.0, rtol=1e-14)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_eigenmode_scaling(self, dim):
        g = Grid(1, 1.0, 32) if dim == 1 else Grid(2, (1.0, 1.0), (32, 32))
        modes = [2] if dim == 1 else [2, 0]
        f = cosine_mode(g, modes)
        d, dt = 0.7, 0.01
        lam = neumann_eigenvalue(2, 32, 1 / 32)
        np.testing.assert_allclose(diffuse(f, g, d, dt), f / (1 - dt * d * lam), atol=1e-13)

    def test_matches_dense_solve(self):
        g = Grid(1, 2.0, 12)
        rng = np.random.default_rng(0)
        f = rng.random(12)
        h = g.spacing[0]
        # dense Neumann stencil as an independent oracle
        Lm = np.diag(-2.0 * np.ones(12)) + np.diag(np.ones(11), 1) + np.diag(np.ones(11), -1)
        Lm[0, 0] = Lm[-1, -1] = -1.0
        M = np.eye(12) - 0.05 * 0.8 * Lm / h**2
        np.testing.assert_allclose(diffuse(f, g, 0.8, 0.05), np.linalg.solve(M, f), rtol=1e-13)

    def test_per_species_coefficients(self):
        g = Grid(1, 1.0, 10)
        f = np.stack([cosine_mode(g, [1]), cosine_mode(g, [1])])
        out = diffuse(f, g, np.array([1.0, 2.0]), 0.01)
        np.testing.assert_allclose(out[0], diffuse(f[0], g, 1.0, 0.01))
        np.testing.assert_allclose(out[1], diffuse(f[1], g, 2.0, 0.01))

    def test_rejects_bad_arguments(self):
        g = Grid(1, 1.0, 4)
        with pytest.raises(ValueError):
            diffuse(np.ones(4), g, 0.0, 0.1)
        with pytest.raises(ValueError):
            diffuse(np.ones(4), g, 1.0, 0.0)
        with pytest.raises(ValueError):
            diffuse(np.array([1.0, np.nan, 1.0, 1.0]), g, 1.0, 0.1)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 9, 7), elements=st.floats(0, 10)),
           st.floats(1e-3, 10.0), st.floats(1e-4, 1.0))
    def test_conservation_and_positivity(self, f, d, dt):
        g = Grid(2, (1.0, 0.7), (9, 7))
        out = diffuse(f, g, d, dt)
        tot_in, tot_out = integrate(f, g), integrate(out, g)
        np.testing.assert_allclose(tot_out, tot_in, rtol=1e-13, atol=1e-13 * max(1.0, tot_in.max()))
        assert out.min() >= -1e-13 * max(1.0, f.max())
