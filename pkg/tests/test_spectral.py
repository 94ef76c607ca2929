import numpy as np
import pytest

from surfhps import (
    InvalidOrderError,
    cc_weights,
    cheb1_nodes,
    cheb2_nodes,
    diff_matrix,
    fejer1_weights,
    interp_matrix,
    tensor_diff,
)
from surfhps.spectral import FIRST_KIND, SECOND_KIND


class TestNodes:
    def test_second_kind_small(self):
        assert np.allclose(cheb2_nodes(1).nodes, [-1, 1])
        assert np.allclose(cheb2_nodes(2).nodes, [-1, 0, 1])
        s = np.sqrt(2) / 2
        assert np.allclose(cheb2_nodes(4).nodes, [-1, -s, 0, s, 1])

    def test_second_kind_structure(self):
        for p in range(1, 21):
            g = cheb2_nodes(p)
            assert g.kind == SECOND_KIND
            assert len(g) == p + 1
            assert g.nodes[0] == -1.0 and g.nodes[-1] == 1.0
            assert np.all(np.diff(g.nodes) > 0)

    def test_first_kind_small(self):
        assert np.allclose(cheb1_nodes(0).nodes, [0.0])
        s2 = np.sqrt(2) / 2
        assert np.allclose(cheb1_nodes(1).nodes, [-s2, s2])
        s3 = np.sqrt(3) / 2
        assert np.allclose(cheb1_nodes(2).nodes, [-s3, 0, s3])

    def test_first_kind_excludes_endpoints(self):
        for q in range(0, 15):
            g = cheb1_nodes(q)
            assert g.kind == FIRST_KIND
            assert len(g) == q + 1
            assert g.nodes[0] > -1.0 and g.nodes[-1] < 1.0
            assert np.all(np.diff(g.nodes) > 0)

    def test_invalid_orders(self):
        with pytest.raises(InvalidOrderError):
            cheb2_nodes(0)
        with pytest.raises(InvalidOrderError):
            cheb1_nodes(-1)


class TestDiffMatrix:
    def test_p1(self):
        assert np.allclose(diff_matrix(1), [[-0.5, 0.5], [-0.5, 0.5]])

    def test_p2_analytic(self):
        # derivatives of the three Lagrange basis polynomials on {-1, 0, 1}
        expected = [[-1.5, 2.0, -0.5], [-0.5, 0.0, 0.5], [0.5, -2.0, 1.5]]
        assert np.allclose(diff_matrix(2), expected, atol=1e-14)

    @pytest.mark.parametrize("p", range(1, 21))
    def test_annihilates_constants(self, p):
        D = diff_matrix(p)
        assert np.abs(D.sum(axis=1)).max() <= 1e-12 * p**2

    @pytest.mark.parametrize("p", range(1, 13))
    def test_polynomial_exactness(self, p):
        D = diff_matrix(p)
        x = cheb2_nodes(p).nodes
        for k in range(1, p + 1):
            d = D @ x**k
            assert np.allclose(d, k * x ** (k - 1), rtol=1e-10, atol=1e-10)

    def test_cubic(self):
        for p in range(3, 13):
            D = diff_matrix(p)
            x = cheb2_nodes(p).nodes
            assert np.allclose(D @ x**3, 3 * x**2, atol=1e-11)


class TestInterp:
    def test_identity(self):
        g = cheb2_nodes(6)
        assert np.allclose(interp_matrix(g, g), np.eye(7), atol=1e-14)

    def test_partition_of_unity(self):
        M = interp_matrix(cheb2_nodes(9), cheb1_nodes(5))
        assert np.allclose(M.sum(axis=1), 1.0, atol=1e-13)

    def test_quintic(self):
        src = cheb2_nodes(8)
        dst = cheb1_nodes(6)
        M = interp_matrix(src, dst)
        out = M @ src.nodes**5
        assert np.abs(out - dst.nodes**5).max() <= 1e-12

    def test_roundtrip_on_shared_degree(self):
        a = cheb2_nodes(7)
        b = cheb1_nodes(5)
        back = interp_matrix(b, a) @ interp_matrix(a, b)
        # identity on polynomials of degree <= 5
        for k in range(6):
            v = a.nodes**k
            assert np.allclose(back @ v, v, atol=1e-12)


class TestQuadrature:
    def test_small_weights(self):
        assert np.allclose(cc_weights(1), [1.0, 1.0])
        assert np.allclose(cc_weights(2), [1 / 3, 4 / 3, 1 / 3])

    @pytest.mark.parametrize("p", range(1, 25))
    def test_sum_and_positivity(self, p):
        w = cc_weights(p)
        assert abs(w.sum() - 2.0) <= 1e-13
        assert np.all(w > 0)

    @pytest.mark.parametrize("p", [4, 9, 16, 24])
    def test_chebyshev_moments(self, p):
        w = cc_weights(p)
        x = cheb2_nodes(p).nodes
        for k in range(p + 1):
            exact = 0.0 if k % 2 else 2.0 / (1.0 - k**2)
            assert abs(w @ np.cos(k * np.arccos(np.clip(x, -1, 1)))
                       - exact) <= 1e-12

    @pytest.mark.parametrize("q", [0, 3, 8, 14])
    def test_first_kind_rule(self, q):
        w = fejer1_weights(q)
        x = cheb1_nodes(q).nodes
        assert np.all(w > 0)
        for k in range(q + 1):
            exact = 2.0 / (k + 1) if k % 2 == 0 else 0.0
            assert abs(w @ x**k - exact) <= 1e-12


class TestTensorDiff:
    def test_directions(self):
        p = 5
        Dxi, Deta = tensor_diff(p)
        t = cheb2_nodes(p).nodes
        xi = np.repeat(t, p + 1)
        eta = np.tile(t, p + 1)
        assert np.allclose(Dxi @ xi, 1.0, atol=1e-12)
        assert np.allclose(Dxi @ eta, 0.0, atol=1e-12)
        assert np.allclose(Deta @ eta, 1.0, atol=1e-12)
        assert np.allclose(Deta @ xi, 0.0, atol=1e-12)

    def test_eta_squared(self):
        for p in range(2, 9):
            Dxi, Deta = tensor_diff(p)
            t = cheb2_nodes(p).nodes
            eta = np.tile(t, p + 1)
            assert np.allclose(Deta @ eta**2, 2 * eta, atol=1e-10)

    def test_mixed_partials_commute(self):
        p = 6
        Dxi, Deta = tensor_diff(p)
        t = cheb2_nodes(p).nodes
        xi = np.repeat(t, p + 1)
        eta = np.tile(t, p + 1)
        f = xi**2 * eta**2
        assert np.abs(Dxi @ (Deta @ f) - Deta @ (Dxi @ f)).max() <= 1e-9
        assert np.allclose(Dxi @ (Deta @ f), 4 * xi * eta, atol=1e-9)
