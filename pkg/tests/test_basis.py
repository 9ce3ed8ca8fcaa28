import tracemalloc

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_bases
from oracles import basis_pg, central_diff
from sisc.basis import (dual_eval, exact_dual_eval, exact_system, gd_basis_step,
                        half_weights, lambda_floor, load_cross_spectra, precompute_cross_spectra,
                        reconstruction_error, recover_bases, save_cross_spectra, solve_dual,
                        solve_exact_dual, update_bases)
from sisc.errors import DomainError, FormatError, InvalidArgument, NoUpdateError
from sisc.model import SparseCoeffs, reconstruct

# minimum of the constrained basis problem for the instances built by
# _oracle_instance, from tests/oracles.basis_pg (accelerated projected gradient)
PG_BASIS_OPTIMUM = {
    (11, 3, 1, 8, 96, 1.0): 439.1348179254919,
    (12, 4, 2, 12, 128, 1.0): 1143.7712779603723,
    (13, 3, 1, 8, 96, 0.2): 430.4779300413135,
    (14, 3, 1, 8, 96, 0.05): 485.21116577168635,
}


def _oracle_instance(seed, n, F, q, p, m=5):
    r = np.random.default_rng(seed)
    if seed != 14:
        random_bases(r, n, F, q)  # keeps the generator stream used for the frozen values
    T = p - q + 1
    xs, ss = [], []
    for _ in range(m):
        ss.append(np.where(r.random((n, T)) < 0.08, r.laplace(size=(n, T)), 0.0))
        xs.append(r.standard_normal((F, p)))
    return xs, ss


def _random_cs(rng, m=4, n=3, F=1, q=6, p=40, density=0.2):
    T = p - q + 1
    xs = [rng.standard_normal((F, p)) for _ in range(m)]
    ss = [np.where(rng.random((n, T)) < density, rng.standard_normal((n, T)), 0.0) for _ in range(m)]
    return xs, ss, precompute_cross_spectra(xs, ss)


class TestCrossSpectra:
    def test_zero_coeffs(self, rng):
        xs = [rng.standard_normal((1, 20)) for _ in range(3)]
        cs = precompute_cross_spectra(xs, [np.zeros((2, 15))] * 3)
        assert np.all(cs.sts_tril == 0) and np.all(cs.stx == 0)
        ref = sum(np.abs(np.fft.rfft(x[0])) ** 2 for x in xs)
        assert np.allclose(cs.xnorm, ref)

    def test_impulse(self, rng):
        x = rng.standard_normal((1, 16))
        s = np.zeros((1, 13))
        s[0, 0] = 1.0
        cs = precompute_cross_spectra([x], [s])
        assert np.allclose(cs.sts_tril[:, 0], 1.0)
        assert np.allclose(cs.stx[:, 0, 0], np.fft.rfft(x[0]))

    def test_dense_oracle(self, rng):
        xs, ss, cs = _random_cs(rng, m=5, n=3, F=2)
        p = 40
        for t in range(cs.H):
            # row i of S_t holds the DFT of input i's coefficient maps at bin t
            St = np.array([[np.sum(s[j] * np.exp(-2j * np.pi * t * np.arange(s.shape[1]) / p))
                            for j in range(3)] for s in ss])
            Xt = np.array([[np.sum(x[f] * np.exp(-2j * np.pi * t * np.arange(p) / p))
                            for f in range(2)] for x in xs])
            assert np.allclose(cs.sts()[t], St.conj().T @ St, atol=1e-9)
            assert np.allclose(cs.stx[t], St.conj().T @ Xt, atol=1e-9)
            assert cs.xnorm[t] == pytest.approx(np.sum(np.abs(Xt) ** 2), rel=1e-10)

    def test_hermitian_psd(self, rng):
        _, _, cs = _random_cs(rng)
        M = cs.sts()
        assert np.allclose(M, np.conj(np.swapaxes(M, 1, 2)))
        assert np.linalg.eigvalsh(M).min() >= -1e-9

    def test_dim_mismatch(self, rng):
        with pytest.raises(InvalidArgument):
            precompute_cross_spectra([np.ones((1, 20)), np.ones((1, 21))], [np.zeros((2, 15))] * 2)
        with pytest.raises(InvalidArgument):
            precompute_cross_spectra([np.ones((1, 20))], [np.zeros((2, 15))] * 2)

    def test_storage_independent_of_m(self, rng):
        n, q, p = 4, 8, 256
        T = p - q + 1

        def stream(m):
            r = np.random.default_rng(0)
            xs = (r.standard_normal((1, p)) for _ in range(m))
            ss = (np.where(r.random((n, T)) < 0.05, 1.0, 0.0) for _ in range(m))
            tracemalloc.start()
            cs = precompute_cross_spectra(xs, ss)
            peak = tracemalloc.get_traced_memory()[1]
            tracemalloc.stop()
            return cs.nbytes, peak

        b4, peak4 = stream(4)
        b64, peak64 = stream(64)
        assert b4 == b64
        assert peak64 <= 1.25 * peak4

    def test_spill_round_trip(self, tmp_path, rng):
        _, _, cs = _random_cs(rng, F=2)
        save_cross_spectra(tmp_path / "c.sxsp", cs)
        back = load_cross_spectra(tmp_path / "c.sxsp")
        assert (back.p, back.n, back.F, back.m, back.q) == (cs.p, cs.n, cs.F, cs.m, cs.q)
        assert np.array_equal(back.sts_tril, cs.sts_tril) and np.array_equal(back.stx, cs.stx)
        assert np.array_equal(back.xnorm, cs.xnorm)
        raw = (tmp_path / "c.sxsp").read_bytes()
        assert raw[:4] == b"SXSP"
        (tmp_path / "t.sxsp").write_bytes(raw[:-1])
        with pytest.raises(FormatError):
            load_cross_spectra(tmp_path / "t.sxsp")


class TestDual:
    def test_weights(self):
        assert list(half_weights(4)) == [1, 2, 1] and list(half_weights(5)) == [1, 2, 2]

    def test_zero_coeffs(self, rng):
        xs = [rng.standard_normal((1, 20))]
        cs = precompute_cross_spectra(xs, [np.zeros((2, 15))])
        lam = np.array([0.5, 2.0])
        st_ = dual_eval(cs, lam, 3.0)
        assert st_.dual_value == pytest.approx(20 * np.sum(xs[0] ** 2) - 3.0 * 2.5, rel=1e-12)
        assert np.allclose(st_.grad, -3.0)

    def test_scalar_closed_form(self, rng):
        xs, ss, cs = _random_cs(rng, m=1, n=1)
        X = np.fft.fft(xs[0][0])
        S = np.fft.fft(ss[0][0], n=40)
        lam, c_hat = 0.7, 5.0
        ref = np.sum(np.abs(X) ** 2 - np.abs(np.conj(S) * X) ** 2 / (np.abs(S) ** 2 + lam)) - c_hat * lam
        assert dual_eval(cs, [lam], c_hat).dual_value == pytest.approx(ref, rel=1e-12)

    def test_nonpositive_lambda(self, rng):
        _, _, cs = _random_cs(rng)
        with pytest.raises(DomainError):
            dual_eval(cs, [1.0, 0.0, 1.0], 1.0)

    @pytest.mark.parametrize("F", [1, 2])
    def test_finite_differences(self, rng, F):
        _, _, cs = _random_cs(rng, F=F)
        lam = np.array([0.8, 2.5, 1.3])
        c_hat = 40.0
        st_ = dual_eval(cs, lam, c_hat)
        h = 1e-5 * lam
        g_fd = central_diff(lambda v: dual_eval(cs, v, c_hat).dual_value, lam, h)
        assert np.max(np.abs(g_fd - st_.grad)) <= 1e-5 * np.max(np.abs(st_.grad))
        H_fd = np.column_stack([
            (dual_eval(cs, lam + e, c_hat).grad - dual_eval(cs, lam - e, c_hat).grad) / (2 * e.max())
            for e in np.diag(h)])
        assert np.max(np.abs(H_fd - st_.hess)) <= 1e-4 * np.max(np.abs(st_.hess))
        assert np.allclose(st_.hess, st_.hess.T)

    @given(st.integers(0, 2 ** 31 - 1))
    def test_concave_along_segments(self, seed):
        r = np.random.default_rng(seed)
        _, _, cs = _random_cs(r, p=int(r.integers(20, 60)))
        l1, l2 = np.exp(r.uniform(-4, 3, (2, 3)))
        D = lambda v: dual_eval(cs, v, 10.0).dual_value
        assert D(0.5 * (l1 + l2)) >= 0.5 * (D(l1) + D(l2)) - 1e-9 * max(1.0, abs(D(l1)))

    @pytest.mark.parametrize("p", [40, 41])
    def test_half_equals_full_spectrum(self, rng, p):
        _, _, cs = _random_cs(rng, F=2, p=p)
        lam = np.array([0.3, 1.0, 4.0])
        a = dual_eval(cs, lam, 7.0, half=True)
        b = dual_eval(cs, lam, 7.0, half=False)
        assert a.dual_value == pytest.approx(b.dual_value, rel=1e-10)
        assert np.allclose(a.grad, b.grad, rtol=1e-10, atol=1e-10 * np.abs(b.grad).max())
        assert np.allclose(a.hess, b.hess, rtol=1e-10, atol=1e-10 * np.abs(b.hess).max())

    def test_exact_dual_finite_differences(self, rng):
        _, _, cs = _random_cs(rng, F=2)
        sysm = exact_system(cs, cs.q)
        lam = np.array([0.8, 2.5, 1.3])
        st_, _ = exact_dual_eval(sysm, lam, 1.0)
        h = 1e-5 * lam
        g_fd = central_diff(lambda v: exact_dual_eval(sysm, v, 1.0)[0].dual_value, lam, h)
        assert np.max(np.abs(g_fd - st_.grad)) <= 1e-5 * np.max(np.abs(st_.grad))
        H_fd = np.column_stack([
            (exact_dual_eval(sysm, lam + e, 1.0)[0].grad - exact_dual_eval(sysm, lam - e, 1.0)[0].grad)
            / (2 * e.max()) for e in np.diag(h)])
        assert np.max(np.abs(H_fd - st_.hess)) <= 1e-4 * np.max(np.abs(st_.hess))


class TestSolveDual:
    def test_dead_basis_lambda_at_floor(self, rng):
        xs, ss, _ = _random_cs(rng)
        for s in ss:
            s[1] = 0.0
        cs = precompute_cross_spectra(xs, ss)
        sol = solve_dual(cs, 1.0)
        assert sol.lam[1] <= lambda_floor(cs) * (1 + 1e-9)

    def test_rank_one_active_constraint(self, rng):
        q = 6
        x = rng.standard_normal((1, 30))
        s = np.zeros((1, 30 - q + 1))
        s[0, 0] = 1.0
        c = 0.5 * float(np.sum(x[0, :q] ** 2))
        up = update_bases([x], [s], c)
        a = up.basis_set.bases
        assert np.sum(a * a) == pytest.approx(c, rel=1e-8)
        # the constrained optimum scales the unconstrained one back onto the sphere
        assert np.allclose(a[0, 0], x[0, :q] * np.sqrt(c / np.sum(x[0, :q] ** 2)), atol=1e-8)

    def test_strong_duality(self, rng):
        xs, ss = _oracle_instance(14, 3, 1, 8, 96)
        up = update_bases(xs, ss, 0.05)
        assert abs(up.primal - up.dual_value) / max(1.0, up.primal) <= 1e-6

    def test_bad_c(self, rng):
        _, _, cs = _random_cs(rng)
        with pytest.raises(InvalidArgument):
            solve_dual(cs, 0.0)


class TestRecover:
    def test_impulse_slack(self, rng):
        q = 6
        x = rng.standard_normal((1, 24))
        s = np.zeros((1, 19))
        s[0, 0] = 1.0
        cs = precompute_cross_spectra([x], [s])
        a, _ = recover_bases(cs, [1e-12], q)
        assert np.allclose(a[0, 0], x[0, :q], atol=1e-8)
        up = update_bases([x], [s], 100.0)
        assert np.allclose(up.basis_set.bases[0, 0], x[0, :q], atol=1e-8)

    def test_zero_stx(self, rng):
        _, ss, _ = _random_cs(rng)
        cs = precompute_cross_spectra([np.zeros((1, 40))] * len(ss), ss)
        a, tail = recover_bases(cs, [1.0, 1.0, 1.0], 6)
        assert np.all(a == 0) and tail == 0.0

    def test_round_trip_from_known_bases(self, rng):
        n, F, q, p = 3, 2, 8, 64
        a_true = random_bases(rng, n, F, q, c=1.0)
        ss = [np.where(rng.random((n, p - q + 1)) < 0.1, rng.standard_normal((n, p - q + 1)), 0.0)
              for _ in range(6)]
        xs = [reconstruct(a_true, s, p).samples for s in ss]
        up = update_bases(xs, ss, 1.0)
        assert np.max(np.abs(up.basis_set.bases - a_true)) <= 1e-6
        cs = precompute_cross_spectra(xs, ss)
        sol = solve_dual(cs, 1.0)
        a_f, tail = recover_bases(cs, sol.lam, q)
        assert tail <= 1e-6 and np.max(np.abs(a_f - a_true)) <= 1e-6


class TestUpdateBases:
    @pytest.mark.parametrize("key", list(PG_BASIS_OPTIMUM))
    def test_matches_projected_gradient_oracle(self, key):
        seed, n, F, q, p, c = key
        xs, ss = _oracle_instance(seed, n, F, q, p)
        up = update_bases(xs, ss, c)
        f = reconstruction_error(xs, ss, up.basis_set.bases)
        assert f == pytest.approx(PG_BASIS_OPTIMUM[key], rel=1e-4)
        assert f <= PG_BASIS_OPTIMUM[key] * (1 + 1e-9)
        norms = np.sum(up.basis_set.bases ** 2, axis=(1, 2))
        assert np.all(norms <= c * (1 + 1e-8))
        assert np.all(np.abs(up.lam * (norms - c)) <= 1e-6 * c)

    def test_live_oracle_small(self, rng):
        xs, ss, _ = _random_cs(rng, m=3, n=2, q=5, p=30)
        _, f_ref = basis_pg(xs, ss, 0.3, 5)
        up = update_bases(xs, ss, 0.3)
        assert reconstruction_error(xs, ss, up.basis_set.bases) <= f_ref * (1 + 1e-4)

    @given(st.integers(0, 2 ** 31 - 1))
    def test_dominates_input_bases(self, seed):
        r = np.random.default_rng(seed)
        xs, ss, _ = _random_cs(r)
        prev = random_bases(r, 3, 1, 6, c=0.5)
        up = update_bases(xs, ss, 0.5, prev=prev)
        assert up.primal <= reconstruction_error(xs, ss, prev) + 1e-9
        assert np.all(np.sum(up.basis_set.bases ** 2, axis=(1, 2)) <= 0.5 * (1 + 1e-8))

    def test_dead_bases_kept(self, rng):
        xs, ss, _ = _random_cs(rng)
        for s in ss:
            s[2] = 0.0
        prev = random_bases(rng, 3, 1, 6)
        up = update_bases(xs, ss, 1.0, prev=prev)
        assert list(up.dead) == [False, False, True]
        assert np.array_equal(up.basis_set.bases[2], prev[2])

    def test_all_zero(self, rng):
        with pytest.raises(NoUpdateError):
            update_bases([rng.standard_normal((1, 20))], [np.zeros((2, 15))], 1.0)

    def test_sparse_and_dense_coeffs_agree(self, rng):
        xs, ss, _ = _random_cs(rng)
        a = update_bases(xs, ss, 1.0).basis_set.bases
        b = update_bases(xs, [SparseCoeffs.from_dense(s) for s in ss], 1.0).basis_set.bases
        assert np.allclose(a, b, atol=1e-12)

    def test_exact_dual_converges_feasible(self, rng):
        _, _, cs = _random_cs(rng)
        sol, bases = solve_exact_dual(cs, 0.2, cs.q)
        assert sol.converged
        norms = np.sum(bases ** 2, axis=(1, 2))
        assert np.all(norms <= 0.2 * (1 + 1e-8))


class TestGdBasisStep:
    def test_feasible_and_deterministic(self, rng):
        xs, ss, _ = _random_cs(rng)
        prev = random_bases(rng, 3, 1, 6)
        a = gd_basis_step(xs, ss, prev, 0.5, rng=3)
        b = gd_basis_step(xs, ss, prev, 0.5, rng=3)
        assert a == b
        assert np.all(a.sq_norms() <= 0.5 * (1 + 1e-8))

    def test_not_worse_than_exact(self, rng):
        xs, ss, _ = _random_cs(rng)
        prev = random_bases(rng, 3, 1, 6)
        exact = update_bases(xs, ss, 1.0, prev=prev).primal
        assert reconstruction_error(xs, ss, gd_basis_step(xs, ss, prev, 1.0, 0).bases) >= exact - 1e-9
