import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetmimo.channel import SystemDims
from hetmimo.sum_mse import (
    AlgoConfig,
    DegenerateDesignError,
    MultiplierProblem,
    PrecoderSet,
    ReceiverSet,
    bisect_multiplier,
    build_multiplier_problem,
    chi,
    eval_sum_mse,
    init_transceivers,
    normalize_precoders,
    run_rao,
    run_uaon,
    update_precoders_constrained,
    update_precoders_unconstrained,
    update_receivers,
)

from conftest import (
    make_gains,
    random_feasible_precoders,
    random_receivers,
    scalar_gains,
)


def zero_design(dims):
    w = PrecoderSet(np.zeros((dims.n_bs, dims.k_mue * dims.n_s), dtype=complex),
                    [np.zeros((dims.n_sc, dims.l_sue[s] * dims.n_s), dtype=complex)
                     for s in range(dims.s_cells)], dims.n_s)
    r = ReceiverSet([np.zeros((dims.n_s, dims.n_ue), dtype=complex)
                     for _ in range(dims.k_mue)],
                    [[np.zeros((dims.n_s, dims.n_ue), dtype=complex)
                      for _ in range(dims.l_sue[s])]
                     for s in range(dims.s_cells)])
    return w, r


def scalar_design(w=1.0, r=0.5):
    wset = PrecoderSet(np.array([[w]], dtype=complex), [], 1)
    rset = ReceiverSet([np.array([[r]], dtype=complex)], [])
    return wset, rset


class TestEvalSumMse:
    def test_zero_design_counts_streams(self, desk_dims, desk_gains):
        w, r = zero_design(desk_dims)
        br = eval_sum_mse(desk_gains, w, r, 1.0)
        assert br.total == pytest.approx(desk_dims.total_streams)
        assert br.mse_bs == pytest.approx(desk_dims.k_mue * desk_dims.n_s)

    def test_scalar_expansion(self):
        g = scalar_gains(1.0)
        w, r = scalar_design(1.0, 0.5)
        br = eval_sum_mse(g, w, r, 1.0)
        # 0.25 - 1 + 1 + 0.25
        assert br.total == pytest.approx(0.5, abs=1e-14)

    def test_per_user_nonnegative(self, desk_dims, desk_gains):
        rng = np.random.default_rng(0)
        w = random_feasible_precoders(desk_dims, rng)
        r = update_receivers(desk_gains, w, 0.5)
        br = eval_sum_mse(desk_gains, w, r, 0.5)
        assert np.all(br.per_mue >= 0)
        assert all(np.all(a >= 0) for a in br.per_sue)
        assert br.total == pytest.approx(
            br.per_mue.sum() + sum(a.sum() for a in br.per_sue))


class TestUpdateReceivers:
    def test_scalar_closed_form(self):
        g = scalar_gains(1.0)
        w, _ = scalar_design(1.0)
        r = update_receivers(g, w, 1.0)
        assert r.r_bs[0][0, 0] == pytest.approx(0.5)

    def test_zero_precoders_give_zero_receivers(self, desk_dims, desk_gains):
        w, _ = zero_design(desk_dims)
        r = update_receivers(desk_gains, w, 1.0)
        assert all(not np.any(x) for x in r.r_bs)

    @pytest.mark.parametrize("seed", range(4))
    def test_stationarity(self, desk_dims, desk_gains, seed):
        rng = np.random.default_rng(seed)
        w = random_feasible_precoders(desk_dims, rng)
        sigma = 0.3
        r = update_receivers(desk_gains, w, sigma)
        f0 = eval_sum_mse(desk_gains, w, r, sigma).total
        h = 1e-5
        for _ in range(10):
            d = random_receivers(desk_dims, rng)
            plus, minus = r.copy(), r.copy()
            for i in range(desk_dims.k_mue):
                plus.r_bs[i] = r.r_bs[i] + h * d.r_bs[i]
                minus.r_bs[i] = r.r_bs[i] - h * d.r_bs[i]
            for s in range(desk_dims.s_cells):
                for j in range(desk_dims.l_sue[s]):
                    plus.r_sc[s][j] = r.r_sc[s][j] + h * d.r_sc[s][j]
                    minus.r_sc[s][j] = r.r_sc[s][j] - h * d.r_sc[s][j]
            fp = eval_sum_mse(desk_gains, w, plus, sigma).total
            fm = eval_sum_mse(desk_gains, w, minus, sigma).total
            deriv = (fp - fm) / (2 * h)
            assert abs(deriv) <= 1e-6 * f0
            assert fp >= f0 - 1e-12 and fm >= f0 - 1e-12

    def test_minimizes_over_random_receivers(self, desk_dims, desk_gains):
        rng = np.random.default_rng(5)
        w = random_feasible_precoders(desk_dims, rng)
        r_star = update_receivers(desk_gains, w, 0.5)
        f_star = eval_sum_mse(desk_gains, w, r_star, 0.5).total
        for _ in range(50):
            r = random_receivers(desk_dims, rng, scale=0.3)
            assert eval_sum_mse(desk_gains, w, r, 0.5).total >= f_star - 1e-12


class TestMultiplierProblem:
    def test_identity_case(self):
        problem = build_multiplier_problem(np.eye(3), np.eye(3), np.eye(3))
        assert np.allclose(problem.d, 1.0)
        assert np.allclose(problem.a, 1.0)

    def test_scalar_case(self):
        problem = build_multiplier_problem(np.array([[4.0]]),
                                           np.array([[3.0]]),
                                           np.array([[1.0]]))
        assert problem.d[0] == pytest.approx(4.0)
        assert problem.a[0] == pytest.approx(9.0)

    def test_trace_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            m = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
            phi = m @ m.conj().T
            gdir = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
            r = rng.standard_normal((3, 6)) + 1j * rng.standard_normal((3, 6))
            problem = build_multiplier_problem(phi, gdir, r)
            num = gdir @ r.conj().T
            assert problem.a.sum() == pytest.approx(
                np.trace(num @ num.conj().T).real, abs=1e-10)


class TestChi:
    def test_closed_form_zero(self):
        p = MultiplierProblem(np.array([1.0]), np.array([4.0]))
        assert chi(p, 1.0) == pytest.approx(0.0, abs=1e-15)

    def test_zero_numerator(self):
        p = MultiplierProblem(np.array([1.0, 2.0]), np.zeros(2))
        for lam in (0.0, 1.0, 7.0):
            assert chi(p, lam) == -1.0

    def test_large_lambda_limit(self):
        p = MultiplierProblem(np.array([1.0]), np.array([4.0]))
        assert chi(p, 1e12) == pytest.approx(-1.0, abs=1e-12)

    @given(st.lists(st.floats(0.01, 10), min_size=1, max_size=6),
           st.lists(st.floats(0.0, 10), min_size=1, max_size=6))
    @settings(max_examples=50, deadline=None)
    def test_strictly_decreasing(self, a, d):
        n = min(len(a), len(d))
        p = MultiplierProblem(np.array(d[:n]), np.array(a[:n]))
        lams = np.sort(np.random.default_rng(0).uniform(0, 5, 4))
        vals = [chi(p, l) for l in lams]
        assert all(x > y for x, y, in zip(vals, vals[1:])
                   if not np.isclose(x, y))
        assert vals[0] >= vals[-1]

    @given(st.lists(st.floats(0.001, 100), min_size=1, max_size=8),
           st.lists(st.floats(0.0, 100), min_size=1, max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_bracket_validity(self, a, d):
        n = min(len(a), len(d))
        p = MultiplierProblem(np.array(d[:n]), np.array(a[:n]))
        # <= 0 mathematically; allow rounding at the tight d = 0 corner
        assert chi(p, float(np.sqrt(p.a.sum()))) <= 1e-12


class TestBisect:
    def test_scalar_closed_form_root(self):
        p = MultiplierProblem(np.array([1.0]), np.array([4.0]))
        lam = bisect_multiplier(p, 1e-8)
        assert lam == pytest.approx(1.0, abs=1e-6)
        assert abs(chi(p, lam)) <= 1e-8

    def test_zero_branch(self):
        p = MultiplierProblem(np.array([1.0]), np.array([0.25]))
        assert chi(p, 0.0) == pytest.approx(-0.75)
        assert bisect_multiplier(p, 1e-8) == 0.0

    def test_invalid_tolerance(self):
        p = MultiplierProblem(np.array([1.0]), np.array([4.0]))
        with pytest.raises(ValueError):
            bisect_multiplier(p, 0.0)

    @pytest.mark.parametrize("seed", range(6))
    def test_grid_scan_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = rng.integers(1, 8)
        p = MultiplierProblem(rng.uniform(0, 3, n), rng.uniform(0.1, 5, n))
        lam = bisect_multiplier(p, 1e-10)
        if lam == 0.0:
            assert chi(p, 0.0) <= 0.0
            return
        hi = float(np.sqrt(p.a.sum()))
        grid = np.linspace(0.0, hi, 1_000_000)
        vals = p.a[None, :] / (p.d[None, :] + grid[:, None]) ** 2
        f = vals.sum(axis=1) - 1.0
        k = int(np.searchsorted(-f, 0.0))  # f decreasing
        lo, up = grid[k - 1], grid[k]
        flo, fup = f[k - 1], f[k]
        root = lo + (up - lo) * flo / (flo - fup)
        assert lam == pytest.approx(root, abs=1e-6)


class TestConstrainedPrecoders:
    @pytest.mark.parametrize("seed", range(5))
    def test_power_feasibility_and_kkt(self, desk_dims, desk_gains, seed):
        rng = np.random.default_rng(seed)
        r = random_receivers(desk_dims, rng)
        w, lams = update_precoders_constrained(desk_gains, r, AlgoConfig())
        traces = w.traces()
        assert np.all(traces <= 1.0 + 1e-9)
        for lam, tr in zip(lams, traces):
            if lam > 1e-10:
                assert abs(tr - 1.0) <= 1e-8

    def test_scalar_kkt_algebra(self):
        # phi = 1, numerator 2: w = 2/(1+lam) with |w| = 1 forces lam = 1
        problem = build_multiplier_problem(np.array([[1.0]]),
                                           np.array([[2.0]]),
                                           np.array([[1.0]]))
        lam = bisect_multiplier(problem, 1e-10)
        assert lam == pytest.approx(1.0, abs=1e-8)
        w = 2.0 / (1.0 + lam)
        assert abs(w) == pytest.approx(1.0, abs=1e-8)

    def test_beats_random_feasible_points(self, desk_dims, desk_gains):
        rng = np.random.default_rng(11)
        r = update_receivers(desk_gains,
                             random_feasible_precoders(desk_dims, rng), 0.5)
        w_star, _ = update_precoders_constrained(desk_gains, r, AlgoConfig())
        f_star = eval_sum_mse(desk_gains, w_star, r, 0.5).total
        for _ in range(1000):
            w = random_feasible_precoders(desk_dims, rng, full_power=False)
            assert eval_sum_mse(desk_gains, w, r, 0.5).total >= f_star - 1e-12


class TestUnconstrainedPrecoders:
    def test_scalar_stationary_point(self):
        g = scalar_gains(1.0)
        r = ReceiverSet([np.array([[1.0]], dtype=complex)], [])
        w = update_precoders_unconstrained(g, r)
        assert w.w_bs[0, 0] == pytest.approx(1.0)

    def test_zero_receivers_flagged(self, desk_dims, desk_gains, caplog):
        _, r = zero_design(desk_dims)
        with caplog.at_level("WARNING"):
            w = update_precoders_unconstrained(desk_gains, r)
        assert not np.any(w.w_bs)
        assert any("zero" in rec.message for rec in caplog.records)

    @pytest.mark.parametrize("seed", range(4))
    def test_gradient_vanishes(self, desk_dims, desk_gains, seed):
        rng = np.random.default_rng(seed + 100)
        r = update_receivers(desk_gains,
                             random_feasible_precoders(desk_dims, rng), 0.5)
        w_bar = update_precoders_unconstrained(desk_gains, r)
        f0 = eval_sum_mse(desk_gains, w_bar, r, 0.5).total
        h = 1e-5
        for _ in range(10):
            d = random_feasible_precoders(desk_dims, rng)
            wp, wm = w_bar.copy(), w_bar.copy()
            wp.w_bs = w_bar.w_bs + h * d.w_bs
            wm.w_bs = w_bar.w_bs - h * d.w_bs
            for s in range(desk_dims.s_cells):
                wp.w_sc[s] = w_bar.w_sc[s] + h * d.w_sc[s]
                wm.w_sc[s] = w_bar.w_sc[s] - h * d.w_sc[s]
            fp = eval_sum_mse(desk_gains, wp, r, 0.5).total
            fm = eval_sum_mse(desk_gains, wm, r, 0.5).total
            assert abs(fp - fm) / (2 * h) <= 1e-6 * max(f0, 1.0)


class TestNormalize:
    def test_unit_trace(self, desk_dims):
        rng = np.random.default_rng(2)
        w = random_feasible_precoders(desk_dims, rng)
        w.w_bs = 3.7 * w.w_bs
        out = normalize_precoders(w)
        assert np.allclose(out.traces(), 1.0, atol=1e-12)

    def test_idempotent(self, desk_dims):
        rng = np.random.default_rng(3)
        w = normalize_precoders(random_feasible_precoders(desk_dims, rng))
        again = normalize_precoders(w)
        assert np.allclose(again.w_bs, w.w_bs, atol=1e-15)

    def test_scale_invariant(self, desk_dims):
        rng = np.random.default_rng(4)
        w = random_feasible_precoders(desk_dims, rng)
        scaled = w.copy()
        scaled.w_bs = 7.0 * w.w_bs
        scaled.w_sc = [7.0 * x for x in w.w_sc]
        a = normalize_precoders(w)
        b = normalize_precoders(scaled)
        assert np.allclose(a.w_bs, b.w_bs, atol=1e-14)

    def test_zero_block_raises(self, desk_dims):
        w, _ = (lambda d: (PrecoderSet(
            np.zeros((d.n_bs, d.k_mue), dtype=complex), [], 1), None))(desk_dims)
        with pytest.raises(DegenerateDesignError):
            normalize_precoders(w)


class TestRunRao:
    def test_zero_iterations_returns_init(self, desk_dims, desk_gains):
        w0, r0 = init_transceivers(desk_gains, 0.5, 1)
        cfg = AlgoConfig(max_iters=0)
        w, r, trace = run_rao(desk_gains, 0.5, cfg, r0, w0)
        assert w is w0 and r is r0
        assert len(trace.objective) == 1

    @pytest.mark.parametrize("seed", range(5))
    def test_monotone_objective(self, desk_dims, seed):
        g = make_gains(desk_dims, np.random.default_rng(seed + 50))
        w0, r0 = init_transceivers(g, 0.5, seed)
        _, _, trace = run_rao(g, 0.5, AlgoConfig(max_iters=30), r0, w0)
        diffs = np.diff(trace.objective)
        assert np.all(diffs <= 1e-9)

    def test_scalar_grid_search_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(3):
            gval = rng.normal() + 1j * rng.normal()
            sigma = rng.uniform(0.2, 1.5)
            g = scalar_gains(gval)
            w0, r0 = init_transceivers(g, sigma, 3)
            w, r, trace = run_rao(g, sigma, AlgoConfig(max_iters=200,
                                                       rel_tol=1e-12), r0, w0)
            # exhaustive 2-D grid over (|w| <= 1, r in R), phase-aligned
            a = abs(gval)
            ws = np.linspace(0, 1, 1001)
            rs = np.linspace(0, 2.0 / max(sigma, 0.1), 4001)
            mse = ((ws[:, None] * rs[None, :] * a - 1) ** 2
                   + sigma * rs[None, :] ** 2)
            best = mse.min()
            assert trace.objective[-1] == pytest.approx(best, abs=1e-4)

    def test_trace_csv_export(self, desk_dims, desk_gains):
        w0, r0 = init_transceivers(desk_gains, 0.5, 1)
        _, _, trace = run_rao(desk_gains, 0.5, AlgoConfig(max_iters=5), r0, w0)
        text = trace.to_csv()
        header = text.splitlines()[0].split(",")
        assert header[:2] == ["iteration", "objective"]
        assert f"lambda_{desk_dims.s_cells}" in header
        assert len(text.splitlines()) == len(trace.objective) + 1


class TestRunUaon:
    def test_zero_iterations_returns_init(self, desk_dims, desk_gains):
        w0, r0 = init_transceivers(desk_gains, 0.5, 1)
        w, r, _ = run_uaon(desk_gains, 0.5, AlgoConfig(max_iters=0), r0, w0)
        assert w is w0 and r is r0

    @pytest.mark.parametrize("iters", [1, 2, 5])
    def test_every_iterate_unit_trace(self, desk_dims, desk_gains, iters):
        w0, r0 = init_transceivers(desk_gains, 0.5, 1)
        cfg = AlgoConfig(max_iters=iters, rel_tol=1e-300)
        w, _, _ = run_uaon(desk_gains, 0.5, cfg, r0, w0)
        assert np.allclose(w.traces(), 1.0, atol=1e-12)

    def test_rao_better_on_average(self, desk_dims):
        finals_rao, finals_uaon = [], []
        for seed in range(20):
            g = make_gains(desk_dims, np.random.default_rng(seed))
            w0, r0 = init_transceivers(g, 0.5, seed)
            cfg = AlgoConfig(max_iters=40)
            _, _, tr1 = run_rao(g, 0.5, cfg, r0, w0)
            _, _, tr2 = run_uaon(g, 0.5, cfg, r0, w0)
            finals_rao.append(tr1.objective[-1])
            finals_uaon.append(tr2.objective[-1])
        assert np.mean(finals_uaon) >= np.mean(finals_rao)


class TestAlgoConfig:
    def test_invalid_tolerances(self):
        with pytest.raises(ValueError):
            AlgoConfig(rel_tol=0.0)
        with pytest.raises(ValueError):
            AlgoConfig(max_iters=-1)
