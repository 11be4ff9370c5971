import time
import warnings

import numpy as np
import pytest

from atd.kernels import GramStack, khatri_rao, mttkrp
from atd.memory import AllocationTracker
from atd.objective import apply_g_gamma
from atd.oracle import fd_gradient, fixed_point_u
from atd.solver import (BoundViolationWarning, ClampWarning, ConfigError, DivergenceError,
                        KruskalBases, RecursionDivergenceWarning, SaoConfig, _batch_indices,
                        _recursion, auxiliary_step, cold_start, cp_als_full, decompose,
                        format_config, main_step, parse_config, read_reports, relative_error,
                        sao_run, should_stop, write_reports)
from atd.synth import SyntheticSpec, generate
from atd.tensor import unfold


def ridge_objective(t, x, factors, alpha):
    return float(np.sum((unfold(t, 0) - x @ khatri_rao(factors).T) ** 2) + alpha * np.sum(x * x))


def random_batch(rng, n=8, shape=(4, 5, 6), rank=3):
    bases = KruskalBases.random(shape, rank, rng)
    return rng.standard_normal((n,) + shape), rng.standard_normal((n,) + shape), bases


class TestConfig:
    def test_defaults_valid(self):
        cfg = SaoConfig().validate()
        assert (cfg.rank, cfg.alpha, cfg.beta, cfg.gamma, cfg.eta) == (32, 1e-3, 2.0, None, 2e-3)
        assert cfg.gamma_for(128) == 128.0

    @pytest.mark.parametrize("field,value", [("alpha", 0.0), ("beta", -1.0), ("gamma", -0.5),
                                             ("eta", 0.0), ("eta", 1.5), ("batch_size", 1),
                                             ("t_rounds", 0), ("mode", "adam"), ("rank", 0)])
    def test_invalid(self, field, value):
        with pytest.raises(ConfigError):
            SaoConfig(**{field: value}).validate()

    def test_parse(self):
        cfg = parse_config("rank = 8\nalpha = 0.01\nbeta = 1.5\neta = 0.1  # blend\n"
                           "batch_size = 16\ngamma = b\nmoving_average = yes\n")
        assert (cfg.rank, cfg.alpha, cfg.beta, cfg.eta, cfg.batch_size) == (8, 0.01, 1.5, 0.1, 16)
        assert cfg.gamma is None and cfg.moving_average

    def test_missing_key_named(self):
        with pytest.raises(ConfigError, match="batch_size"):
            parse_config("rank = 8\nalpha = 0.01\nbeta = 1.5\neta = 0.1\n")

    @pytest.mark.parametrize("text", ["rank = eight", "colour = red", "moving_average = maybe"])
    def test_bad_values(self, text):
        base = "alpha = 0.01\nbeta = 1.5\neta = 0.1\nbatch_size = 16\n"
        if not text.startswith("rank"):
            base += "rank = 4\n"
        with pytest.raises(ConfigError):
            parse_config(base + text)

    def test_roundtrip(self):
        cfg = SaoConfig(rank=7, gamma=3.0, mode="sals", moving_average=True)
        assert parse_config(format_config(cfg)) == cfg
        assert parse_config(format_config(SaoConfig())) == SaoConfig()


class TestStoppingRule:
    def test_fires_after_three_small_changes(self):
        trace = [10.0, 5.0, 4.0, 3.999, 3.998, 3.997]
        fired = [should_stop(trace[:k]) for k in range(1, len(trace) + 1)]
        assert fired == [False, False, False, False, False, True]

    def test_interrupted_run_resets(self):
        trace = [4.0, 3.999, 3.998, 3.5, 3.4995, 3.499]
        assert not should_stop(trace[:5])
        assert not should_stop(trace)
        assert should_stop(trace + [3.4985])

    def test_threshold_is_strict(self):
        assert not should_stop([1.0, 1.001, 1.002002, 1.003004002])
        assert should_stop([1.0, 1.0009, 1.0018, 1.0027])

    def test_increase_counts_as_change(self):
        assert not should_stop([1.0, 1.0, 1.0, 1.5])
        assert should_stop([1.0, 1.0, 1.0, 1.0])


class TestBatching:
    @pytest.mark.parametrize("n,b,sizes", [(64, 32, [32, 32]), (65, 32, [32, 33]),
                                           (66, 32, [32, 32, 2]), (10, 10, [10])])
    def test_remainder(self, n, b, sizes):
        chunks = _batch_indices(n, b, np.random.default_rng(0))
        assert [len(c) for c in chunks] == sizes
        assert sorted(np.concatenate(chunks).tolist()) == list(range(n))


class TestColdStart:
    def test_scalar(self):
        e = [np.ones((1, 1))] * 3
        t = np.full((1, 1, 1, 1), 2.0)
        x, xa = cold_start(t, None, KruskalBases(tuple(e)), 0.1)
        np.testing.assert_allclose(x, [[2.0 / 1.1]], rtol=1e-14)
        assert xa is None

    def test_exact_recovery(self, rng):
        bases = KruskalBases.random((6, 7, 8), 4, rng)
        x_true = rng.standard_normal((10, 4))
        t = (x_true @ khatri_rao(bases.factors).T).reshape(10, 6, 7, 8)
        x, _ = cold_start(t, None, bases, 1e-12)
        np.testing.assert_allclose(x, x_true, atol=1e-8)

    def test_perturbation_minimality(self, rng):
        t, ta, bases = random_batch(rng)
        x, xa = cold_start(t, ta, bases, 0.05)
        for arr, sol in ((t, x), (ta, xa)):
            best = ridge_objective(arr, sol, bases.factors, 0.05)
            for _ in range(100):
                delta = 1e-3 * rng.standard_normal(sol.shape)
                assert ridge_objective(arr, sol + delta, bases.factors, 0.05) >= best

    def test_stationarity(self, rng):
        t, _, bases = random_batch(rng)
        x, _ = cold_start(t, None, bases, 0.05)
        grad = fd_gradient(lambda z: ridge_objective(t, z, bases.factors, 0.05), x)
        assert np.linalg.norm(grad) <= 1e-6 * np.sum(t * t)

    def test_shape_mismatch(self, rng):
        t, _, bases = random_batch(rng)
        with pytest.raises(ValueError):
            cold_start(t[:, :3], None, bases, 0.1)
        with pytest.raises(ValueError):
            cold_start(t, None, bases, 0.0)


class TestAuxiliaryStep:
    def test_beta_zero_is_identity(self, rng):
        t, ta, bases = random_batch(rng)
        x, xa = cold_start(t, ta, bases, 0.1)
        xs, xas = auxiliary_step(x, xa, bases, SaoConfig(alpha=0.1, beta=0.0))
        assert xs is x and xas is xa

    def test_row_rule(self):
        v1 = np.array([[2.0, 0.0]])
        v2 = np.array([[0.0, 1.0]])
        np.testing.assert_allclose(_recursion(v1, v2, 0.5, 1), [[2.0, -0.25]])
        np.testing.assert_allclose(_recursion(v1, v2, 0.5, 30)[0],
                                   fixed_point_u(v1[0], v2[0], 0.5), atol=1e-12)

    def test_closed_form(self, rng):
        t, ta, bases = random_batch(rng)
        cfg = SaoConfig(alpha=0.1, beta=0.7, gamma=2.0)
        x, xa = cold_start(t, ta, bases, cfg.alpha)
        xs, xas = auxiliary_step(x, xa, bases, cfg)
        system = GramStack.from_factors(bases.factors, cfg.alpha).system()
        unit = lambda y: y / np.linalg.norm(y, axis=1, keepdims=True)
        v2 = np.linalg.solve(system, apply_g_gamma(unit(xa), 2.0).T).T
        v2a = np.linalg.solve(system, apply_g_gamma(unit(x), 2.0).T).T
        np.testing.assert_allclose(xs, x - 0.7 * v2 / np.linalg.norm(x, axis=1)[:, None],
                                   rtol=1e-10)
        np.testing.assert_allclose(xas, xa - 0.7 * v2a / np.linalg.norm(xa, axis=1)[:, None],
                                   rtol=1e-10)

    def test_rounds_independent(self, rng):
        # refining X must not depend on the refined Xa and vice versa
        t, ta, bases = random_batch(rng)
        x, xa = cold_start(t, ta, bases, 0.1)
        cfg = SaoConfig(alpha=0.1, beta=0.3, t_rounds=4)
        xs, xas = auxiliary_step(x, xa, bases, cfg)
        xs2, _ = auxiliary_step(x, xa + 0.0, bases, cfg)
        np.testing.assert_array_equal(xs, xs2)
        assert not np.allclose(xs, x)

    def test_clamp_warns(self):
        with pytest.warns(ClampWarning):
            _recursion(np.array([[0.0, 0.0], [1.0, 0.0]]), np.ones((2, 2)), 0.1, 1)

    def test_divergence_warns(self):
        v1 = np.array([[0.84, 1.16]])
        v2 = np.array([[0.79, 0.84]])
        with pytest.warns(RecursionDivergenceWarning):
            _recursion(v1, v2, 1.37, 3)

    def test_no_warning_when_contracting(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            _recursion(np.array([[2.0, 0.0]]), np.array([[0.0, 1.0]]), 0.5, 8)


class TestMainStep:
    def test_rank_one(self):
        a = np.array([[1.0], [2.0], [-1.0]])
        e = np.array([[1.0], [0.0]])
        x = np.array([[2.0]])
        t = 2.0 * np.einsum("i,j,k->ijk", a[:, 0], e[:, 0], e[:, 0])[None]
        bases = KruskalBases((np.ones((3, 1)), e, e))
        np.testing.assert_allclose(main_step(0, x, x, t, t, bases, 1e-300, 1.0), a, rtol=1e-14)
        np.testing.assert_allclose(main_step(0, x, x, t, t, bases, 0.5, 1.0), 8 * a / 8.5,
                                   rtol=1e-14)

    def test_blend_endpoints(self, rng):
        t, ta, bases = random_batch(rng)
        x, xa = cold_start(t, ta, bases, 0.1)
        star = main_step(1, x, xa, t, ta, bases, 0.1, 1.0)
        half = main_step(1, x, xa, t, ta, bases, 0.1, 0.25)
        np.testing.assert_allclose(half, 0.75 * bases.B + 0.25 * star, rtol=1e-13)
        tiny = main_step(1, x, xa, t, ta, bases, 0.1, 1e-12)
        np.testing.assert_allclose(tiny, bases.B, atol=1e-10)

    @pytest.mark.parametrize("k", [0, 1, 2])
    def test_stationarity(self, rng, k):
        t, ta, bases = random_batch(rng)
        x, xa = cold_start(t, ta, bases, 0.1)
        star = main_step(k, x, xa, t, ta, bases, 0.1, 1.0)

        def objective(f):
            fs = list(bases.factors)
            fs[k] = f
            fit = sum(float(np.sum((unfold(arr, 0) - c @ khatri_rao(fs).T) ** 2))
                      for arr, c in ((t, x), (ta, xa)))
            return fit + 0.1 * float(np.sum(f * f))

        grad = fd_gradient(objective, star)
        assert np.linalg.norm(grad) <= 1e-6 * (np.sum(t * t) + np.sum(ta * ta))

    def test_eta_range(self, rng):
        t, ta, bases = random_batch(rng)
        with pytest.raises(ValueError):
            main_step(0, np.ones((8, 3)), None, t, None, bases, 0.1, 0.0)


@pytest.fixture(scope="module")
def synthetic():
    return generate(SyntheticSpec(n=200, sigma=0.0, seed=1, amplitude=12.0))


class TestSaoRun:
    def test_sals_recovers_exact_data(self, synthetic):
        cfg = SaoConfig(rank=5, eta=1.0, batch_size=32, mode="sals", seed=1)
        bases, _ = sao_run(synthetic.tensor, cfg=cfg)
        assert relative_error(synthetic.tensor, bases, cfg.alpha) <= 1e-3

    def test_atd_recovers_exact_data(self):
        # The alignment term and the noisy augmented copy bias the optimum
        # slightly away from the exact fit, hence the 2e-3 per-seed ceiling.
        errs = []
        for seed in range(5):
            data = generate(SyntheticSpec(n=200, sigma=0.0, seed=seed, amplitude=12.0))
            cfg = SaoConfig(rank=5, eta=0.1, batch_size=32, seed=seed)
            bases, reports = sao_run(data.tensor, cfg=cfg)
            errs.append(relative_error(data.tensor, bases, cfg.alpha))
            assert len(reports) <= 50
        assert max(errs) <= 2e-3
        assert np.median(errs) <= 1e-3

    def test_deterministic(self, synthetic):
        cfg = SaoConfig(rank=5, eta=0.1, batch_size=32, max_sweeps=3, seed=7)
        a, ra = sao_run(synthetic.tensor, cfg=cfg)
        b, rb = sao_run(synthetic.tensor, cfg=cfg)
        for fa, fb in zip(a.factors, b.factors):
            assert fa.tobytes() == fb.tobytes()
        assert [r.loss_total for r in ra] == [r.loss_total for r in rb]

    def test_seed_changes_result(self, synthetic):
        cfg = SaoConfig(rank=5, eta=0.1, batch_size=32, max_sweeps=2)
        a, _ = sao_run(synthetic.tensor, cfg=cfg.replace(seed=1))
        b, _ = sao_run(synthetic.tensor, cfg=cfg.replace(seed=2))
        assert not np.array_equal(a.A, b.A)

    def test_ss_minus_has_no_alignment_loss(self, synthetic):
        cfg = SaoConfig(rank=5, eta=0.1, batch_size=32, max_sweeps=3, mode="atd_ss_minus")
        _, reports = sao_run(synthetic.tensor, cfg=cfg)
        assert all(r.loss_ss == 0.0 for r in reports)

    def test_sals_never_augments(self, synthetic):
        def boom(batch, rng):
            raise AssertionError("augmenter called")

        cfg = SaoConfig(rank=5, batch_size=50, max_sweeps=2, mode="sals")
        sao_run(synthetic.tensor, boom, cfg)

    def test_custom_augmenter_receives_indices(self, synthetic):
        seen = []

        def record(batch, rng):
            seen.append(batch.indices.copy())
            np.testing.assert_array_equal(batch.tensor, synthetic.tensor.data[batch.indices])
            return batch.tensor * 1.01

        cfg = SaoConfig(rank=5, eta=0.1, batch_size=64, max_sweeps=1)
        sao_run(synthetic.tensor, record, cfg)
        assert sorted(np.concatenate(seen).tolist()) == list(range(200))

    def test_non_finite_aborts(self, synthetic):
        cfg = SaoConfig(rank=5, batch_size=50, max_sweeps=2)
        with pytest.raises(DivergenceError):
            sao_run(synthetic.tensor, lambda b, r: np.full(b.tensor.shape, np.nan), cfg)

    def test_bound_holds(self, synthetic):
        cfg = SaoConfig(rank=5, eta=0.1, batch_size=32, max_sweeps=20, stop_tol=1e-300)
        with warnings.catch_warnings():
            warnings.simplefilter("error", BoundViolationWarning)
            _, reports = sao_run(synthetic.tensor, cfg=cfg)
        assert sum(r.bound_violations for r in reports) == 0

    def test_batch_larger_than_data(self, synthetic):
        with pytest.raises(ConfigError):
            sao_run(synthetic.tensor, cfg=SaoConfig(rank=5, batch_size=201))

    def test_init_shape_checked(self, synthetic, rng):
        bad = KruskalBases.random((8, 9, 11), 5, rng)
        with pytest.raises(ConfigError):
            sao_run(synthetic.tensor, cfg=SaoConfig(rank=5, batch_size=32), init=bad)

    def test_reports_csv(self, synthetic, tmp_path):
        cfg = SaoConfig(rank=5, eta=0.1, batch_size=32, max_sweeps=2)
        _, reports = sao_run(synthetic.tensor, cfg=cfg)
        write_reports(reports, tmp_path / "r.csv")
        rows = read_reports(tmp_path / "r.csv")
        assert list(rows[0]) == ["sweep", "loss_total", "loss_cpd", "loss_reg", "loss_ss",
                                 "seconds", "peak_aux_bytes"]
        assert float(rows[1]["loss_total"]) == reports[1].loss_total

    def test_loss_parts_add_up(self, synthetic):
        _, reports = sao_run(synthetic.tensor,
                             cfg=SaoConfig(rank=5, eta=0.1, batch_size=32, max_sweeps=2))
        for r in reports:
            np.testing.assert_allclose(r.loss_total, r.loss_cpd + r.loss_reg + r.loss_ss,
                                       rtol=1e-12)


class TestMovingAverage:
    def test_trend_non_increasing(self):
        data = generate(SyntheticSpec(n=200, sigma=0.01, seed=3, amplitude=12.0))
        cfg = SaoConfig(rank=5, batch_size=32, max_sweeps=40, moving_average=True,
                        stop_tol=1e-300, seed=3)
        _, reports = sao_run(data.tensor, cfg=cfg)
        losses = [r.loss_total for r in reports]
        for start in range(0, len(losses) - 10, 10):
            assert losses[start + 10] <= losses[start]

    def test_first_batch_untouched(self, synthetic):
        # with c_min = 1 the first harmonic weight is 1: no blending happens
        seen = []
        cfg = SaoConfig(rank=5, batch_size=200, max_sweeps=1, moving_average=True, c_min=1.0,
                        mode="sals")
        ref = SaoConfig(rank=5, batch_size=200, max_sweeps=1, eta=1.0, mode="sals")
        a, _ = sao_run(synthetic.tensor, cfg=cfg, callback=lambda r, b: seen.append(r))
        b, _ = sao_run(synthetic.tensor, cfg=ref)
        np.testing.assert_allclose(a.A, b.A, rtol=1e-12)


class TestMemory:
    def test_batch_peak_scales(self):
        data = generate(SyntheticSpec(n=512, seed=0))
        peaks = {}
        for b in (32, 512):
            tracker = AllocationTracker()
            _, reports = sao_run(data.tensor, cfg=SaoConfig(rank=5, eta=0.1, batch_size=b,
                                                            max_sweeps=1), tracker=tracker)
            peaks[b] = reports[-1].peak_aux_bytes
            assert tracker.live == 0
        assert peaks[32] * 8 <= peaks[512]

    def test_moving_average_releases(self, synthetic):
        tracker = AllocationTracker()
        sao_run(synthetic.tensor, cfg=SaoConfig(rank=5, batch_size=32, max_sweeps=2,
                                                moving_average=True), tracker=tracker)
        assert tracker.live == 0


class TestCpAlsFull:
    def test_rank_one_exact(self, rng):
        vecs = [rng.standard_normal(n) for n in (6, 4, 5, 3)]
        t = np.einsum("n,i,j,k->nijk", *vecs)
        fits = []
        cp_als_full(t, SaoConfig(rank=1, alpha=1e-12, max_sweeps=10, mode="cp_als_full"),
                    callback=lambda r, b: fits.append(r.loss_cpd))
        bases = cp_als_full(t, SaoConfig(rank=1, alpha=1e-12, max_sweeps=10,
                                         mode="cp_als_full"))
        assert relative_error(t, bases, 1e-12) <= 1e-8
        assert len(fits) <= 10

    def test_monotone_on_random_instances(self, rng):
        for seed in range(20):
            t = rng.standard_normal((10, 4, 5, 6))
            cfg = SaoConfig(rank=3, alpha=0.01, max_sweeps=15, mode="cp_als_full", seed=seed)
            losses = []
            cp_als_full(t, cfg, callback=lambda r, b: losses.append(r.loss_total))
            assert all(b <= a + 1e-10 * np.sum(t * t) for a, b in zip(losses, losses[1:]))

    def test_two_seeds_agree(self):
        data = generate(SyntheticSpec(n=100, sigma=0.01, seed=4, amplitude=12.0))
        errs = []
        for seed in (0, 1):
            cfg = SaoConfig(rank=5, max_sweeps=50, mode="cp_als_full", seed=seed)
            errs.append(relative_error(data.tensor, cp_als_full(data.tensor, cfg), cfg.alpha))
        assert max(errs) <= 2 * min(errs)

    def test_decompose_dispatch(self, synthetic):
        cfg = SaoConfig(rank=5, max_sweeps=3, mode="cp_als_full")
        bases, reports = decompose(synthetic.tensor, cfg)
        assert len(reports) == 3 and bases.rank == 5

    def test_full_mode_rejected_by_sao(self, synthetic):
        with pytest.raises(ConfigError):
            sao_run(synthetic.tensor, cfg=SaoConfig(rank=5, mode="cp_als_full"))


class TestComplexity:
    @staticmethod
    def sweep_time(n, rank):
        data = generate(SyntheticSpec(n=n, shape=(12, 12, 12), rank=4, seed=0))
        cfg = SaoConfig(rank=rank, eta=0.1, batch_size=32, max_sweeps=3, stop_tol=1e-300)
        sao_run(data.tensor, cfg=cfg.replace(max_sweeps=1))
        best = np.inf
        for _ in range(3):
            start = time.perf_counter()
            sao_run(data.tensor, cfg=cfg)
            best = min(best, time.perf_counter() - start)
        return best

    def test_linear_in_samples(self):
        assert self.sweep_time(512, 8) <= 2.3 * self.sweep_time(256, 8)

    def test_linear_in_rank(self):
        assert self.sweep_time(256, 16) <= 2.3 * self.sweep_time(256, 8)
