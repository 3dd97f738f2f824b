import numpy as np
import pytest
from scipy.special import gammaln, psi

from bfctn.degradation import DegradationModel, block_srf, build_kernel, degrade
from bfctn.inference import (
    FusionConfig,
    GammaPosterior,
    Hyperpriors,
    auto_init_scale,
    compute_elbo,
    fuse,
    fuse_group,
    h_network,
    init_state,
    lambda_shape,
    m_network,
    tau_shape,
    update_factor,
    update_lambda,
    update_tau_h,
    update_tau_m,
)
from bfctn.tensor import ORDER, PAIRS, FactorSet, FctnRanks, fctn_compose, kron_diag


def identity_model(w, bands):
    return DegradationModel.build(build_kernel("average", size=1), 1, w, w, np.eye(bands))


def small_problem(seed=0, dims=(8, 8, 4, 3), ranks=(2, 1, 2, 1, 2, 1), sf=2, out=2):
    rng = np.random.default_rng(seed)
    ranks = FctnRanks(*ranks)
    z = fctn_compose(FactorSet.random(dims, ranks, rng, distribution="uniform"))
    z /= z.max()
    dm = DegradationModel.build(build_kernel("gaussian", size=3, sigma=1.0), sf, dims[0], dims[1],
                                block_srf(dims[2], out))
    h = np.stack([degrade(z[..., i], dm)[0] for i in range(dims[3])], axis=3)
    m = np.stack([degrade(z[..., i], dm)[1] for i in range(dims[3])], axis=3)
    h += 0.01 * rng.standard_normal(h.shape)
    m += 0.01 * rng.standard_normal(m.shape)
    return FusionConfig(ranks=ranks, patch=dims[0], seed=seed), h, m, dm


class TestGamma:

    def test_moments(self):
        g = GammaPosterior(3.0, 2.0)
        assert g.mean() == 1.5
        assert np.isclose(g.log_mean(), psi(3.0) - np.log(2.0))

    def test_vector_rate(self):
        assert np.allclose(GammaPosterior(2.0, np.array([1.0, 4.0])).mean(), [2.0, 0.5])

    @pytest.mark.parametrize("a,b", [(0.0, 1.0), (1.0, -1.0), (1.0, np.array([1.0, 0.0]))])
    def test_invalid(self, a, b):
        with pytest.raises(ValueError):
            GammaPosterior(a, b)

    def test_invalid_priors_and_config(self):
        with pytest.raises(ValueError):
            Hyperpriors(a0=0.0)
        with pytest.raises(ValueError):
            FusionConfig(max_iters=0)
        with pytest.raises(ValueError):
            FusionConfig(fixed_tau=(1.0, 0.0))


class TestClosedForms:
    cave = (64, 64, 31, 29)

    def test_lambda_shape_cave(self):
        a = lambda_shape(self.cave, FctnRanks(35, 4, 12, 4, 12, 4), (0, 1), 1e-6)
        assert a - 1e-6 == 3072

    def test_tau_shapes_cave(self):
        assert tau_shape(16 * 16 * 31 * 29, 1e-6) - 1e-6 == 115072
        assert tau_shape(64 * 64 * 3 * 29, 1e-6) - 1e-6 == 178176

    def test_shapes_constant_over_iterations(self):
        cfg, h, m, dm = small_problem()
        cfg = FusionConfig(ranks=cfg.ranks, patch=8, max_iters=3)
        state = init_state(cfg, h, m)
        expected = {p: g.a for p, g in state.lambdas.items()}
        c, e = state.tau_h.a, state.tau_m.a
        for _ in range(3):
            update_lambda(state, cfg)
            update_tau_h(state, cfg, h, dm)
            update_tau_m(state, cfg, m, dm)
            assert {p: g.a for p, g in state.lambdas.items()} == expected
            assert state.tau_h.a == c == tau_shape(h.size, 1e-6)
            assert state.tau_m.a == e == tau_shape(m.size, 1e-6)


class TestInit:

    def test_deterministic(self):
        cfg, h, m, _ = small_problem()
        s1, s2 = init_state(cfg, h, m), init_state(cfg, h, m)
        for a, b in zip(s1.factors.factors, s2.factors.factors):
            assert np.array_equal(a, b)

    def test_unit_means(self):
        cfg, h, m, _ = small_problem()
        s = init_state(cfg, h, m)
        for pair, g in s.lambdas.items():
            assert np.allclose(g.mean(), 1.0)
        means = s.lambda_means()
        assert np.array_equal(kron_diag([means[p] for p in PAIRS]), np.ones(int(np.prod(cfg.ranks.as_tuple()))))
        assert np.isclose(s.tau_h.mean(), 1) and np.isclose(s.tau_m.mean(), 1)

    def test_auto_scale_matches_energy(self):
        cfg, h, m, _ = small_problem()
        ranks = FctnRanks(3, 2, 2, 2, 3, 2)
        vals = []
        for seed in range(20):
            s = init_state(FusionConfig(ranks=ranks, patch=8, seed=seed), h, m)
            vals.append(fctn_compose(s.factors).mean())
        assert np.mean(vals) == pytest.approx(np.sqrt(np.mean(m**2)), rel=0.1)
        assert auto_init_scale(np.zeros((2, 2)), ranks) == 0.0

    def test_zero_scale_update_well_posed(self):
        cfg, h, m, dm = small_problem()
        cfg = FusionConfig(ranks=cfg.ranks, patch=8, init_scale=0.0)
        s = init_state(cfg, h, m)
        assert not any(t.any() for t in s.factors.factors)
        update_factor(s, 0, h, m, dm)
        assert np.all(np.isfinite(s.factors[0]))

    def test_fixed_override_means(self):
        cfg, h, m, _ = small_problem()
        s = init_state(FusionConfig(ranks=cfg.ranks, patch=8, fixed_lambda=0.5, fixed_tau=(2.0, 3.0)), h, m)
        assert all(np.allclose(g.mean(), 0.5) for g in s.lambdas.values())
        assert np.isclose(s.tau_h.mean(), 2.0) and np.isclose(s.tau_m.mean(), 3.0)


def scalar_setup(values=(1.0, 1.0, 1.0, 1.0)):
    ranks = FctnRanks(*(1,) * 6)
    cfg = FusionConfig(ranks=ranks, patch=1, priors=Hyperpriors(*(0.5,) * 6))
    f = FactorSet([np.full((1, 1, 1, 1), v) for v in values], ranks)
    one = np.ones((1, 1))
    dm = DegradationModel(one, one, one, 1)
    return cfg, f, dm


class TestLambdaUpdate:

    def test_zero_factors(self):
        cfg, h, m, _ = small_problem()
        s = init_state(FusionConfig(ranks=cfg.ranks, patch=8, init_scale=0.0), h, m)
        update_lambda(s, cfg)
        for pair, g in s.lambdas.items():
            assert np.all(g.b == cfg.priors.b0)
            assert np.allclose(g.mean(), g.a / cfg.priors.b0)

    def test_scalar_by_hand(self):
        cfg, f, dm = scalar_setup((2.0, 3.0, 1.0, 1.0))
        s = init_state(cfg, np.ones((1, 1, 1, 1)), np.ones((1, 1, 1, 1)))
        s.factors = f
        # other pairs have mean 2 (shape 1.5, rate 0.75)
        for pair in PAIRS:
            s.lambdas[pair] = GammaPosterior(1.5, np.array([0.75]))
        update_lambda(s, cfg)
        # pair (0,1): T0 weight lambda02*lambda03 = 4, T1 weight lambda12*lambda13 = 4
        g = s.lambdas[(0, 1)]
        assert g.a == 0.5 + 1.0
        assert np.isclose(g.b[0], 0.5 + 0.5 * (4.0 * 4 + 9.0 * 4))

    def test_matches_elementwise_sum(self):
        cfg, h, m, _ = small_problem(1)
        s = init_state(cfg, h, m)
        rng = np.random.default_rng(2)
        for pair in PAIRS:
            s.lambdas[pair] = GammaPosterior(2.0, rng.random(cfg.ranks.bond(*pair)) + 0.5)
        means = {p: g.mean().copy() for p, g in s.lambdas.items()}
        update_lambda(s, cfg)
        # oracle for the first pair only, since later pairs see refreshed means
        t0, t1 = s.factors[0], s.factors[1]
        b = np.full(cfg.ranks.bond(0, 1), cfg.priors.b0)
        for idx in np.ndindex(t0.shape):
            b[idx[1]] += 0.5 * t0[idx] ** 2 * means[(0, 2)][idx[2]] * means[(0, 3)][idx[3]]
        for idx in np.ndindex(t1.shape):
            b[idx[0]] += 0.5 * t1[idx] ** 2 * means[(1, 2)][idx[2]] * means[(1, 3)][idx[3]]
        assert np.allclose(s.lambdas[(0, 1)].b, b)


class TestTauUpdate:

    def exact(self):
        cfg, h, m, dm = small_problem()
        s = init_state(cfg, h, m)
        return cfg, s, fctn_compose(h_network(s.factors, dm)), fctn_compose(m_network(s.factors, dm)), dm

    def test_perfect_reconstruction(self):
        cfg, s, h, m, dm = self.exact()
        update_tau_h(s, cfg, h, dm)
        update_tau_m(s, cfg, m, dm)
        assert np.isclose(s.tau_h.b, cfg.priors.d0, rtol=0, atol=1e-20)
        assert np.isclose(s.tau_m.b, cfg.priors.f0, rtol=0, atol=1e-20)

    def test_residual_two(self):
        cfg, s, h, m, dm = self.exact()
        h = h.copy()
        h.flat[0] += 1.0
        h.flat[1] -= 1.0
        update_tau_h(s, cfg, h, dm)
        assert np.isclose(s.tau_h.b, cfg.priors.d0 + 1.0)
        assert s.tau_h.mean() == s.tau_h.a / s.tau_h.b


def objective_oracle(state, n, h, m, dm):
    """Dense least-squares minimizer of the factor-n objective, built by probing basis tensors."""
    f = state.factors
    th, tm = float(state.tau_h.mean()), float(state.tau_m.mean())
    means = state.lambda_means()
    shape = f[n].shape
    cols = []
    for k in range(int(np.prod(shape))):
        basis = np.zeros(int(np.prod(shape)))
        basis[k] = 1.0
        g = f.replace(n, basis.reshape(shape))
        cols.append(np.concatenate([np.sqrt(th) * fctn_compose(h_network(g, dm)).ravel(),
                                    np.sqrt(tm) * fctn_compose(m_network(g, dm)).ravel()]))
    a = np.array(cols).T
    prec = np.ones(shape)
    for j in range(ORDER):
        if j != n:
            vec = means[tuple(sorted((n, j)))]
            prec = prec * vec.reshape([-1 if q == j else 1 for q in range(ORDER)])
    lhs = a.T @ a + np.diag(prec.ravel() + 1e-12)
    rhs = a.T @ np.concatenate([np.sqrt(th) * h.ravel(), np.sqrt(tm) * m.ravel()])
    return np.linalg.solve(lhs, rhs).reshape(shape)


class TestFactorUpdate:

    @pytest.mark.parametrize("n", range(4))
    def test_against_dense_oracle(self, n):
        cfg, h, m, dm = small_problem(3, dims=(4, 4, 4, 2), ranks=(2, 1, 2, 1, 2, 1), sf=2)
        s = init_state(cfg, h, m)
        update_lambda(s, cfg)
        update_tau_h(s, cfg, h, dm)
        update_tau_m(s, cfg, m, dm)
        ref = objective_oracle(s, n, h, m, dm)
        update_factor(s, n, h, m, dm)
        assert np.linalg.norm(s.factors[n] - ref) / np.linalg.norm(ref) < 1e-8

    def test_scalar_closed_form(self):
        cfg, f, dm = scalar_setup((1.0, 2.0, 3.0, 0.5))
        h, m = np.full((1, 1, 1, 1), 4.0), np.full((1, 1, 1, 1), 5.0)
        s = init_state(cfg, h, m)
        s.factors = f
        s.tau_h, s.tau_m = GammaPosterior(2.0, 1.0), GammaPosterior(3.0, 1.0)
        update_factor(s, 0, h, m, dm)
        g = 2.0 * 3.0 * 0.5
        lam = 1.0
        expected = (3.0 * 5.0 * g + 2.0 * 4.0 * g) / (3.0 * g * g + 2.0 * g * g + lam + 1e-12)
        assert np.isclose(s.factors[0].item(), expected)

    def test_idempotent(self):
        cfg, h, m, dm = small_problem(4)
        s = init_state(cfg, h, m)
        for n in range(4):
            update_factor(s, n, h, m, dm)
            first = s.factors[n].copy()
            update_factor(s, n, h, m, dm)
            assert np.allclose(s.factors[n], first, rtol=1e-9, atol=1e-12)

    def test_residuals_recorded(self):
        cfg, h, m, dm = small_problem(5)
        _, state = fuse_group(FusionConfig(ranks=cfg.ranks, patch=8, max_iters=3), h, m, dm)
        assert len(state.residuals) == 12
        assert max(state.residuals) < 1e-9


def full_elbo(state, cfg, h, m, dm):
    """Mean-field lower bound with every term, point-estimate factors."""
    pr = cfg.priors
    f = state.factors
    out = 0.0
    for tau, data, net, (p0, q0) in ((state.tau_h, h, h_network, (pr.c0, pr.d0)),
                                      (state.tau_m, m, m_network, (pr.e0, pr.f0))):
        r = np.sum((data - fctn_compose(net(f, dm))) ** 2)
        out += 0.5 * data.size * tau.log_mean() - 0.5 * tau.mean() * r
        out += p0 * np.log(q0) - gammaln(p0) + (p0 - 1) * tau.log_mean() - q0 * tau.mean()
        out -= tau.a * np.log(tau.b) - gammaln(tau.a) + (tau.a - 1) * tau.log_mean() - tau.b * tau.mean()
    for n in range(ORDER):
        t = f[n]
        for idx in np.ndindex(t.shape):
            w, lw = 1.0, 0.0
            for j in range(ORDER):
                if j != n:
                    g = state.lambdas[tuple(sorted((n, j)))]
                    w *= np.broadcast_to(g.mean(), (t.shape[j],))[idx[j]]
                    lw += np.broadcast_to(g.log_mean(), (t.shape[j],))[idx[j]]
            out += 0.5 * lw - 0.5 * w * t[idx] ** 2
    for g in state.lambdas.values():
        b = np.broadcast_to(g.b, np.shape(g.mean()))
        lm, mu = g.log_mean(), g.mean()
        out += np.sum(pr.a0 * np.log(pr.b0) - gammaln(pr.a0) + (pr.a0 - 1) * lm - pr.b0 * mu)
        out -= np.sum(g.a * np.log(b) - gammaln(g.a) + (g.a - 1) * lm - b * mu)
    return float(out)


class TestElbo:

    def test_gamma_blocks_vanish(self):
        cfg, f, dm = scalar_setup((0.0, 0.0, 0.0, 0.0))
        cfg = FusionConfig(ranks=cfg.ranks, patch=1, priors=Hyperpriors(*(1.0,) * 6))
        zero = np.zeros((1, 1, 1, 1))
        s = init_state(cfg, zero, zero)
        s.factors = f
        s.lambdas = {p: GammaPosterior(1.0, np.ones(1)) for p in PAIRS}
        s.tau_h = GammaPosterior(1.0, 1.0)
        s.tau_m = GammaPosterior(1.0, 1.0)
        assert compute_elbo(s, cfg, zero, zero, dm) == 0.0

    def test_matches_full_bound_up_to_constant(self):
        cfg, h, m, dm = small_problem(6, dims=(4, 4, 4, 2), sf=2)
        s = init_state(cfg, h, m)
        gaps = []
        for _ in range(3):
            update_lambda(s, cfg)
            update_tau_h(s, cfg, h, dm)
            update_tau_m(s, cfg, m, dm)
            update_factor(s, 1, h, m, dm)
            gaps.append(compute_elbo(s, cfg, h, m, dm) - full_elbo(s, cfg, h, m, dm))
        assert np.allclose(gaps, gaps[0], rtol=0, atol=1e-6 * abs(gaps[0]) + 1e-8)

    def test_better_fit_raises_bound(self):
        cfg, h, m, dm = small_problem(7)
        s = init_state(cfg, h, m)
        before = compute_elbo(s, cfg, h, m, dm)
        exact = fctn_compose(h_network(s.factors, dm)), fctn_compose(m_network(s.factors, dm))
        assert compute_elbo(s, cfg, *exact, dm) > before

    @pytest.mark.parametrize("seed", range(3))
    def test_monotone_trace(self, seed):
        cfg, h, m, dm = small_problem(seed)
        _, state = fuse_group(FusionConfig(ranks=cfg.ranks, patch=8, max_iters=8, seed=seed), h, m, dm)
        trace = np.array(state.elbo_trace)
        assert np.all(np.diff(trace) >= -1e-6 * np.abs(trace[1:]))


class TestFuseGroup:

    def test_single_sweep(self):
        cfg, h, m, dm = small_problem()
        _, s = fuse_group(FusionConfig(ranks=cfg.ranks, patch=8, max_iters=1), h, m, dm)
        assert s.iteration == 1 and len(s.elbo_trace) == 1

    @pytest.mark.parametrize("dims,ranks,seed", [((12, 12, 5, 3), (1,) * 6, 0), ((16, 16, 6, 4), (2,) * 6, 1),
                                                 ((16, 16, 6, 4), (2,) * 6, 2)])
    def test_self_consistency(self, dims, ranks, seed):
        ranks = FctnRanks(*ranks)
        z = fctn_compose(FactorSet.random(dims, ranks, np.random.default_rng(seed), distribution="uniform"))
        z /= z.max()
        cfg = FusionConfig(ranks=ranks, patch=dims[0], seed=seed, track_convergence=True)
        out, s = fuse_group(cfg, z, z, identity_model(dims[0], dims[2]))
        assert np.linalg.norm(out - z) / np.linalg.norm(z) < 1e-3
        assert len(s.z_changes) == 6 and s.z_changes[-1] < s.z_changes[0]

    def test_fixed_parameters_skip_updates(self):
        cfg, h, m, dm = small_problem()
        cfg = FusionConfig(ranks=cfg.ranks, patch=8, max_iters=2, fixed_lambda=1.0, fixed_tau=(1.0, 1.0))
        out, s = fuse_group(cfg, h, m, dm)
        assert all(np.allclose(g.mean(), 1.0) for g in s.lambdas.values())
        assert np.isclose(s.tau_h.mean(), 1.0) and np.isclose(s.tau_m.mean(), 1.0)
        assert np.all(np.isfinite(out))


class TestFuse:

    def image(self):
        rng = np.random.default_rng(8)
        x, y, spec = rng.random(32) + 0.5, rng.random(32) + 0.5, rng.random(6) + 0.5
        z = np.einsum("i,j,k->ijk", x, y, spec)
        return z / z.max()

    def test_identity_scenario(self):
        z = self.image()
        cfg = FusionConfig(ranks=FctnRanks(1, 1, 1, 1, 2, 1), patch=16, overlap=0)
        res = fuse(cfg, z, z, identity_model(32, 6))
        assert res.grid.groups == 2
        mse = np.mean((res.image - z) ** 2)
        assert 10 * np.log10(1 / mse) >= 60

    def test_reproducible_and_schedule_free(self):
        z = self.image()
        dm = DegradationModel.build(build_kernel("average", size=2), 2, 32, 32, block_srf(6, 2))
        h, m = degrade(z, dm)
        cfg = FusionConfig(ranks=FctnRanks(2, 1, 1, 1, 2, 1), patch=16, overlap=8, max_iters=2, seed=3)
        a = fuse(cfg, h, m, dm).image
        b = fuse(cfg, h, m, dm).image
        c = fuse(FusionConfig(**{**vars(cfg), "workers": 3}), h, m, dm).image
        assert np.array_equal(a, b) and np.array_equal(a, c)
