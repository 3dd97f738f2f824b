"""Variational Bayesian EM for one group of patches, and the image driver.

Factors are point estimates; the rank-sparsity precisions ``lambda`` and
the noise precisions ``tau_h``, ``tau_m`` carry Gamma posteriors.  One
sweep updates, in order, every ``lambda`` pair, ``tau_h``, ``tau_m`` and
the factors ``T0..T3``.  Each step maximizes the lower bound exactly in
its own block, so the bound never decreases.

The H-side network folds ``P1`` into ``T0`` and ``P2`` into ``T1``; the
M-side network folds ``P3`` into ``T2``.  Gram matrices are always built
from these degraded networks, so the full-resolution ``Z_{!=n}`` is never
formed.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, psi

from .degradation import DegradationModel
from .patchwork import PatchGrid, aggregate, extract_groups, plan_grid
from .sylvester import SingularSystemError, solve_generalized_sylvester, solve_right_linear, sylvester_residual
from .tensor import ORDER, PAIRS, FactorSet, FctnRanks, compose_excluding, degrade_factors, fctn_compose, kron_diag, unfold

log = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-12
PAPER_RANKS = FctnRanks(35, 4, 12, 4, 12, 4)


@dataclass
class GammaPosterior:
    """Gamma with shape ``a`` and rate ``b`` (``b`` may be a vector)."""

    a: float
    b: float | np.ndarray

    def __post_init__(self):
        if self.a <= 0 or np.any(np.asarray(self.b) <= 0):
            raise ValueError(f"Gamma parameters must be positive, got a={self.a}, b={self.b}")

    def mean(self):
        return self.a / self.b

    def log_mean(self):
        return psi(self.a) - np.log(self.b)


@dataclass(frozen=True)
class Hyperpriors:
    a0: float = 1e-6
    b0: float = 1e-6
    c0: float = 1e-6
    d0: float = 1e-6
    e0: float = 1e-6
    f0: float = 1e-6

    def __post_init__(self):
        for name, val in vars(self).items():
            if val <= 0:
                raise ValueError(f"hyperprior {name} must be positive, got {val}")


@dataclass(frozen=True)
class FusionConfig:
    """Settings of the fusion engine.

    Attributes
    ----------
    ranks : FctnRanks
    patch, overlap : int
        Patch side ``m`` and overlap ``p`` in HR pixels.
    max_iters : int
        Number of sweeps per group.
    priors : Hyperpriors
    init_scale : float, optional
        Scale of the random factors (upper bound for ``"uniform"``, standard
        deviation for ``"normal"``).  ``None`` matches the energy of the
        initial composition to the observed HR-MSI.
    init_distribution : {"uniform", "normal"}
    seed : int
        Master seed; group ``k`` draws from ``default_rng([seed, k])``.
    fixed_lambda : float, optional
        Replace every ``lambda`` by this constant and skip its updates.
    fixed_tau : (float, float), optional
        Constant ``(tau_h, tau_m)``; skips the noise updates.
    track_convergence : bool
        Record ``||Z_t - Z_{t-1}|| / ||Z_{t-1}||`` after every sweep.
    workers : int
        Groups fused concurrently.
    """

    ranks: FctnRanks = PAPER_RANKS
    patch: int = 64
    overlap: int = 48
    max_iters: int = 6
    priors: Hyperpriors = field(default_factory=Hyperpriors)
    init_scale: float | None = None
    init_distribution: str = "uniform"
    seed: int = 0
    fixed_lambda: float | None = None
    fixed_tau: tuple[float, float] | None = None
    track_convergence: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.init_distribution not in ("uniform", "normal"):
            raise ValueError(f"unknown init distribution {self.init_distribution!r}")
        if self.init_scale is not None and self.init_scale < 0:
            raise ValueError(f"init_scale must be nonnegative, got {self.init_scale}")
        if self.fixed_lambda is not None and self.fixed_lambda <= 0:
            raise ValueError("fixed_lambda must be positive")
        if self.fixed_tau is not None and min(self.fixed_tau) <= 0:
            raise ValueError("fixed_tau values must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class GroupState:
    """All latent quantities of one group plus diagnostics."""

    factors: FactorSet
    lambdas: dict[tuple[int, int], GammaPosterior]
    tau_h: GammaPosterior
    tau_m: GammaPosterior
    elbo_trace: list[float] = field(default_factory=list)
    z_changes: list[float] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    iteration: int = 0

    def lambda_means(self) -> dict[tuple[int, int], np.ndarray]:
        return {pair: np.broadcast_to(g.mean(), (self.factors.ranks.bond(*pair),)) for pair, g in self.lambdas.items()}


# closed-form shape parameters

def lambda_shape(dims, ranks: FctnRanks, pair, a0: float) -> float:
    n1, n2 = pair
    count = 0
    for n, m in ((n1, n2), (n2, n1)):
        count += dims[n] * np.prod([ranks.bond(j, n) for j in range(ORDER) if j not in (n, m)])
    return a0 + count / 2


def tau_shape(size: int, c0: float) -> float:
    return c0 + size / 2


def _pair(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def auto_init_scale(m_k: np.ndarray, ranks: FctnRanks, distribution: str = "uniform") -> float:
    """Scale at which the composed random network matches the RMS of ``m_k``.

    An entry of the composition sums ``prod(ranks)`` products of four factor
    entries.  Uniform ``[0, u]`` entries give a mean of ``prod(ranks) (u/2)^4``;
    zero-mean Gaussian entries give a variance of ``prod(ranks) s^8``.
    """
    rms = float(np.sqrt(np.mean(np.square(m_k))))
    if rms == 0:
        return 0.0
    paths = float(np.prod(ranks.as_tuple()))
    if distribution == "uniform":
        return 2.0 * (rms / paths) ** 0.25
    return (rms**2 / paths) ** 0.125


def init_state(cfg: FusionConfig, h_k: np.ndarray, m_k: np.ndarray, rng: np.random.Generator | int | None = None
               ) -> GroupState:
    """Random nonnegative factors, unit-mean precisions.

    Shape parameters start at their closed forms, so the rates equal the
    shapes.  With fixed overrides the rates encode the requested constants.
    """
    dims = (m_k.shape[0], m_k.shape[1], h_k.shape[2], h_k.shape[3])
    if h_k.shape[3] != m_k.shape[3]:
        raise ValueError(f"H has {h_k.shape[3]} patches, M has {m_k.shape[3]}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(cfg.seed if rng is None else rng)
    scale = auto_init_scale(m_k, cfg.ranks, cfg.init_distribution) if cfg.init_scale is None else cfg.init_scale
    factors = FactorSet.random(dims, cfg.ranks, rng, scale=scale, distribution=cfg.init_distribution)
    pr = cfg.priors
    lam_mean = 1.0 if cfg.fixed_lambda is None else cfg.fixed_lambda
    lambdas = {}
    for pair in PAIRS:
        a = lambda_shape(dims, cfg.ranks, pair, pr.a0)
        lambdas[pair] = GammaPosterior(a, np.full(cfg.ranks.bond(*pair), a / lam_mean))
    th, tm = (1.0, 1.0) if cfg.fixed_tau is None else cfg.fixed_tau
    c = tau_shape(h_k.size, pr.c0)
    e = tau_shape(m_k.size, pr.e0)
    return GroupState(factors, lambdas, GammaPosterior(c, c / th), GammaPosterior(e, e / tm))


# networks with the degradation folded in

def h_network(f: FactorSet, dm: DegradationModel) -> FactorSet:
    return degrade_factors(f, {0: dm.p1, 1: dm.p2})


def m_network(f: FactorSet, dm: DegradationModel) -> FactorSet:
    return degrade_factors(f, {2: dm.p3})


def _weights(state: GroupState, n: int, skip: int | None = None) -> np.ndarray:
    """Diagonal of the prior precision over the columns of ``unfold(T_n, n)``.

    With ``skip`` set, weights the columns of ``unfold(T_n, skip)`` instead:
    axis ``n`` contributes ones and the bond to ``skip`` is the row.
    """
    means = state.lambda_means()
    vecs = []
    for j in range(ORDER):
        if j == n and skip is not None:
            vecs.append(np.ones(state.factors.dims[n]))
        elif j != n and j != skip:
            vecs.append(means[_pair(n, j)])
    return kron_diag(vecs)


def _check_shapes(state: GroupState, cfg: FusionConfig) -> None:
    pr = cfg.priors
    dims = state.factors.dims
    for pair, g in state.lambdas.items():
        assert np.isclose(g.a, lambda_shape(dims, cfg.ranks, pair, pr.a0)), "lambda shape drifted"


def update_lambda(state: GroupState, cfg: FusionConfig) -> GroupState:
    """Conjugate Gamma update of every rank-sparsity vector, pair by pair."""
    pr = cfg.priors
    dims = state.factors.dims
    for n1, n2 in PAIRS:
        quad = np.zeros(cfg.ranks.bond(n1, n2))
        for n, m in ((n1, n2), (n2, n1)):
            t = unfold(state.factors[n], m)
            quad += (t * t) @ _weights(state, n, skip=m)
        b = pr.b0 + 0.5 * quad
        assert np.all(b > 0)
        state.lambdas[(n1, n2)] = GammaPosterior(lambda_shape(dims, cfg.ranks, (n1, n2), pr.a0), b)
    return state


def _sq(x: np.ndarray) -> float:
    return float(np.vdot(x, x))


def update_tau_h(state: GroupState, cfg: FusionConfig, h_k: np.ndarray, dm: DegradationModel) -> GroupState:
    pr = cfg.priors
    r = _sq(h_k - fctn_compose(h_network(state.factors, dm)))
    state.tau_h = GammaPosterior(tau_shape(h_k.size, pr.c0), pr.d0 + 0.5 * r)
    return state


def update_tau_m(state: GroupState, cfg: FusionConfig, m_k: np.ndarray, dm: DegradationModel) -> GroupState:
    pr = cfg.priors
    r = _sq(m_k - fctn_compose(m_network(state.factors, dm)))
    state.tau_m = GammaPosterior(tau_shape(m_k.size, pr.e0), pr.f0 + 0.5 * r)
    return state


def update_factor(state: GroupState, n: int, h_k: np.ndarray, m_k: np.ndarray, dm: DegradationModel) -> GroupState:
    """Replace ``T_n`` by the maximizer of the bound with everything else fixed."""
    f = state.factors
    th, tm = float(state.tau_h.mean()), float(state.tau_m.mean())
    gh = compose_excluding(h_network(f, dm), n)
    gm = compose_excluding(m_network(f, dm), n)
    gram_h, gram_m = th * (gh @ gh.T), tm * (gm @ gm.T)
    lam = np.diag(_weights(state, n) + LAMBDA_FLOOR)
    hn, mn = unfold(h_k, n), unfold(m_k, n)
    try:
        if n in (0, 1):
            p = dm.p1 if n == 0 else dm.p2
            s1, b, s2 = gram_m + lam, p.T @ p, gram_h
            e = tm * mn @ gm.T + th * p.T @ (hn @ gh.T)
            x = solve_generalized_sylvester(s1, b, s2, e)
        elif n == 2:
            p = dm.p3
            s1, b, s2 = gram_h + lam, p.T @ p, gram_m
            e = tm * p.T @ (mn @ gm.T) + th * hn @ gh.T
            x = solve_generalized_sylvester(s1, b, s2, e)
        else:
            s1 = gram_h + gram_m + lam
            b, s2 = np.zeros((f.dims[n], f.dims[n])), np.zeros_like(s1)
            e = th * hn @ gh.T + tm * mn @ gm.T
            x = solve_right_linear(e, s1)
    except SingularSystemError as exc:
        exc.mode = n
        raise
    state.residuals.append(sylvester_residual(x, s1, b, s2, e))
    shape = f[n].shape
    state.factors = f.replace(n, np.moveaxis(x.reshape((shape[n],) + tuple(np.delete(shape, n)), order="F"), 0, n))
    return state


def compute_elbo(state: GroupState, cfg: FusionConfig, h_k: np.ndarray, m_k: np.ndarray,
                 dm: DegradationModel) -> float:
    """Lower bound on the group evidence, up to an additive constant."""
    pr = cfg.priors
    f = state.factors
    rh = _sq(h_k - fctn_compose(h_network(f, dm)))
    rm = _sq(m_k - fctn_compose(m_network(f, dm)))
    th, tm = state.tau_h, state.tau_m
    elbo = -0.5 * th.mean() * rh - 0.5 * tm.mean() * rm
    for n in range(ORDER):
        t = unfold(f[n], n)
        elbo -= 0.5 * float(np.sum((t * t) @ _weights(state, n)))
    for g in state.lambdas.values():
        b = np.broadcast_to(g.b, np.shape(g.b))
        elbo += float(np.sum(gammaln(g.a) + g.a * (1 - np.log(b) - pr.b0 / b)))
    elbo += gammaln(th.a) + th.a * (1 - np.log(th.b) - pr.d0 / th.b)
    elbo += gammaln(tm.a) + tm.a * (1 - np.log(tm.b) - pr.f0 / tm.b)
    if not np.isfinite(elbo):
        raise FloatingPointError("lower bound is not finite")
    return float(elbo)


def sweep(state: GroupState, cfg: FusionConfig, h_k: np.ndarray, m_k: np.ndarray, dm: DegradationModel) -> GroupState:
    if cfg.fixed_lambda is None:
        update_lambda(state, cfg)
    if cfg.fixed_tau is None:
        update_tau_h(state, cfg, h_k, dm)
        update_tau_m(state, cfg, m_k, dm)
    for n in range(ORDER):
        update_factor(state, n, h_k, m_k, dm)
    state.iteration += 1
    return state


def fuse_group(cfg: FusionConfig, h_k: np.ndarray, m_k: np.ndarray, dm: DegradationModel,
               rng: np.random.Generator | int | None = None) -> tuple[np.ndarray, GroupState]:
    """Run ``cfg.max_iters`` sweeps on one group and compose the result."""
    state = init_state(cfg, h_k, m_k, rng)
    prev = fctn_compose(state.factors) if cfg.track_convergence else None
    for _ in range(cfg.max_iters):
        sweep(state, cfg, h_k, m_k, dm)
        _check_shapes(state, cfg)
        state.elbo_trace.append(compute_elbo(state, cfg, h_k, m_k, dm))
        if cfg.track_convergence:
            z = fctn_compose(state.factors)
            state.z_changes.append(float(np.linalg.norm(z - prev) / max(np.linalg.norm(prev), 1e-300)))
            prev = z
    return fctn_compose(state.factors), state


@dataclass
class FusionResult:
    image: np.ndarray
    grid: PatchGrid
    states: list[GroupState]


def fuse(cfg: FusionConfig, hsi: np.ndarray, msi: np.ndarray, dm: DegradationModel) -> FusionResult:
    """Fuse a full LR-HSI / HR-MSI pair group by group.

    ``dm`` may be built either for the whole image or for one patch; in
    the former case it is restricted to the patch size.
    """
    w, h = msi.shape[:2]
    grid = plan_grid(w, h, cfg.patch, cfg.overlap, dm.sf)
    pdm = dm if dm.p1.shape[1] == cfg.patch and dm.p2.shape[1] == cfg.patch else dm.for_patch(cfg.patch)
    groups = extract_groups(hsi, msi, grid)

    def run(g):
        log.info("fusing group %d/%d", g.index + 1, grid.groups)
        return fuse_group(cfg, g.h, g.m, pdm, np.random.default_rng([cfg.seed, g.index]))

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(run, groups))
    else:
        results = [run(g) for g in groups]
    return FusionResult(aggregate([z for z, _ in results], grid), grid, [s for _, s in results])
