"""Closed-form theory on finite discrete distributions.

Optimal discriminators for the multi-pair objective, the generators' cost
under best-response discriminators and its divergence decomposition, the
privacy/fit tradeoff curve, and the optimal score-based membership adversary
with its exhaustive brute-force counterpart. All logs are natural; 0·log 0
is taken as 0 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import ContractError, Rng, ShapeError

DIST_TOL = 1e-12


def validate_dist(p, name: str = "distribution") -> np.ndarray:
    v = np.asarray(p, dtype=np.float64).ravel()
    if v.size == 0:
        raise ContractError(f"{name} is empty")
    if v.min() < 0:
        raise ContractError(f"{name} has a negative entry")
    if abs(v.sum() - 1.0) > 1e-9:
        raise ContractError(f"{name} sums to {v.sum()}, not 1")
    return v


def _xlogy(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """x·log(y) with the 0·log 0 := 0 convention."""
    out = np.zeros_like(x)
    mask = x > 0
    out[mask] = x[mask] * np.log(y[mask])
    return out


def kl(p, q) -> float:
    """KL(p‖q); +inf when q has a zero where p has mass."""
    p = validate_dist(p, "p")
    q = validate_dist(q, "q")
    if p.size != q.size:
        raise ShapeError(f"length mismatch: {p.size} vs {q.size}")
    if np.any((q == 0) & (p > 0)):
        return float("inf")
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def jsd_n(dists) -> float:
    """Jensen-Shannon divergence of N distributions: (1/N)·Σ KL(pᵢ‖mean)."""
    ds = [validate_dist(d, f"dists[{i}]") for i, d in enumerate(dists)]
    m = len(ds)
    if m < 2:
        raise ContractError("need at least 2 distributions")
    size = ds[0].size
    if any(d.size != size for d in ds):
        raise ShapeError("distributions have different support sizes")
    mean = np.mean(ds, axis=0)
    return float(sum(kl(d, mean) for d in ds) / m)


def tvd(p, q) -> float:
    """Total variation distance: ½·Σ|pᵢ−qᵢ|."""
    p = validate_dist(p, "p")
    q = validate_dist(q, "q")
    if p.size != q.size:
        raise ShapeError(f"length mismatch: {p.size} vs {q.size}")
    return float(0.5 * np.abs(p - q).sum())


# ---------------------------------------------------------------------------
# Best-response discriminators and the generators' cost
# ---------------------------------------------------------------------------


def optimal_discriminators(real_dist, gen_dist, all_gen_dists):
    """Best-response discriminator values on the shared support.

    Returns (pair_disc, privacy_disc): pair_disc[x] = pᵢ/(pᵢ+gᵢ) for the
    real/fake discriminator of the given pair, and privacy_disc[x, j] =
    gⱼ/Σₖgₖ for the generator-identification head over all pairs. Points
    where the denominator is zero are NaN (undefined, excluded from use).
    """
    p = validate_dist(real_dist, "real_dist")
    g = validate_dist(gen_dist, "gen_dist")
    gs = np.stack([validate_dist(d, f"all_gen_dists[{i}]") for i, d in enumerate(all_gen_dists)])
    if p.size != g.size or gs.shape[1] != p.size:
        raise ShapeError("support sizes disagree")

    denom = p + g
    pair = np.full(p.size, np.nan)
    np.divide(p, denom, out=pair, where=denom > 0)

    total = gs.sum(axis=0)
    privacy = np.full((p.size, gs.shape[0]), np.nan)
    np.divide(gs.T, total[:, None], out=privacy, where=total[:, None] > 0)
    return pair, privacy


def generator_cost(real_dists, gen_dists, privacy_weight: float) -> float:
    """Generators' cost once every discriminator is best-response.

    Computed through the divergence decomposition
    Σᵢ 2·JSD(pᵢ, gᵢ) + N·λ·JSD(g₁..g_N) − N(log 4 + λ·log N),
    which takes its minimum exactly when every gᵢ equals every pᵢ.
    """
    ps = [validate_dist(d, f"real_dists[{i}]") for i, d in enumerate(real_dists)]
    gs = [validate_dist(d, f"gen_dists[{i}]") for i, d in enumerate(gen_dists)]
    if len(ps) != len(gs):
        raise ShapeError(f"{len(ps)} real vs {len(gs)} generator distributions")
    n = len(ps)
    if privacy_weight <= 0:
        raise ContractError("privacy weight must be positive")
    fit = sum(jsd_n([p, g]) for p, g in zip(ps, gs))
    spread = jsd_n(gs) if n >= 2 else 0.0
    return float(2.0 * fit + n * privacy_weight * spread - n * (np.log(4.0) + privacy_weight * np.log(n)))


def generator_cost_direct(real_dists, gen_dists, privacy_weight: float) -> float:
    """Expectation route for the same cost: Σᵢ E_pᵢ[log Dᵢ*] + E_gᵢ[log(1−Dᵢ*)]
    + λ·E_gᵢ[log D_pⁱ*], with best-response discriminators plugged in."""
    ps = [validate_dist(d) for d in real_dists]
    gs = [validate_dist(d) for d in gen_dists]
    if len(ps) != len(gs):
        raise ShapeError(f"{len(ps)} real vs {len(gs)} generator distributions")
    total = 0.0
    for i, (p, g) in enumerate(zip(ps, gs)):
        pair, privacy = optimal_discriminators(p, g, gs)
        total += np.sum(_xlogy(p, np.where(np.isnan(pair), 1.0, pair)))
        total += np.sum(_xlogy(g, np.where(np.isnan(pair), 1.0, 1.0 - pair)))
        dp_col = privacy[:, i]
        total += privacy_weight * np.sum(_xlogy(g, np.where(np.isnan(dp_col), 1.0, dp_col)))
    return float(total)


# ---------------------------------------------------------------------------
# Privacy/fit tradeoff over generator distributions
# ---------------------------------------------------------------------------


@dataclass
class TradeoffPoint:
    privacy_weight: float
    fit: float  # Σᵢ JSD(pᵢ, gᵢ*) at the optimum
    spread: float  # JSD(g₁*..g_N*) at the optimum
    objective: float  # fit + (N·λ/2)·spread
    gen_dists: list[np.ndarray]
    converged: bool


_FLOOR = 1e-12


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u * np.arange(1, v.size + 1) > css)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _tradeoff_objective(ps: np.ndarray, gs: np.ndarray, weight: float) -> float:
    n = ps.shape[0]
    g = np.maximum(gs, _FLOOR)
    fit = sum(jsd_n([ps[i], g[i] / g[i].sum()]) for i in range(n))
    spread = jsd_n([g[i] / g[i].sum() for i in range(n)])
    return float(fit + 0.5 * n * weight * spread)


def _tradeoff_grad(ps: np.ndarray, gs: np.ndarray, weight: float) -> np.ndarray:
    # ∂/∂gᵢₖ [Σ JSD(pᵢ,gᵢ) + (Nλ/2)·JSD(g₁..g_N)]
    #   = ½·log(gᵢₖ/mᵢₖ) + (λ/2)·log(gᵢₖ/ḡₖ),  mᵢ=(pᵢ+gᵢ)/2, ḡ=mean over i
    g = np.maximum(gs, _FLOOR)
    pair_mean = (ps + g) / 2.0
    grand_mean = g.mean(axis=0)
    return 0.5 * np.log(g / pair_mean) + 0.5 * weight * np.log(g / grand_mean[None, :])


def privacy_tradeoff_curve(real_dists, weights, restarts: int = 20,
                           tol: float = 1e-8, seed: int = 0,
                           max_iters: int = 4000) -> list[TradeoffPoint]:
    """Minimize Σ JSD(pᵢ,gᵢ) + (Nλ/2)·JSD(g₁..g_N) over generator dists.

    Projected gradient descent with random restarts on the product of
    simplices; as the privacy weight grows the optimized spread term is
    non-increasing. Non-converged weights are flagged.
    """
    ps = np.stack([validate_dist(d, f"real_dists[{i}]") for i, d in enumerate(real_dists)])
    n, m = ps.shape
    if n > 3 or m > 8:
        raise ContractError(f"tradeoff curve supports N ≤ 3, M ≤ 8; got N={n}, M={m}")
    rng = Rng(seed).substream("tradeoff")

    points = []
    for w in weights:
        if w <= 0:
            raise ContractError("privacy weights must be positive")
        best_val, best_g, converged = np.inf, None, False
        starts = [ps.copy()] + [
            np.stack([_project_simplex(rng.uniform(1, m, 0.0, 1.0).ravel()) for _ in range(n)])
            for _ in range(restarts - 1)
        ]
        for g0 in starts:
            g = np.maximum(g0, _FLOOR)
            g /= g.sum(axis=1, keepdims=True)
            step = 0.25
            val = _tradeoff_objective(ps, g, w)
            ok = False
            for _ in range(max_iters):
                grad = _tradeoff_grad(ps, g, w)
                trial = np.stack([_project_simplex(g[i] - step * grad[i]) for i in range(n)])
                trial_val = _tradeoff_objective(ps, trial, w)
                if trial_val <= val - tol:
                    g, val = trial, trial_val
                elif step > 1e-6:
                    step *= 0.5
                else:
                    ok = True
                    break
            if val < best_val:
                best_val, best_g, converged = val, g, ok
        gs = [np.maximum(best_g[i], _FLOOR) for i in range(n)]
        gs = [gi / gi.sum() for gi in gs]
        fit = float(sum(jsd_n([ps[i], gs[i]]) for i in range(n)))
        spread = float(jsd_n(gs))
        points.append(
            TradeoffPoint(
                privacy_weight=float(w),
                fit=fit,
                spread=spread,
                objective=float(best_val),
                gen_dists=gs,
                converged=converged,
            )
        )
    return points


# ---------------------------------------------------------------------------
# Optimal score-based membership adversary
# ---------------------------------------------------------------------------


@dataclass
class AdversarySetup:
    """Score distributions P (train) and Q (holdout) plus the train share f."""

    p: np.ndarray
    q: np.ndarray
    f: float

    def __post_init__(self):
        self.p = validate_dist(self.p, "P")
        self.q = validate_dist(self.q, "Q")
        if self.p.size != self.q.size:
            raise ShapeError(f"P has {self.p.size} outcomes, Q has {self.q.size}")
        if not 0.0 < self.f < 1.0:
            raise ContractError(f"f must lie in (0, 1), got {self.f}")


@dataclass
class AdversaryDecision:
    delta: np.ndarray  # per-outcome membership call, ∈ {0, 1}
    expected_payoff: float
    # debug intermediates: outcome mass and posterior train probability
    outcome_mass: np.ndarray | None = None
    posterior: np.ndarray | None = None


def optimal_adversary(setup: AdversarySetup) -> AdversaryDecision:
    """Best deterministic per-outcome rule: call train iff pᵢf ≥ qᵢ(1−f).

    The achieved expected payoff (P(correct) − P(wrong)) is Σᵢ|pᵢf − qᵢ(1−f)|.
    """
    margin = setup.p * setup.f - setup.q * (1.0 - setup.f)
    delta = (margin >= 0).astype(np.int8)
    mass = setup.p * setup.f + setup.q * (1.0 - setup.f)
    posterior = np.full(mass.size, np.nan)
    np.divide(setup.p * setup.f, mass, out=posterior, where=mass > 0)
    return AdversaryDecision(
        delta=delta,
        expected_payoff=float(np.abs(margin).sum()),
        outcome_mass=mass,
        posterior=posterior,
    )


def brute_force_adversary(setup: AdversarySetup, max_support: int = 20) -> AdversaryDecision:
    """Exhaustive oracle: score all 2^M decision rules by first principles.

    For a rule δ, payoff = Σᵢ [δᵢ·pᵢf + (1−δᵢ)·qᵢ(1−f)] − Σᵢ [δᵢ·qᵢ(1−f) +
    (1−δᵢ)·pᵢf], evaluated directly for every δ.
    """
    m = setup.p.size
    if m > max_support:
        raise ContractError(f"support {m} too large for enumeration (max {max_support})")
    bits = ((np.arange(2 ** m)[:, None] >> np.arange(m)[None, :]) & 1).astype(np.float64)
    train_mass = setup.p * setup.f
    holdout_mass = setup.q * (1.0 - setup.f)
    correct = bits @ train_mass + (1.0 - bits) @ holdout_mass
    wrong = bits @ holdout_mass + (1.0 - bits) @ train_mass
    payoffs = correct - wrong
    best = int(np.argmax(payoffs))
    return AdversaryDecision(
        delta=bits[best].astype(np.int8),
        expected_payoff=float(payoffs[best]),
    )


def random_adversary_setup(rng: Rng, support: int, f: float) -> AdversarySetup:
    """Random (P, Q, f) instance on a given support size."""
    p = rng.uniform(1, support, 0.0, 1.0).ravel()
    q = rng.uniform(1, support, 0.0, 1.0).ravel()
    return AdversarySetup(p / p.sum(), q / q.sum(), f)
