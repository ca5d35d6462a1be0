"""Monte-Carlo validation harness.

Everything in here knows the ground truth that the rest of the package is
built to live without: prices, marginal costs, and full demand primitives.
Synthetic markets (CES or logit) are generated, their true pre- and
post-merger Bertrand equilibria solved, and the observable slice (revenues,
margins, revenue diversion) fed to the screening toolkit so its predictions
can be scored against the true price effects.

Per-trial randomness uses counter-based Philox streams keyed by
(experiment seed, trial index), so results are reproducible regardless of
how trials are scheduled.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import ces, effects
from .ces import CESEconomy, Consumer, NestedCESEconomy
from .errors import ConvergenceError, InputValidationError
from .market import DiversionMatrix, Market, MergerSpec, Product


# ---------------------------------------------------------------------------
# Ground-truth demand models
# ---------------------------------------------------------------------------

class CESGroundTruth:
    """CES demand with known qualities: utilities log(beta_ij) + (1-eta) log p_j,
    outside option fixed at zero. ``consider`` masks each consumer's set."""

    model = "ces"

    def __init__(self, betas, budgets, eta, weights=None, consider=None):
        self.betas = np.asarray(betas, dtype=float)
        self.budgets = np.asarray(budgets, dtype=float)
        self.eta = float(eta)
        n, j = self.betas.shape
        self.weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        self.consider = (
            np.ones((n, j), dtype=bool) if consider is None else np.asarray(consider, dtype=bool)
        )
        if np.any(self.betas[self.consider] <= 0):
            raise InputValidationError("qualities must be positive")
        if self.eta <= 1.0:
            raise InputValidationError("eta must be > 1")

    @property
    def n_products(self) -> int:
        return self.betas.shape[1]

    def share_rows(self, prices: np.ndarray) -> np.ndarray:
        """Inside shares per consumer; the outside share is 1 - row sum."""
        u = np.where(self.consider, np.log(self.betas) + (1.0 - self.eta) * np.log(prices)[None, :], -np.inf)
        m = np.maximum(np.max(u, axis=1, keepdims=True), 0.0)
        z = np.exp(u - m)
        z[~self.consider] = 0.0
        denom = z.sum(axis=1, keepdims=True) + np.exp(-m)
        return z / denom

    def revenues(self, prices: np.ndarray) -> np.ndarray:
        wb = self.weights * self.budgets
        return wb @ self.share_rows(prices)

    def quantities(self, prices: np.ndarray) -> np.ndarray:
        return self.revenues(prices) / prices

    def quantity_jacobian(self, prices: np.ndarray) -> np.ndarray:
        """dq_l/dp_j as [l, j]; analytic from the softmax derivatives."""
        alpha = self.share_rows(prices)
        wb = self.weights * self.budgets
        j = self.n_products
        jac = np.empty((j, j))
        slope = 1.0 - self.eta
        cross = (alpha * wb[:, None]).T @ alpha  # sum_i wb a_il a_ij -> [l, j]
        for l in range(j):
            for k in range(j):
                if l == k:
                    s1 = float(np.sum(wb * alpha[:, l] * (1.0 - alpha[:, l])))
                    s0 = float(np.sum(wb * alpha[:, l]))
                    jac[l, l] = (slope * s1 - s0) / prices[l] ** 2
                else:
                    jac[l, k] = -slope * cross[l, k] / (prices[l] * prices[k])
        return jac

    def economy(self, prices: np.ndarray, ids: Sequence[str]) -> CESEconomy:
        """The observable economy at given prices (utility indices, not primitives)."""
        consumers = []
        u = np.log(self.betas) + (1.0 - self.eta) * np.log(prices)[None, :]
        for i in range(self.betas.shape[0]):
            utils = {ids[k]: float(u[i, k]) for k in range(self.n_products) if self.consider[i, k]}
            consumers.append(Consumer(f"c{i}", float(self.budgets[i]), utils, float(self.weights[i])))
        return CESEconomy(tuple(consumers), self.eta)

    def outside_revenue_slope(self, prices: np.ndarray) -> np.ndarray:
        """dR_outside/dp_j per product j (spending diverted to the outside)."""
        alpha = self.share_rows(prices)
        wb = self.weights * self.budgets
        a0 = 1.0 - alpha.sum(axis=1)
        slope = 1.0 - self.eta
        return np.array([
            -slope / prices[k] * float(np.sum(wb * a0 * alpha[:, k]))
            for k in range(self.n_products)
        ])


class LogitGroundTruth:
    """Workhorse logit: utility delta_j - a p_j, outside 0, unit consumer mass."""

    model = "logit"

    def __init__(self, delta, price_coef, mass=1.0):
        self.delta = np.asarray(delta, dtype=float)
        self.price_coef = float(price_coef)
        self.mass = float(mass)
        if self.price_coef <= 0:
            raise InputValidationError("price coefficient must be positive")

    @property
    def n_products(self) -> int:
        return self.delta.shape[0]

    def share_rows(self, prices: np.ndarray) -> np.ndarray:
        v = self.delta - self.price_coef * prices
        m = max(float(np.max(v)), 0.0)
        z = np.exp(v - m)
        return (z / (z.sum() + math.exp(-m)))[None, :]

    def quantities(self, prices: np.ndarray) -> np.ndarray:
        return self.mass * self.share_rows(prices)[0]

    def revenues(self, prices: np.ndarray) -> np.ndarray:
        return prices * self.quantities(prices)

    def quantity_jacobian(self, prices: np.ndarray) -> np.ndarray:
        s = self.share_rows(prices)[0]
        jac = self.mass * self.price_coef * np.outer(s, s)
        np.fill_diagonal(jac, -self.mass * self.price_coef * s * (1.0 - s))
        return jac


# ---------------------------------------------------------------------------
# True Bertrand equilibria
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Equilibrium:
    """Solved price vector plus the dimensionless pricing-condition residual."""

    prices: np.ndarray
    margins: np.ndarray
    shares: np.ndarray        # inside shares summed over consumers' budgets (revenue weights)
    residual: float
    iterations: int


def _foc_objects(demand, prices: np.ndarray):
    """(eps_jj vector, quantity diversion matrix D[j, l], quantities)."""
    q = demand.quantities(prices)
    jac = demand.quantity_jacobian(prices)
    with np.errstate(divide="ignore", invalid="ignore"):
        eps = np.diag(jac) * prices / q
        div = -jac.T / np.diag(jac)[:, None]  # D[j, l] = -dq_l/dp_j / dq_j/dp_j
    np.fill_diagonal(div, -1.0)
    return eps, div, q


def _margin_residual(demand, prices, costs, groups) -> np.ndarray:
    """Pricing conditions normalized to be quasilinear in margins."""
    eps, div, _ = _foc_objects(demand, prices)
    m = (prices - costs) / prices
    res = -1.0 / eps - m
    for grp in groups:
        for j in grp:
            res[j] += sum(
                m[l] * div[j, l] * prices[l] / prices[j] for l in grp if l != j
            )
    return res


def _implied_margins(demand, prices, groups) -> np.ndarray:
    """Solve the within-firm linear systems for margins at fixed prices."""
    eps, div, _ = _foc_objects(demand, prices)
    n = len(prices)
    m = np.empty(n)
    for grp in groups:
        k = len(grp)
        a = np.eye(k)
        b = np.empty(k)
        for r, j in enumerate(grp):
            b[r] = -1.0 / eps[j]
            for c_, l in enumerate(grp):
                if l != j:
                    a[r, c_] = -div[j, l] * prices[l] / prices[j]
        m[list(grp)] = np.linalg.solve(a, b)
    return m


def solve_bertrand(
    demand,
    costs: np.ndarray,
    ownership: Sequence[int],
    p0: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iterations: int = 400,
) -> Equilibrium:
    """Bertrand-Nash prices by damped margin fixed point plus Newton polish.

    ``ownership`` assigns a firm index to each product. Raises
    ConvergenceError when the residual cannot be brought under ``tol``.
    """
    costs = np.asarray(costs, dtype=float)
    groups = [
        [j for j, f in enumerate(ownership) if f == firm]
        for firm in dict.fromkeys(ownership)
    ]
    p = np.array(costs * 1.5 if p0 is None else p0, dtype=float)
    its = 0
    # damped fixed point to get in the basin; per-step log-price moves are
    # clamped so a bad margin solve cannot fling prices into the underflow
    # region of the share function
    for _ in range(max_iterations):
        its += 1
        m = _implied_margins(demand, p, groups)
        if not np.all(np.isfinite(m)):
            raise ConvergenceError("margin iteration left the elastic region")
        m = np.clip(m, 1e-6, 1.0 - 1e-6)
        target = costs / (1.0 - m)
        move = np.clip(0.5 * (np.log(target) - np.log(p)), -0.25, 0.25)
        p_new = np.exp(np.log(p) + move)
        if np.max(np.abs(p_new - p) / p) < 1e-9:
            p = p_new
            break
        p = p_new
    # Newton polish on the margin-form conditions in log prices
    res = _margin_residual(demand, p, costs, groups)
    norm = float(np.max(np.abs(res)))
    for _ in range(60):
        if norm < tol:
            break
        its += 1
        n = len(p)
        jac = np.empty((n, n))
        h = 1e-7
        for k in range(n):
            lp, lm = np.log(p).copy(), np.log(p).copy()
            lp[k] += h
            lm[k] -= h
            rp = _margin_residual(demand, np.exp(lp), costs, groups)
            rm = _margin_residual(demand, np.exp(lm), costs, groups)
            jac[:, k] = (rp - rm) / (2 * h)
        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError:
            raise ConvergenceError("equilibrium Jacobian singular")
        t = 1.0
        improved = False
        for _ in range(30):
            cand = np.exp(np.log(p) + np.clip(t * step, -0.5, 0.5))
            rc = _margin_residual(demand, cand, costs, groups)
            nc = float(np.max(np.abs(rc)))
            if nc < norm:
                p, res, norm, improved = cand, rc, nc, True
                break
            t *= 0.5
        if not improved:
            break
    if not norm < tol:  # NaN-safe
        raise ConvergenceError(f"Bertrand solver stalled at residual {norm:.3e}")
    margins = (p - costs) / p
    shares = demand.revenues(p)
    return Equilibrium(p, margins, shares, norm, its)


# ---------------------------------------------------------------------------
# Synthetic primitives and observation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticPrimitives:
    """Full ground-truth market: demand model with parameters, costs,
    single-product ownership, and the pre-merger equilibrium prices."""

    ids: tuple[str, ...]
    demand: object
    costs: np.ndarray
    ownership: tuple[int, ...]
    prices: np.ndarray          # pre-merger equilibrium

    @property
    def model(self) -> str:
        return self.demand.model


def observe(primitives: SyntheticPrimitives, prices: np.ndarray | None = None):
    """Project ground truth down to the observable slice: a Market (revenues,
    margins, ownership) and the revenue diversion matrix at ``prices``."""
    p = primitives.prices if prices is None else prices
    demand, ids = primitives.demand, primitives.ids
    rev = demand.revenues(p)
    margins = (p - primitives.costs) / p
    products = tuple(
        Product(ids[j], f"f{primitives.ownership[j]}", float(rev[j]), float(margins[j]))
        for j in range(len(ids))
    )
    market = Market(products)
    jac = demand.quantity_jacobian(p)
    n = len(ids)
    dr_dp = jac.T * p[None, :]          # [j, l] = dq_l/dp_j * p_l
    dr_dp[np.arange(n), np.arange(n)] += demand.quantities(p)
    values = -dr_dp / np.diag(dr_dp)[:, None]
    np.fill_diagonal(values, -1.0)
    outside = None
    if hasattr(demand, "outside_revenue_slope"):
        outside = -demand.outside_revenue_slope(p) / np.diag(dr_dp)
    diversion = DiversionMatrix(tuple(ids), values, outside)
    return market, diversion


def solve_pre_merger_equilibrium(primitives: SyntheticPrimitives, **kw) -> Equilibrium:
    """Re-solve the pre-merger equilibrium from a cold start."""
    return solve_bertrand(primitives.demand, primitives.costs, primitives.ownership, **kw)


def solve_post_merger_equilibrium(
    primitives: SyntheticPrimitives,
    merging_firms: tuple[int, int],
    efficiencies: Mapping[int, float] | None = None,
) -> tuple[Equilibrium, np.ndarray]:
    """True post-merger equilibrium and the percentage price changes.

    ``efficiencies`` maps product index -> percentage marginal-cost change.
    """
    a, b = merging_firms
    post_own = tuple(a if f == b else f for f in primitives.ownership)
    costs = primitives.costs.copy()
    for j, cdd in (efficiencies or {}).items():
        costs[j] *= 1.0 + cdd
    eq = solve_bertrand(primitives.demand, costs, post_own, p0=primitives.prices)
    pdd = eq.prices / primitives.prices - 1.0
    return eq, pdd


# ---------------------------------------------------------------------------
# Random market generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HarnessConfig:
    """Experiment shape and parameter ranges; the seed is mandatory."""

    seed: int
    n_markets: int = 200
    model: str = "ces"
    n_products: tuple[int, int] = (2, 6)
    cost_range: tuple[float, float] = (0.5, 2.0)
    eta_range: tuple[float, float] = (3.0, 9.0)
    price_coef_range: tuple[float, float] = (0.5, 2.0)
    outside_share_range: tuple[float, float] = (0.1, 0.6)

    def __post_init__(self):
        if self.model not in ("ces", "logit"):
            raise InputValidationError(f"unknown demand model {self.model!r}")
        if self.n_products[0] < 2 or self.n_products[1] < self.n_products[0]:
            raise InputValidationError("n_products range must be non-degenerate with min >= 2")
        for name in ("cost_range", "eta_range", "price_coef_range", "outside_share_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise InputValidationError(f"{name} must be a non-degenerate range")


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based per-trial stream: identical no matter the schedule."""
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), trial]))


def random_primitives(config: HarnessConfig, trial: int) -> tuple[SyntheticPrimitives, tuple[int, int]]:
    """Draw one synthetic market in the elastic interior region.

    Target equilibrium shares are drawn first (outside mass inside the
    configured range) and the demand intercepts backed out of the
    single-product pricing conditions at log-uniform costs, so the drawn
    prices are exactly the pre-merger equilibrium.
    """
    rng = trial_rng(config.seed, trial)
    n = int(rng.integers(config.n_products[0], config.n_products[1] + 1))
    costs = np.exp(rng.uniform(np.log(config.cost_range[0]), np.log(config.cost_range[1]), n))
    s0 = rng.uniform(*config.outside_share_range)
    inside = (1.0 - s0) * rng.dirichlet(np.full(n, 2.0))
    ids = tuple(f"p{j}" for j in range(n))
    ownership = tuple(range(n))
    pair = tuple(sorted(rng.choice(n, size=2, replace=False).tolist()))

    if config.model == "ces":
        eta = rng.uniform(*config.eta_range)
        eps = (1.0 - eta) * (1.0 - inside) - 1.0
        margins = -1.0 / eps
        prices = costs / (1.0 - margins)
        u = np.log(inside / s0)
        betas = np.exp(u)[None, :] * prices[None, :] ** (eta - 1.0)
        demand = CESGroundTruth(betas, budgets=[1.0], eta=eta)
    else:
        a = rng.uniform(*config.price_coef_range)
        markup = 1.0 / (a * (1.0 - inside))
        prices = costs + markup
        delta = np.log(inside / s0) + a * prices
        demand = LogitGroundTruth(delta, a)
    return SyntheticPrimitives(ids, demand, costs, ownership, prices), pair


# ---------------------------------------------------------------------------
# Accuracy experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialRecord:
    """Screening prediction vs truth for one merging product in one trial."""

    trial_id: int
    model: str
    n_products: int
    product_id: str
    guppi: float
    predicted_pdd: float
    true_pdd: float
    cmcr: float


@dataclass(frozen=True)
class ExperimentResult:
    records: tuple[TrialRecord, ...]
    failures: tuple[int, ...]
    summary: dict

    def to_csv_rows(self) -> Iterable[tuple]:
        yield ("trial_id", "model", "n_products", "product_id",
               "guppi", "predicted_pdd", "true_pdd", "cmcr")
        for r in self.records:
            yield (r.trial_id, r.model, r.n_products, r.product_id,
                   repr(r.guppi), repr(r.predicted_pdd), repr(r.true_pdd), repr(r.cmcr))


def _run_trial(config: HarnessConfig, trial: int) -> list[TrialRecord]:
    primitives, pair = random_primitives(config, trial)
    eq = solve_pre_merger_equilibrium(primitives)
    market, diversion = observe(primitives, eq.prices)
    merger = MergerSpec(f"f{pair[0]}", f"f{pair[1]}")
    g = effects.guppi(market, diversion, merger)
    c = effects.cmcr(market, diversion, merger)
    _, pdd_true = solve_post_merger_equilibrium(primitives, pair)
    pos = {pid: j for j, pid in enumerate(primitives.ids)}
    out = []
    for pid, g_j in g.items():
        out.append(TrialRecord(
            trial_id=trial,
            model=primitives.model,
            n_products=len(primitives.ids),
            product_id=pid,
            guppi=g_j,
            predicted_pdd=g_j,  # identity pass-through
            true_pdd=float(pdd_true[pos[pid]]),
            cmcr=c.efficiencies[pid],
        ))
    return out


def _max_workers() -> int:
    env = os.environ.get("UPPKIT_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def run_accuracy_experiment(config: HarnessConfig) -> ExperimentResult:
    """Score GUPPI-based price-effect predictions against true equilibria on
    ``config.n_markets`` random markets. Deterministic given the seed; failed
    trials are dropped and logged in ``failures``."""
    records: list[TrialRecord] = []
    failures: list[int] = []

    def work(trial: int):
        try:
            return trial, _run_trial(config, trial)
        except ConvergenceError:
            return trial, None

    workers = _max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, range(config.n_markets)))
    else:
        results = [work(t) for t in range(config.n_markets)]
    for trial, recs in sorted(results, key=lambda x: x[0]):
        if recs is None:
            failures.append(trial)
        else:
            records.extend(recs)

    preds = np.array([r.predicted_pdd for r in records])
    trues = np.array([r.true_pdd for r in records])
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(preds - trues) / np.abs(trues)
    summary = {
        "model": config.model,
        "seed": config.seed,
        "n_markets": config.n_markets,
        "n_failed": len(failures),
        "n_records": len(records),
        "share_conservative": float(np.mean(trues >= preds)) if len(records) else float("nan"),
        "median_relative_error": float(np.median(rel[np.isfinite(rel)])) if len(records) else float("nan"),
    }
    return ExperimentResult(tuple(records), tuple(failures), summary)


# ---------------------------------------------------------------------------
# Synthetic spatial geography (for the nested-CES fitter)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpatialConfig:
    seed: int
    n_tracts: int = 50
    n_stores: int = 20
    mu: float = 0.46
    eta: float = 5.0
    radius: float = 10.0
    extent: float = 25.0           # square side, miles
    theta: tuple[float, ...] = (1.5, -0.3, 0.5, -0.8)  # 1, distance, log size, discount
    budget_range: tuple[float, float] = (50.0, 150.0)


@dataclass(frozen=True)
class SpatialFixture:
    """Ground-truth geography: economy at (theta*, mu*), the design matrix the
    fitter sees, and the model-implied revenues it must match. Loaded fixtures
    may omit the ground truth (economy/theta/mu are then None)."""

    design: np.ndarray             # (n_tracts, n_stores, k)
    mask: np.ndarray               # (n_tracts, n_stores) consideration
    budgets: np.ndarray
    weights: np.ndarray
    revenues: dict[str, float]
    store_ids: tuple[str, ...]
    nests: dict[str, str]
    economy: NestedCESEconomy | None = None
    theta: np.ndarray | None = None
    mu: float | None = None


def generate_spatial_fixture(config: SpatialConfig) -> SpatialFixture:
    """Tracts and stores on a plane; consideration within ``radius`` miles;
    utilities linear in [1, distance, log size, discount flag]."""
    rng = trial_rng(config.seed, 0)
    tracts = rng.uniform(0.0, config.extent, size=(config.n_tracts, 2))
    stores = rng.uniform(0.0, config.extent, size=(config.n_stores, 2))
    sizes = rng.lognormal(mean=3.0, sigma=0.4, size=config.n_stores)
    discount = (rng.uniform(size=config.n_stores) < 0.35).astype(float)
    budgets = rng.uniform(*config.budget_range, size=config.n_tracts)
    dist = np.linalg.norm(tracts[:, None, :] - stores[None, :, :], axis=2)
    mask = dist <= config.radius

    k = len(config.theta)
    design = np.zeros((config.n_tracts, config.n_stores, k))
    design[:, :, 0] = 1.0
    design[:, :, 1] = dist
    design[:, :, 2] = np.log(sizes)[None, :]
    design[:, :, 3] = discount[None, :]

    theta = np.asarray(config.theta, dtype=float)
    store_ids = tuple(f"s{j}" for j in range(config.n_stores))
    nests = {store_ids[j]: ("discount" if discount[j] else "regular")
             for j in range(config.n_stores)}
    u = design @ theta
    consumers = []
    for i in range(config.n_tracts):
        utils = {store_ids[j]: float(u[i, j]) for j in range(config.n_stores) if mask[i, j]}
        consumers.append(Consumer(f"t{i}", float(budgets[i]), utils, 1.0))
    economy = NestedCESEconomy(tuple(consumers), config.eta, nests=nests, mu=config.mu)
    table = ces.nested_shares(economy)
    model_rev = ces.revenues(economy, table)
    revenues = {sid: model_rev.get(sid, 0.0) for sid in store_ids}
    return SpatialFixture(
        design=design,
        mask=mask,
        budgets=budgets,
        weights=np.ones(config.n_tracts),
        revenues=revenues,
        store_ids=store_ids,
        nests=nests,
        economy=economy,
        theta=theta,
        mu=config.mu,
    )


def spatial_fixture_to_dict(fx: SpatialFixture) -> dict:
    doc = {
        "store_ids": list(fx.store_ids),
        "nests": dict(fx.nests),
        "design": fx.design.tolist(),
        "mask": fx.mask.astype(int).tolist(),
        "budgets": fx.budgets.tolist(),
        "weights": fx.weights.tolist(),
        "revenues": dict(fx.revenues),
    }
    if fx.theta is not None:
        doc["truth"] = {"theta": fx.theta.tolist(), "mu": fx.mu}
    return doc


def load_spatial_fixture(path) -> SpatialFixture:
    """Read a geography fixture (the fitter's input schema) from JSON."""
    import json

    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputValidationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputValidationError(f"{path} is not valid JSON: {exc}") from exc
    for key in ("store_ids", "nests", "design", "budgets", "revenues"):
        if key not in doc:
            raise InputValidationError(f"{path}: missing field {key!r}")
    design = np.asarray(doc["design"], dtype=float)
    if design.ndim != 3:
        raise InputValidationError(f"{path}: design must be 3-dimensional")
    n_t, n_s, _ = design.shape
    mask = (np.asarray(doc["mask"], dtype=float).astype(bool)
            if "mask" in doc else np.ones((n_t, n_s), dtype=bool))
    weights = (np.asarray(doc["weights"], dtype=float)
               if "weights" in doc else np.ones(n_t))
    truth = doc.get("truth") or {}
    theta = np.asarray(truth["theta"], dtype=float) if "theta" in truth else None
    return SpatialFixture(
        design=design,
        mask=mask,
        budgets=np.asarray(doc["budgets"], dtype=float),
        weights=weights,
        revenues={str(k): float(v) for k, v in doc["revenues"].items()},
        store_ids=tuple(str(s) for s in doc["store_ids"]),
        nests={str(k): str(v) for k, v in doc["nests"].items()},
        theta=theta,
        mu=float(truth["mu"]) if "mu" in truth else None,
    )
