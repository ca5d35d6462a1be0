"""CES and nested-CES expenditure-share demand.

Consumers allocate budgets across consideration sets (always containing the
outside option) according to softmax expenditure shares in latent utility
indices. The aggregate objects (revenue diversion ratios, own-price revenue
elasticities, compensating variation) are weighted sums over consumers and
reduce to simple share formulas in the single-consumer case:

    D_{j->k}^R = alpha_k / (1 - alpha_j),
    eps_jj^R   = (1 - eta)(1 - alpha_j).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import InputValidationError
from .market import OUTSIDE, DiversionMatrix

OUTSIDE_NEST = "__outside__"


@dataclass(frozen=True)
class Consumer:
    """One consumer (or consumer segment): budget, measure weight, and latent
    utility index per considered product. The outside option is always
    considered; its utility is conventionally 0."""

    id: str
    budget: float
    utilities: Mapping[str, float]
    weight: float = 1.0

    def __post_init__(self):
        u = dict(self.utilities)
        u.setdefault(OUTSIDE, 0.0)
        object.__setattr__(self, "utilities", u)

    @property
    def consideration(self) -> frozenset[str]:
        return frozenset(self.utilities)


def _product_order(consumers: Sequence[Consumer]) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for c in consumers:
        for pid in c.utilities:
            if pid != OUTSIDE:
                seen.setdefault(pid, None)
    return tuple(seen) + (OUTSIDE,)


@dataclass(frozen=True)
class CESEconomy:
    """Consumers plus the substitution elasticity eta > 1."""

    consumers: tuple[Consumer, ...]
    eta: float

    def __post_init__(self):
        if not self.consumers:
            raise InputValidationError("economy has no consumers")
        if not self.eta > 1.0:
            raise InputValidationError(f"eta must be > 1, got {self.eta}")
        for c in self.consumers:
            if not np.isfinite(c.budget) or c.budget < 0:
                raise InputValidationError(f"consumer {c.id}: budget {c.budget} must be >= 0")
            if not np.isfinite(c.weight) or c.weight < 0:
                raise InputValidationError(f"consumer {c.id}: weight {c.weight} must be >= 0")
        if not any(c.weight > 0 for c in self.consumers):
            raise InputValidationError("all consumer weights are zero")

    @cached_property
    def order(self) -> tuple[str, ...]:
        """Inside products in first-appearance order, then OUTSIDE last."""
        return _product_order(self.consumers)

    @cached_property
    def _dense(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(utilities with -inf off-consideration, weight*budget vector, mask)."""
        pos = {pid: k for k, pid in enumerate(self.order)}
        n, m = len(self.consumers), len(self.order)
        u = np.full((n, m), -np.inf)
        wb = np.empty(n)
        for i, c in enumerate(self.consumers):
            wb[i] = c.weight * c.budget
            for pid, val in c.utilities.items():
                u[i, pos[pid]] = val
        return u, wb, np.isfinite(u)


@dataclass(frozen=True)
class NestedCESEconomy(CESEconomy):
    """CES economy with a two-level nest structure and common nesting
    parameter mu in (0, 1]; the outside option is its own nest with mu = 1."""

    nests: Mapping[str, str] = field(default_factory=dict)
    mu: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 < self.mu <= 1.0:
            raise InputValidationError(f"mu must be in (0, 1], got {self.mu}")
        nests = dict(self.nests)
        nests[OUTSIDE] = OUTSIDE_NEST
        object.__setattr__(self, "nests", nests)
        for pid in self.order:
            if pid not in self.nests:
                raise InputValidationError(f"product {pid} has no nest label")


@dataclass(frozen=True)
class ShareTable:
    """Expenditure shares per consumer x product; rows sum to one over each
    consumer's consideration set, zeros elsewhere."""

    consumer_ids: tuple[str, ...]
    order: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_cpos", {cid: i for i, cid in enumerate(self.consumer_ids)})
        object.__setattr__(self, "_ppos", {pid: k for k, pid in enumerate(self.order)})

    def share(self, consumer_id: str, product_id: str) -> float:
        return float(self.values[self._cpos[consumer_id], self._ppos[product_id]])

    def consumer_shares(self, consumer_id: str) -> dict[str, float]:
        i = self._cpos[consumer_id]
        return {pid: float(self.values[i, k]) for k, pid in enumerate(self.order)
                if self.values[i, k] > 0.0}


def _softmax_rows(u: np.ndarray) -> np.ndarray:
    # max-subtraction keeps exp() in range for |u| up to ~700; -inf rows entries -> 0
    m = np.max(u, axis=1, keepdims=True)
    z = np.exp(u - m)
    z[~np.isfinite(u)] = 0.0
    return z / z.sum(axis=1, keepdims=True)


def shares(economy: CESEconomy) -> ShareTable:
    """Softmax expenditure shares per consumer over their consideration set."""
    u, _, _ = economy._dense
    return ShareTable(tuple(c.id for c in economy.consumers), economy.order, _softmax_rows(u))


def _nested_share_rows(
    u: np.ndarray, nest_cols: Mapping[str, Sequence[int]], nest_mus: Mapping[str, float]
) -> np.ndarray:
    """Two-level share kernel on a dense utility block (-inf = not considered).

    Within nest b: softmax of u/mu_b over that consumer's members; nest chosen
    by softmax of mu_b * I_b where I_b is the nest's inclusive value.
    """
    n = u.shape[0]
    alpha = np.zeros_like(u)
    names = list(nest_cols)
    nest_logits = np.full((n, len(names)), -np.inf)
    within = np.zeros_like(u)
    for bi, b in enumerate(names):
        cols = list(nest_cols[b])
        ub = u[:, cols] / nest_mus[b]
        present = np.any(np.isfinite(ub), axis=1)
        iv = np.full(n, -np.inf)
        if np.any(present):
            iv[present] = logsumexp(ub[present], axis=1)
        nest_logits[:, bi] = np.where(present, nest_mus[b] * iv, -np.inf)
        with np.errstate(invalid="ignore"):
            w = np.exp(ub - iv[:, None])
        w[~np.isfinite(ub)] = 0.0
        w[~present] = 0.0
        within[:, cols] = w
    nest_share = _softmax_rows(nest_logits)
    for bi, b in enumerate(names):
        cols = list(nest_cols[b])
        alpha[:, cols] = within[:, cols] * nest_share[:, [bi]]
    return alpha


def nested_shares(economy: NestedCESEconomy) -> ShareTable:
    """Two-level shares: within-nest softmax of u/mu, nest chosen by softmax of
    mu times the nest's inclusive value. Collapses to :func:`shares` at mu = 1."""
    u, _, mask = economy._dense
    labels = [economy.nests[pid] for pid in economy.order]
    nest_names = list(dict.fromkeys(labels))
    cols = {b: [k for k, lab in enumerate(labels) if lab == b] for b in nest_names}
    mus = {b: (1.0 if b == OUTSIDE_NEST else economy.mu) for b in nest_names}
    alpha = _nested_share_rows(u, cols, mus)
    alpha[~mask] = 0.0
    return ShareTable(tuple(c.id for c in economy.consumers), economy.order, alpha)


def invert_shares(table: ShareTable) -> dict[str, dict[str, float]]:
    """Recover utility indices from interior shares: u_ij = log a_ij - log a_i,OUTSIDE,
    so the outside option is normalized to zero. Requires every considered
    share (and in particular the outside share) to be strictly positive."""
    out: dict[str, dict[str, float]] = {}
    k0 = table.order.index(OUTSIDE)
    for i, cid in enumerate(table.consumer_ids):
        row = table.values[i]
        if row[k0] <= 0.0:
            raise InputValidationError(
                f"consumer {cid}: inversion requires interior shares (outside share is 0)"
            )
        considered = [k for k in range(len(table.order)) if row[k] > 0.0]
        out[cid] = {table.order[k]: float(np.log(row[k]) - np.log(row[k0])) for k in considered}
    return out


def economy_from_shares(
    share_map: Mapping[str, Mapping[str, float]],
    budgets: Mapping[str, float],
    eta: float,
    weights: Mapping[str, float] | None = None,
) -> CESEconomy:
    """Build an economy from observed expenditure shares by softmax inversion."""
    consumers = []
    for cid, sh in share_map.items():
        if OUTSIDE not in sh:
            raise InputValidationError(f"consumer {cid}: shares must include {OUTSIDE}")
        total = sum(sh.values())
        if abs(total - 1.0) > 1e-6:
            raise InputValidationError(f"consumer {cid}: shares sum to {total:.8f}, not 1")
        a0 = sh[OUTSIDE]
        if a0 <= 0.0 or any(v <= 0.0 for v in sh.values()):
            raise InputValidationError(f"consumer {cid}: inversion requires interior shares")
        utils = {pid: float(np.log(v) - np.log(a0)) for pid, v in sh.items()}
        w = 1.0 if weights is None else float(weights.get(cid, 1.0))
        consumers.append(Consumer(cid, float(budgets[cid]), utils, w))
    return CESEconomy(tuple(consumers), eta)


# ---------------------------------------------------------------------------
# Aggregate demand objects
# ---------------------------------------------------------------------------

def revenues(economy: CESEconomy, table: ShareTable | None = None) -> dict[str, float]:
    """Model revenue per product: R_j = sum_i weight_i * alpha_ij * B_i."""
    table = shares(economy) if table is None else table
    _, wb, _ = economy._dense
    r = wb @ table.values
    return {pid: float(r[k]) for k, pid in enumerate(economy.order)}


def aggregate_shares(economy: CESEconomy, table: ShareTable | None = None) -> dict[str, float]:
    """Expenditure-weighted market shares R_j / total budget, incl. OUTSIDE."""
    table = shares(economy) if table is None else table
    _, wb, _ = economy._dense
    r = wb @ table.values
    return {pid: float(r[k] / wb.sum()) for k, pid in enumerate(economy.order)}


def _diversion_from_share_values(
    alpha: np.ndarray, wb: np.ndarray, mask: np.ndarray, order: Sequence[str]
) -> DiversionMatrix:
    """Revenue diversion computed from a dense share block.

    Row j: numerator sum_i wb_i a_ij a_ik over consumers considering both j and
    k, denominator sum_i wb_i a_ij (1 - a_ij) over shoppers of j; the common
    per-consumer slope factor cancels between the two.
    """
    n_inside = len(order) - 1  # OUTSIDE is last
    values = -np.eye(n_inside)
    outside = np.zeros(n_inside)
    undefined: list[str] = []
    for j in range(n_inside):
        shoppers = mask[:, j]
        den = float(np.sum(wb[shoppers] * alpha[shoppers, j] * (1.0 - alpha[shoppers, j])))
        if not np.any(shoppers) or den <= 0.0:
            undefined.append(order[j])
            continue
        num = (wb[shoppers, None] * alpha[shoppers, j:j + 1] * alpha[shoppers, :]).sum(axis=0)
        row = num / den
        values[j, :n_inside] = row[:n_inside]
        values[j, j] = -1.0
        outside[j] = row[n_inside]
    if undefined:
        raise InputValidationError(
            f"diversion undefined for products considered by no consumer: {undefined}"
        )
    return DiversionMatrix(tuple(order[:n_inside]), values, outside)


def revenue_diversion(economy: CESEconomy, table: ShareTable | None = None) -> DiversionMatrix:
    """Revenue diversion ratios implied by the economy's shares: the weighted
    sum over consumers of individual expenditure diversion a_ik/(1 - a_ij),
    with weights proportional to a_ij (1 - a_ij) B_i. Rows sum to one over all
    alternatives including the outside column (fixed-budget property)."""
    table = shares(economy) if table is None else table
    _, wb, mask = economy._dense
    return _diversion_from_share_values(table.values, wb, mask, economy.order)


def own_price_revenue_elasticity(
    economy: CESEconomy, table: ShareTable | None = None
) -> dict[str, float]:
    """Own-price elasticity of revenue per product:
    (1 - eta) * sum_i wbar_ij (1 - a_ij), shopper-weighted by a_ij B_i."""
    table = shares(economy) if table is None else table
    _, wb, mask = economy._dense
    alpha = table.values
    out: dict[str, float] = {}
    for k, pid in enumerate(economy.order):
        if pid == OUTSIDE:
            continue
        shoppers = mask[:, k]
        den = float(np.sum(wb[shoppers] * alpha[shoppers, k]))
        if den <= 0.0:
            out[pid] = 0.0
            continue
        num = float(np.sum(wb[shoppers] * alpha[shoppers, k] * (1.0 - alpha[shoppers, k])))
        out[pid] = (1.0 - economy.eta) * num / den
    return out


def own_price_elasticity_of_demand(
    economy: CESEconomy, table: ShareTable | None = None
) -> dict[str, float]:
    """Quantity-side own-price elasticities, eps_jj = eps_jj^R - 1."""
    return {pid: v - 1.0 for pid, v in own_price_revenue_elasticity(economy, table).items()}


@dataclass(frozen=True)
class EtaIdentification:
    """Elasticity-of-substitution estimate with over-identification diagnostics."""

    per_product: dict[str, float]
    eta: float
    spread: float
    inconsistent: bool


def identify_eta(
    share_map: Mapping[str, float],
    eps: Mapping[str, float],
    spread_warning: float = 1.0,
) -> EtaIdentification:
    """Back out eta per product from eta = 1 - (1 + eps_jj)/(1 - alpha_j) and
    average. ``share_map`` holds aggregate expenditure shares; products in
    ``eps`` must appear in it. A spread above ``spread_warning`` sets the
    ``inconsistent`` flag."""
    per: dict[str, float] = {}
    for pid, e in eps.items():
        a = share_map[pid]
        if a >= 1.0:
            raise InputValidationError(f"product {pid}: share {a} must be < 1 to identify eta")
        per[pid] = 1.0 - (1.0 + e) / (1.0 - a)
    vals = list(per.values())
    spread = max(vals) - min(vals) if len(vals) > 1 else 0.0
    return EtaIdentification(per, float(np.mean(vals)), spread, spread > spread_warning)


def second_choice_diversion(economy: CESEconomy, removed: str) -> dict[str, float]:
    """Revenue diversion from removing one product from all consideration sets:
    each surviving alternative's revenue gain divided by the removed product's
    lost revenue. Under CES this equals the marginal (price-based) diversion."""
    if removed == OUTSIDE:
        raise InputValidationError("cannot remove the outside option")
    k = economy.order.index(removed) if removed in economy.order else -1
    u, wb, mask = economy._dense
    if k < 0 or not np.any(mask[:, k]):
        raise InputValidationError(f"product {removed!r} is in no consideration set")
    pre = _softmax_rows(u)
    u_post = u.copy()
    u_post[:, k] = -np.inf
    post = _softmax_rows(u_post)
    loss = float(np.sum(wb * pre[:, k]))
    gains = wb @ (post - pre)
    return {
        pid: float(gains[q] / loss)
        for q, pid in enumerate(economy.order)
        if pid != removed
    }


@dataclass(frozen=True)
class CompensatingVariation:
    """Exact CES compensation for a vector of percentage price changes."""

    per_consumer: dict[str, float]
    total: float


def compensating_variation(
    economy: CESEconomy, price_changes: Mapping[str, float]
) -> CompensatingVariation:
    """Budget adjustment that restores each consumer's pre-change utility:

        CV_i = B_i * (1 - (sum_k exp u0_ik / sum_k exp u1_ik)^(1/(1-eta))),

    with u1_ij = u0_ij + (1 - eta) log(1 + pdd_j) and the outside option
    unaffected. Positive for price increases."""
    eta = economy.eta
    u0, _, mask = economy._dense
    bump = np.zeros(len(economy.order))
    for pid, pdd in price_changes.items():
        if pid == OUTSIDE:
            if pdd != 0.0:
                raise InputValidationError("outside option price change must be 0")
            continue
        if pdd <= -1.0:
            raise InputValidationError(f"product {pid}: price change {pdd} <= -1")
        bump[economy.order.index(pid)] = (1.0 - eta) * np.log1p(pdd)
    u1 = u0 + bump[None, :]
    u1[~mask] = -np.inf
    log_s0 = logsumexp(u0, axis=1)
    log_s1 = logsumexp(u1, axis=1)
    ratio = np.exp((log_s0 - log_s1) / (1.0 - eta))
    per = {}
    total = 0.0
    for i, c in enumerate(economy.consumers):
        cv = float(c.budget * (1.0 - ratio[i]))
        per[c.id] = cv
        total += c.weight * cv
    return CompensatingVariation(per, total)


# ---------------------------------------------------------------------------
# Economy file format
# ---------------------------------------------------------------------------

def economy_from_dict(doc: Mapping, where: str = "economy") -> CESEconomy:
    """Parse the economy JSON document. Consumers give either ``shares`` or
    ``utilities`` (mutually exclusive); an optional ``nests`` map plus ``mu``
    upgrades the result to a :class:`NestedCESEconomy`."""
    if "eta" not in doc:
        raise InputValidationError(f"{where}: missing field 'eta'")
    eta = float(doc["eta"])
    rows = doc.get("consumers")
    if not isinstance(rows, list) or not rows:
        raise InputValidationError(f"{where}: no consumers")
    consumers = []
    for idx, rec in enumerate(rows):
        w = f"{where}: consumers[{idx}]"
        cid = str(rec.get("id", idx))
        budget = float(rec.get("budget", 0.0))
        weight = float(rec.get("weight", 1.0))
        has_shares, has_utils = "shares" in rec, "utilities" in rec
        if has_shares == has_utils:
            raise InputValidationError(f"{w}: give exactly one of 'shares' or 'utilities'")
        if has_utils:
            utils = {str(k): float(v) for k, v in rec["utilities"].items()}
            consumers.append(Consumer(cid, budget, utils, weight))
        else:
            sh = {str(k): float(v) for k, v in rec["shares"].items()}
            econ = economy_from_shares({cid: sh}, {cid: budget}, eta=max(eta, 1.0 + 1e-9))
            consumers.append(Consumer(cid, budget, econ.consumers[0].utilities, weight))
    if "nests" in doc and doc["nests"]:
        nests = {str(k): str(v) for k, v in doc["nests"].items()}
        return NestedCESEconomy(tuple(consumers), eta, nests=nests, mu=float(doc.get("mu", 1.0)))
    return CESEconomy(tuple(consumers), eta)


def economy_to_dict(economy: CESEconomy) -> dict:
    doc: dict = {
        "eta": economy.eta,
        "consumers": [
            {"id": c.id, "budget": c.budget, "weight": c.weight,
             "utilities": dict(c.utilities)}
            for c in economy.consumers
        ],
    }
    if isinstance(economy, NestedCESEconomy):
        doc["mu"] = economy.mu
        doc["nests"] = {k: v for k, v in economy.nests.items() if k != OUTSIDE}
    return doc


def load_economy(path: str | Path) -> CESEconomy:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputValidationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputValidationError(f"{path} is not valid JSON: {exc}") from exc
    return economy_from_dict(doc, where=str(path))
