"""First-order merger screening statistics.

Everything here is computed from margins and revenue diversion ratios alone.
The own-price elasticity of demand is backed out of the Bertrand first-order
conditions,

    eps_jj = -(1 - sum_k m_k D_{j->k}^R) / (m_j - sum_k m_k D_{j->k}^R),

summing over the owner's other products, and then feeds the GUPPI, price
effect, welfare, and CMCR calculations. Naive comparators (treating revenue
diversion as quantity diversion with equal prices) are provided to quantify
the bias they introduce.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConvergenceError, InputValidationError
from .market import DiversionMatrix, Market, MergerSpec, OUTSIDE


@dataclass(frozen=True)
class PassThroughMatrix:
    """Sensitivity of log equilibrium prices to cost-like shocks, aligned to
    ``order`` (the merging firms' products in market order)."""

    order: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] != len(self.order):
            raise InputValidationError(f"pass-through matrix must be square over {len(self.order)} products")
        if not np.all(np.isfinite(v)):
            raise InputValidationError("pass-through matrix has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def identity(cls, order) -> "PassThroughMatrix":
        return cls(tuple(order), np.eye(len(order)))


def merging_products(market: Market, merger: MergerSpec) -> list[str]:
    """The merging firms' product ids in market order."""
    both = {merger.firm_a, merger.firm_b}
    return [p.id for p in market.products if p.firm in both and p.id != OUTSIDE]


def _own_margin_diversion_sum(market: Market, diversion: DiversionMatrix, j: str, owner: str) -> float:
    return sum(
        p.margin * diversion.get(j, p.id)
        for p in market.products_of(owner)
        if p.id != j and p.id != OUTSIDE
    )


def own_price_elasticity(
    market: Market, diversion: DiversionMatrix, firm: str
) -> dict[str, float]:
    """Own-price demand elasticities implied by one firm's margins and
    within-firm revenue diversion.

    For a single-product firm this reduces to the Lerner rule -1/m_j. Raises
    when the implied elasticity would not be in the elastic region (< -1), in
    which case the margins are not consistent with Bertrand pricing.
    """
    out: dict[str, float] = {}
    for p in market.products_of(firm):
        if p.id == OUTSIDE:
            continue
        s = _own_margin_diversion_sum(market, diversion, p.id, firm)
        denom = p.margin - s
        if denom <= 0:
            raise InputValidationError(
                f"product {p.id}: margins inconsistent with Bertrand FOC "
                f"(m_j - sum m_k D^R = {denom:.6g} <= 0)"
            )
        eps = -(1.0 - s) / denom
        if eps >= -1.0:
            raise InputValidationError(
                f"product {p.id}: margins inconsistent with Bertrand FOC "
                f"(implied elasticity {eps:.6g} >= -1)"
            )
        out[p.id] = eps
    return out


def own_price_elasticities(
    market: Market, diversion: DiversionMatrix, merger: MergerSpec
) -> dict[str, float]:
    """Elasticities for every product of both merging firms."""
    out = own_price_elasticity(market, diversion, merger.firm_a)
    out.update(own_price_elasticity(market, diversion, merger.firm_b))
    return out


def guppi(
    market: Market, diversion: DiversionMatrix, merger: MergerSpec
) -> dict[str, float]:
    """Gross upward pricing pressure index, as a fraction, per merging product.

    GUPPI_j = cdd_j (1 - m_j) + (1 + 1/eps_jj) * sum_{k in counterparty} m_k D_{j->k}^R,
    with the counterparty sum running over the other merging firm's products.
    """
    eps = own_price_elasticities(market, diversion, merger)
    out: dict[str, float] = {}
    for firm, other in ((merger.firm_a, merger.firm_b), (merger.firm_b, merger.firm_a)):
        for p in market.products_of(firm):
            if p.id == OUTSIDE:
                continue
            cross = _own_margin_diversion_sum(market, diversion, p.id, other)
            cdd = merger.efficiency(p.id)
            out[p.id] = cdd * (1.0 - p.margin) + (1.0 + 1.0 / eps[p.id]) * cross
    return {pid: out[pid] for pid in merging_products(market, merger)}


def naive_guppi(
    market: Market, diversion: DiversionMatrix, merger: MergerSpec
) -> dict[str, float]:
    """Biased screen that treats revenue diversion as quantity diversion with
    equal prices: sum_k m_k D_{j->k}^R, no elasticity adjustment, no
    efficiency credit. Always >= the correct zero-credit GUPPI."""
    out: dict[str, float] = {}
    for firm, other in ((merger.firm_a, merger.firm_b), (merger.firm_b, merger.firm_a)):
        for p in market.products_of(firm):
            if p.id == OUTSIDE:
                continue
            out[p.id] = _own_margin_diversion_sum(market, diversion, p.id, other)
    return {pid: out[pid] for pid in merging_products(market, merger)}


def price_effects(
    guppis: Mapping[str, float], passthrough: PassThroughMatrix | None = None
) -> dict[str, float]:
    """First-order percentage price changes: matrix-vector product of the
    pass-through matrix with the GUPPI vector. ``None`` means the identity
    approximation and returns the GUPPIs unchanged."""
    if passthrough is None:
        return dict(guppis)
    if set(passthrough.order) != set(guppis):
        raise InputValidationError(
            f"pass-through order {passthrough.order} does not match GUPPI keys {sorted(guppis)}"
        )
    g = np.array([guppis[pid] for pid in passthrough.order])
    pdd = passthrough.values @ g
    return dict(zip(passthrough.order, pdd.tolist()))


@dataclass(frozen=True)
class WelfareReport:
    """Per-product first-order welfare effects and their totals, in the
    market's currency units.

    ``cs`` is the rectangle -pdd*R; ``cs_mid`` the trapezoid refinement
    -pdd*R*(1 + eps*pdd/2); ``cs_upper`` the bound -pdd*R*(1 + eps*pdd).
    For price rises below the demand choke the ordering
    cs < cs_mid < cs_upper < 0 holds.
    """

    cs: dict[str, float]
    cs_mid: dict[str, float]
    cs_upper: dict[str, float]
    ps: dict[str, float]
    total_cs: float
    total_ps: float
    currency: str = "USD"


def welfare(
    market: Market,
    price_changes: Mapping[str, float],
    merger: MergerSpec,
    eps: Mapping[str, float],
) -> WelfareReport:
    """First-order consumer/producer surplus changes from percentage price rises.

    dCS_j = -pdd_j R_j and
    dPS_j = (pdd_j - cdd_j (1 - m_j)) R_j (1 + eps_jj pdd_j) + eps_jj R_j pdd_j m_j,
    summed product by product (cross-price effects ignored by construction).
    """
    cs: dict[str, float] = {}
    cs_mid: dict[str, float] = {}
    cs_upper: dict[str, float] = {}
    ps: dict[str, float] = {}
    for pid, pdd in price_changes.items():
        p = market.product(pid)
        if pdd <= -1.0:
            raise InputValidationError(f"product {pid}: price change {pdd} <= -1")
        e = eps[pid]
        if e >= -1.0:
            raise InputValidationError(f"product {pid}: elasticity {e} >= -1")
        r = p.revenue
        cdd = merger.efficiency(pid)
        cs[pid] = -pdd * r
        cs_mid[pid] = -pdd * r * (1.0 + 0.5 * e * pdd)
        cs_upper[pid] = -pdd * r * (1.0 + e * pdd)
        ps[pid] = (pdd - cdd * (1.0 - p.margin)) * r * (1.0 + e * pdd) + e * r * pdd * p.margin
    return WelfareReport(
        cs, cs_mid, cs_upper, ps,
        total_cs=sum(cs.values()), total_ps=sum(ps.values()),
        currency=market.currency,
    )


@dataclass(frozen=True)
class CmcrResult:
    """Compensating marginal cost reductions and the post-merger margins that
    generate them; ``condition_number`` diagnoses the linear system."""

    efficiencies: dict[str, float]   # cdd_j <= 0 per merging product
    post_margins: dict[str, float]
    condition_number: float


def cmcr(
    market: Market, diversion: DiversionMatrix, merger: MergerSpec
) -> CmcrResult:
    """Percentage cost reductions that exactly offset post-merger upward
    pricing pressure at unchanged prices.

    Solves the post-merger pricing conditions, linear in the post-merger
    margins m^1 with elasticities and diversion held at pre-merger values:

        m^1_j - (1 + 1/eps_jj) * sum_{l != j, l merging} D_{j->l}^R m^1_l = -1/eps_jj,

    then maps margins to cost changes via cdd_j = (m^0_j - m^1_j)/(1 - m^0_j).
    """
    order = merging_products(market, merger)
    eps = own_price_elasticities(market, diversion, merger)
    n = len(order)
    a = np.eye(n)
    b = np.empty(n)
    for i, j in enumerate(order):
        adj = 1.0 + 1.0 / eps[j]
        b[i] = -1.0 / eps[j]
        for l, k in enumerate(order):
            if k != j:
                a[i, l] = -adj * diversion.get(j, k)
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or cond > 1e12:
        raise ConvergenceError(f"CMCR system singular (condition number {cond:.3g})")
    m1 = np.linalg.solve(a, b)
    post = dict(zip(order, m1.tolist()))
    eff = {
        j: (market.product(j).margin - post[j]) / (1.0 - market.product(j).margin)
        for j in order
    }
    return CmcrResult(eff, post, cond)


def naive_cmcr(
    market: Market, diversion: DiversionMatrix, merger: MergerSpec
) -> dict[str, float]:
    """Biased two-firm cost-reduction comparator: the classic single-product
    formula with revenue diversion ratios substituted for quantity diversion
    and relative prices set to one,

        (m_j D_jk D_kj + m_k D_jk) / ((1 - m_j)(1 - D_jk D_kj)).

    Only defined when both merging firms are single-product.
    """
    prods_a = [p for p in market.products_of(merger.firm_a) if p.id != OUTSIDE]
    prods_b = [p for p in market.products_of(merger.firm_b) if p.id != OUTSIDE]
    if len(prods_a) != 1 or len(prods_b) != 1:
        raise InputValidationError(
            "naive CMCR is unsupported for multi-product merging firms"
        )
    out: dict[str, float] = {}
    for pj, pk in ((prods_a[0], prods_b[0]), (prods_b[0], prods_a[0])):
        d_jk = diversion.get(pj.id, pk.id)
        d_kj = diversion.get(pk.id, pj.id)
        out[pj.id] = (pj.margin * d_jk * d_kj + pk.margin * d_jk) / (
            (1.0 - pj.margin) * (1.0 - d_jk * d_kj)
        )
    return out


def compensating_efficiency(guppi_no_credit: float, margin: float) -> float:
    """Percentage marginal-cost reduction that zeroes out a product's upward
    pricing pressure: GUPPI (with no efficiency credit) divided by 1 - m."""
    if not 0.0 < margin < 1.0:
        raise InputValidationError(f"margin {margin} outside (0, 1)")
    return guppi_no_credit / (1.0 - margin)


@dataclass(frozen=True)
class EffectsReport:
    """Complete first-order screening output for one merger."""

    order: tuple[str, ...]
    firms: dict[str, str]
    margins: dict[str, float]
    revenues: dict[str, float]
    elasticities: dict[str, float]
    guppi: dict[str, float]
    naive_guppi: dict[str, float]
    price_changes: dict[str, float]
    welfare: WelfareReport
    cmcr: CmcrResult
    naive_cmcr: dict[str, float] | None
    compensating_efficiencies: dict[str, float]
    passthrough: PassThroughMatrix
    passthrough_mode: str
    caveats: tuple[str, ...] = ()
    currency: str = "USD"

    def to_dict(self) -> dict:
        doc = {
            "products": [
                {
                    "id": pid,
                    "firm": self.firms[pid],
                    "margin": self.margins[pid],
                    "revenue": self.revenues[pid],
                    "elasticity": self.elasticities[pid],
                    "guppi": self.guppi[pid],
                    "naive_guppi": self.naive_guppi[pid],
                    "price_change": self.price_changes[pid],
                    "cs": self.welfare.cs[pid],
                    "cs_mid": self.welfare.cs_mid[pid],
                    "cs_upper": self.welfare.cs_upper[pid],
                    "ps": self.welfare.ps[pid],
                    "cmcr": self.cmcr.efficiencies[pid],
                    "post_merger_margin": self.cmcr.post_margins[pid],
                    "naive_cmcr": None if self.naive_cmcr is None else self.naive_cmcr[pid],
                    "compensating_efficiency": self.compensating_efficiencies[pid],
                }
                for pid in self.order
            ],
            "totals": {"cs": self.welfare.total_cs, "ps": self.welfare.total_ps},
            "passthrough": {
                "mode": self.passthrough_mode,
                "order": list(self.passthrough.order),
                "matrix": self.passthrough.values.tolist(),
            },
            "currency": self.currency,
            "caveats": list(self.caveats),
        }
        return doc


def effects_report(
    market: Market,
    diversion: DiversionMatrix,
    merger: MergerSpec,
    passthrough: PassThroughMatrix | None = None,
) -> EffectsReport:
    """Run the full first-order toolkit for one merger.

    ``passthrough`` overrides the merger's configured mode when given. The "ces"
    mode only supports the two-single-product-firm case; anything larger
    falls back to the identity approximation with a caveat recorded on the
    report (a conservative default).
    """
    order = tuple(merging_products(market, merger))
    eps = own_price_elasticities(market, diversion, merger)
    g = guppi(market, diversion, merger)
    g_naive = naive_guppi(market, diversion, merger)
    g_no_credit = {
        pid: g[pid] - merger.efficiency(pid) * (1.0 - market.product(pid).margin)
        for pid in order
    }

    caveats: list[str] = []
    mode = merger.passthrough_mode
    if passthrough is not None:
        mode = "matrix"
    elif mode == "matrix":
        passthrough = PassThroughMatrix(order, merger.passthrough)
    elif mode == "ces":
        from .passthrough import passthrough_matrix_from_market

        try:
            passthrough = passthrough_matrix_from_market(market, diversion, merger)
        except InputValidationError as exc:
            caveats.append(f"ces passthrough unavailable ({exc}); using identity")
            mode = "identity"
            passthrough = PassThroughMatrix.identity(order)
    if mode == "identity":
        passthrough = PassThroughMatrix.identity(order)
        caveats.append("identity pass-through: price effects approximated by GUPPI")

    pdd = price_effects(g, passthrough)
    wf = welfare(market, pdd, merger, eps)
    c = cmcr(market, diversion, merger)
    if c.condition_number > 1e8:
        caveats.append(
            f"CMCR system ill-conditioned (condition number {c.condition_number:.3g})"
        )
    try:
        c_naive = naive_cmcr(market, diversion, merger)
    except InputValidationError:
        c_naive = None
    comp = {
        pid: compensating_efficiency(g_no_credit[pid], market.product(pid).margin)
        for pid in order
    }
    return EffectsReport(
        order=order,
        firms={pid: market.product(pid).firm for pid in order},
        margins={pid: market.product(pid).margin for pid in order},
        revenues={pid: market.product(pid).revenue for pid in order},
        elasticities={pid: eps[pid] for pid in order},
        guppi=g,
        naive_guppi=g_naive,
        price_changes=pdd,
        welfare=wf,
        cmcr=c,
        naive_cmcr=c_naive,
        compensating_efficiencies=comp,
        passthrough=passthrough,
        passthrough_mode=mode,
        caveats=tuple(caveats),
        currency=market.currency,
    )
