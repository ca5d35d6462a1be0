"""Algebra connecting revenue-based and quantity-based substitution measures.

The pivotal identity is

    (1 + 1/eps_jj) * D_{j->k}^R = D_{j->k} * p_k / p_j        (j != k)

which lets quantity diversion ratios (and the relative prices attached to
them) be substituted out of pricing equations whenever the own-price
elasticity of demand is known. Own-price elasticities of revenue and
quantity differ by exactly one: eps_jj^R = eps_jj + 1.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InputValidationError


@dataclass(frozen=True)
class ElasticityBundle:
    """Own/cross price elasticities of quantity and revenue for a product pair,
    plus both diversion ratios implied by the same demand derivatives."""

    own_q: float        # eps_jj
    own_r: float        # eps_jj^R = eps_jj + 1
    cross_q: float      # eps_kj
    cross_r: float      # eps_kj^R = eps_kj for j != k
    quantity_diversion: float   # D_{j->k}
    revenue_diversion: float    # D_{j->k}^R


def _require_elastic(eps_jj: float) -> None:
    if not eps_jj < -1.0:
        raise InputValidationError(
            f"own-price elasticity {eps_jj} >= -1: inelastic pricing violates Bertrand FOC"
        )


def revenue_to_quantity_term(diversion_r: float, eps_jj: float) -> float:
    """Convert D_{j->k}^R into the price-weighted quantity term D_{j->k}*p_k/p_j.

    Returns ``(1 + 1/eps_jj) * diversion_r``. As eps_jj -> -inf the adjustment
    factor tends to 1 and the two measures coincide.
    """
    if diversion_r < 0:
        raise InputValidationError(f"revenue diversion ratio {diversion_r} must be >= 0")
    _require_elastic(eps_jj)
    return (1.0 + 1.0 / eps_jj) * diversion_r


def quantity_to_revenue_diversion(
    diversion_q: float, p_j: float, p_k: float, eps_jj: float
) -> float:
    """Convert a quantity diversion ratio (with prices) into D_{j->k}^R.

    Inverse of :func:`revenue_to_quantity_term`; only meaningful where prices
    are actually observed, e.g. on synthetic ground-truth markets.
    """
    if p_j <= 0 or p_k <= 0:
        raise InputValidationError("prices must be positive")
    _require_elastic(eps_jj)
    return diversion_q * (p_k / p_j) / (1.0 + 1.0 / eps_jj)


def elasticity_bundle_from_derivatives(
    q_j: float,
    q_k: float,
    p_j: float,
    p_k: float,
    dqj_dpj: float,
    dqk_dpj: float,
) -> ElasticityBundle:
    """Assemble all elasticity/diversion objects from raw demand derivatives.

    eps_jj = dq_j/dp_j * p_j/q_j, eps_kj = dq_k/dp_j * p_j/q_k,
    D_{j->k} = -dq_k/dp_j / (dq_j/dp_j), and the revenue-side measures follow
    from eps^R_jj = eps_jj + 1 and D^R = -(eps^R_kj/eps^R_jj) * R_k/R_j.
    """
    if q_j <= 0 or q_k <= 0 or p_j <= 0 or p_k <= 0:
        raise InputValidationError("quantities and prices must be positive")
    if dqj_dpj >= 0:
        raise InputValidationError("own-price demand derivative must be negative")
    own_q = dqj_dpj * p_j / q_j
    cross_q = dqk_dpj * p_j / q_k
    own_r = own_q + 1.0
    cross_r = cross_q
    if own_r == 0:
        raise InputValidationError("own-price revenue elasticity is zero (unit-elastic demand)")
    d_q = -dqk_dpj / dqj_dpj
    r_j, r_k = p_j * q_j, p_k * q_k
    d_r = -(cross_r / own_r) * (r_k / r_j)
    return ElasticityBundle(own_q, own_r, cross_q, cross_r, d_q, d_r)
