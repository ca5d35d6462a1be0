"""Observed-data market model: products, revenues, margins, ownership,
revenue diversion matrices, and merger specifications.

Markets here deliberately carry no prices or quantities; substitutability
enters only through the revenue diversion matrix.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InputValidationError

#: Reserved product id for the outside option. It never carries a margin or
#: revenue and only ever appears as a diversion *destination*.
OUTSIDE = "OUTSIDE"

PASSTHROUGH_MODES = ("identity", "ces", "matrix")


@dataclass(frozen=True)
class Product:
    """One product row: opaque id, owning firm, revenue R_j >= 0, margin m_j in (0,1)."""

    id: str
    firm: str
    revenue: float
    margin: float


@dataclass(frozen=True)
class Market:
    """A market observed through revenues and relative margins.

    Ownership is implied by each product's ``firm`` field; the firm set
    partitions the products. ``currency`` is an opaque unit tag carried
    through to reports (no conversion logic).
    """

    products: tuple[Product, ...]
    currency: str = "USD"

    def __post_init__(self):
        object.__setattr__(self, "_index", {p.id: i for i, p in enumerate(self.products)})

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self.products)

    @property
    def firms(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for p in self.products:
            seen.setdefault(p.firm, None)
        return tuple(seen)

    def product(self, product_id: str) -> Product:
        try:
            return self.products[self._index[product_id]]
        except KeyError:
            raise KeyError(f"unknown product {product_id!r}") from None

    def products_of(self, firm: str) -> tuple[Product, ...]:
        return tuple(p for p in self.products if p.firm == firm)

    def margins(self) -> dict[str, float]:
        return {p.id: p.margin for p in self.products}

    def revenues(self) -> dict[str, float]:
        return {p.id: p.revenue for p in self.products}


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DiversionMatrix:
    """Pairwise revenue diversion ratios D_{j->k} aligned to ``order``.

    The diagonal holds the self-pair convention of exactly -1; off-diagonal
    entries are non-negative fractions. ``outside`` optionally holds the
    destination-only column of diversion to the outside option.
    """

    order: tuple[str, ...]
    values: np.ndarray
    outside: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))
        if self.outside is not None:
            object.__setattr__(self, "outside", _readonly(self.outside))
        object.__setattr__(self, "_pos", {pid: i for i, pid in enumerate(self.order)})

    def get(self, src: str, dst: str) -> float:
        if dst == OUTSIDE:
            if self.outside is None:
                raise KeyError("diversion matrix has no outside column")
            return float(self.outside[self._pos[src]])
        return float(self.values[self._pos[src], self._pos[dst]])

    def aligned(self, order: Sequence[str]) -> "DiversionMatrix":
        """Return a copy with rows/columns permuted to ``order``."""
        idx = [self._pos[pid] for pid in order]
        out = None if self.outside is None else self.outside[idx]
        return DiversionMatrix(tuple(order), self.values[np.ix_(idx, idx)], out)


@dataclass(frozen=True)
class MergerSpec:
    """Two merging firms, their per-product efficiency ratios, and how GUPPIs
    translate to price effects.

    ``efficiencies`` maps product id -> percentage marginal-cost change in
    (-1, 0] (0 = no credit). ``passthrough`` is one of ``"identity"``,
    ``"ces"``, or an explicit square matrix aligned to the merging firms'
    products in market order.
    """

    firm_a: str
    firm_b: str
    efficiencies: Mapping[str, float] = field(default_factory=dict)
    passthrough: str | np.ndarray = "identity"

    def __post_init__(self):
        object.__setattr__(self, "efficiencies", dict(self.efficiencies))
        if not isinstance(self.passthrough, str):
            object.__setattr__(self, "passthrough", _readonly(self.passthrough))

    @property
    def passthrough_mode(self) -> str:
        return self.passthrough if isinstance(self.passthrough, str) else "matrix"

    def efficiency(self, product_id: str) -> float:
        return float(self.efficiencies.get(product_id, 0.0))


@dataclass(frozen=True)
class MarketBundle:
    """Everything a screening run needs: market, diversion, optional merger."""

    market: Market
    diversion: DiversionMatrix
    merger: MergerSpec | None = None


@dataclass(frozen=True)
class Violation:
    """One validation finding: the violated rule plus the offending subject."""

    rule: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"[{self.rule}] {self.subject}: {self.message}"


def validate(
    market: Market,
    diversion: DiversionMatrix | None = None,
    merger: MergerSpec | None = None,
) -> list[Violation]:
    """Check every data invariant and return the findings (empty means valid).

    Total by design: never raises on malformed-but-parseable input.
    """
    out: list[Violation] = []

    if not market.products:
        out.append(Violation("no-products", "market", "market has no products"))
    seen: set[str] = set()
    for row, p in enumerate(market.products):
        subject = p.id or f"products[{row}]"
        if not p.id:
            out.append(Violation("empty-id", subject, f"product at row {row} has empty id"))
        elif p.id in seen:
            out.append(Violation("duplicate-id", subject, "product id appears more than once"))
        seen.add(p.id)
        if p.id == OUTSIDE:
            continue  # reserved id carries no margin/revenue requirements
        if not p.firm:
            out.append(Violation("empty-firm", subject, "product has empty firm id"))
        if not np.isfinite(p.revenue) or p.revenue < 0:
            out.append(Violation("revenue-negative", subject, f"revenue {p.revenue} must be >= 0"))
        if not np.isfinite(p.margin) or not 0.0 < p.margin < 1.0:
            out.append(Violation("margin-range", subject, f"margin {p.margin} outside (0, 1)"))

    if diversion is not None:
        out.extend(_validate_diversion(market, diversion))
    if merger is not None:
        out.extend(_validate_merger(market, merger))
    return out


def _validate_diversion(market: Market, d: DiversionMatrix) -> list[Violation]:
    out: list[Violation] = []
    n = len(d.order)
    if d.values.shape != (n, n):
        out.append(Violation("diversion-shape", "diversion",
                             f"matrix shape {d.values.shape} does not match order length {n}"))
        return out
    inside = set(pid for pid in market.ids if pid != OUTSIDE)
    if set(d.order) != inside:
        missing = sorted(inside - set(d.order))
        extra = sorted(set(d.order) - inside)
        out.append(Violation("diversion-order", "diversion",
                             f"order mismatch with market products (missing {missing}, unknown {extra})"))
    for i, src in enumerate(d.order):
        if d.values[i, i] != -1.0:
            out.append(Violation("self-diversion", src,
                                 f"self-diversion must be -1, got {d.values[i, i]}"))
        for k, dst in enumerate(d.order):
            if i == k:
                continue
            v = d.values[i, k]
            if not np.isfinite(v) or v < 0:
                out.append(Violation("negative-diversion", f"{src}->{dst}",
                                     f"negative off-diagonal diversion {v}"))
            elif v > 1:
                out.append(Violation("diversion-above-one", f"{src}->{dst}",
                                     f"off-diagonal diversion {v} exceeds 1"))
    if d.outside is not None:
        if d.outside.shape != (n,):
            out.append(Violation("outside-shape", "diversion",
                                 f"outside column length {d.outside.shape} does not match order"))
        else:
            for i, src in enumerate(d.order):
                v = d.outside[i]
                if not np.isfinite(v) or v < 0:
                    out.append(Violation("negative-diversion", f"{src}->{OUTSIDE}",
                                         f"negative diversion to outside {v}"))
            row_sums = d.values.sum(axis=1) + 1.0 + d.outside  # drop the -1 diagonal
            for i, src in enumerate(d.order):
                if row_sums[i] > 1.0 + 1e-9:
                    out.append(Violation("row-sum", src,
                                         f"diversion row sums to {row_sums[i]:.6f} > 1 incl. outside"))
    return out


def _validate_merger(market: Market, m: MergerSpec) -> list[Violation]:
    out: list[Violation] = []
    firms = set(market.firms)
    if m.firm_a == m.firm_b:
        out.append(Violation("merger-same-firm", m.firm_a, "merging firms must differ"))
    for f in (m.firm_a, m.firm_b):
        if f not in firms:
            out.append(Violation("unknown-firm", f, "unknown firm reference in merger"))
    if len(firms) < 2:
        out.append(Violation("single-firm-market", "market",
                             "merger analysis requires at least two firms"))
    merging = {p.id for f in (m.firm_a, m.firm_b) for p in market.products_of(f)}
    for pid, c in m.efficiencies.items():
        if pid not in merging:
            out.append(Violation("efficiency-nonparty", pid,
                                 "efficiency given for a product outside the merging firms"))
        if not np.isfinite(c) or not -1.0 < c <= 0.0:
            out.append(Violation("efficiency-range", pid,
                                 f"efficiency {c} outside (-1, 0]"))
    if isinstance(m.passthrough, str):
        if m.passthrough not in ("identity", "ces"):
            out.append(Violation("passthrough-mode", "merger",
                                 f"unknown passthrough mode {m.passthrough!r}"))
    else:
        k = len(merging)
        if m.passthrough.shape != (k, k):
            out.append(Violation("passthrough-shape", "merger",
                                 f"explicit passthrough must be {k}x{k}, got {m.passthrough.shape}"))
        elif not np.all(np.isfinite(m.passthrough)):
            out.append(Violation("passthrough-finite", "merger",
                                 "explicit passthrough has non-finite entries"))
    return out


def _raise_if_invalid(bundle: MarketBundle) -> MarketBundle:
    findings = validate(bundle.market, bundle.diversion, bundle.merger)
    if findings:
        raise InputValidationError("; ".join(str(v) for v in findings))
    return bundle


# ---------------------------------------------------------------------------
# File ingestion
# ---------------------------------------------------------------------------

def load_market(path: str | Path, format: str | None = None) -> MarketBundle:
    """Load and validate a market (+ diversion, + optional merger) from disk.

    ``format`` is ``"json"`` or ``"csv"``; inferred from the path when None.
    For CSV, ``path`` is either a directory holding ``products.csv`` and
    ``diversion.csv`` or the path to ``products.csv`` itself.

    Raises
    ------
    InputValidationError
        Schema violations (naming the field and row), margins outside (0,1),
        self-diversion != -1, unknown firm references.
    """
    path = Path(path)
    if format is None:
        format = "csv" if (path.is_dir() or path.suffix.lower() == ".csv") else "json"
    if format == "json":
        bundle = _load_json(path)
    elif format == "csv":
        bundle = _load_csv(path)
    else:
        raise InputValidationError(f"unknown format {format!r} (expected json or csv)")
    return _raise_if_invalid(bundle)


def _num(obj, field_name: str, where: str) -> float:
    try:
        return float(obj)
    except (TypeError, ValueError):
        raise InputValidationError(f"{where}: field {field_name!r} is not a number: {obj!r}") from None


def _load_json(path: Path) -> MarketBundle:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputValidationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputValidationError(f"{path} is not valid JSON: {exc}") from exc
    return market_bundle_from_dict(doc, where=str(path))


def market_bundle_from_dict(doc: Mapping, where: str = "input") -> MarketBundle:
    """Build a MarketBundle from the canonical JSON document structure."""
    if not isinstance(doc, Mapping):
        raise InputValidationError(f"{where}: top-level JSON must be an object")
    rows = doc.get("products")
    if not isinstance(rows, list) or not rows:
        raise InputValidationError(f"{where}: no products")
    products = []
    for row, rec in enumerate(rows):
        w = f"{where}: products[{row}]"
        if not isinstance(rec, Mapping) or "id" not in rec:
            raise InputValidationError(f"{w}: missing field 'id'")
        pid = str(rec["id"])
        if pid == OUTSIDE:
            products.append(Product(OUTSIDE, str(rec.get("firm", "")),
                                    _num(rec.get("revenue", 0.0), "revenue", w),
                                    _num(rec.get("margin", 0.5), "margin", w)))
            continue
        for f in ("firm", "revenue", "margin"):
            if f not in rec:
                raise InputValidationError(f"{w}: missing field {f!r}")
        products.append(Product(pid, str(rec["firm"]),
                                _num(rec["revenue"], "revenue", w),
                                _num(rec["margin"], "margin", w)))
    market = Market(tuple(products), currency=str(doc.get("currency", "USD")))

    dv = doc.get("diversion")
    if not isinstance(dv, Mapping) or "order" not in dv or "matrix" not in dv:
        raise InputValidationError(f"{where}: diversion must provide 'order' and 'matrix'")
    order = [str(x) for x in dv["order"]]
    matrix = np.array(dv["matrix"], dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] != len(order):
        raise InputValidationError(f"{where}: diversion matrix must be square and match 'order'")
    outside = None
    if OUTSIDE in order:
        k = order.index(OUTSIDE)
        keep = [i for i in range(len(order)) if i != k]
        outside = matrix[keep, k]
        matrix = matrix[np.ix_(keep, keep)]
        order = [order[i] for i in keep]
    if "outside" in dv and dv["outside"] is not None:
        outside = np.array(dv["outside"], dtype=float)
    diversion = DiversionMatrix(tuple(order), matrix, outside)

    merger = None
    mg = doc.get("merger")
    if mg is not None:
        if not isinstance(mg, Mapping) or "firm_a" not in mg or "firm_b" not in mg:
            raise InputValidationError(f"{where}: merger must provide 'firm_a' and 'firm_b'")
        eff = {str(k): _num(v, f"efficiencies[{k}]", f"{where}: merger")
               for k, v in (mg.get("efficiencies") or {}).items()}
        pt = mg.get("passthrough", "identity")
        if isinstance(pt, Mapping):
            if "matrix" not in pt:
                raise InputValidationError(f"{where}: merger.passthrough object needs 'matrix'")
            pt = np.array(pt["matrix"], dtype=float)
        elif not isinstance(pt, str):
            raise InputValidationError(f"{where}: merger.passthrough must be a mode string or matrix")
        merger = MergerSpec(str(mg["firm_a"]), str(mg["firm_b"]), eff, pt)
    return MarketBundle(market, diversion, merger)


def _load_csv(path: Path) -> MarketBundle:
    if path.is_dir():
        prod_path, div_path = path / "products.csv", path / "diversion.csv"
    else:
        prod_path, div_path = path, path.with_name("diversion.csv")
    products = []
    try:
        with open(prod_path, newline="") as fh:
            for row, rec in enumerate(csv.DictReader(fh)):
                w = f"{prod_path}: row {row + 1}"
                for f in ("id", "firm", "revenue", "margin"):
                    if rec.get(f) is None:
                        raise InputValidationError(f"{w}: missing field {f!r}")
                products.append(Product(rec["id"], rec["firm"],
                                        _num(rec["revenue"], "revenue", w),
                                        _num(rec["margin"], "margin", w)))
    except OSError as exc:
        raise InputValidationError(f"cannot read {prod_path}: {exc}") from exc
    if not products:
        raise InputValidationError(f"{prod_path}: no products")
    market = Market(tuple(products))
    order = [p.id for p in products if p.id != OUTSIDE]
    pos = {pid: i for i, pid in enumerate(order)}
    values = -np.eye(len(order))
    outside = np.zeros(len(order))
    has_outside = False
    try:
        with open(div_path, newline="") as fh:
            for row, rec in enumerate(csv.DictReader(fh)):
                w = f"{div_path}: row {row + 1}"
                for f in ("from", "to", "value"):
                    if rec.get(f) is None:
                        raise InputValidationError(f"{w}: missing field {f!r}")
                src, dst = rec["from"], rec["to"]
                if src not in pos:
                    raise InputValidationError(f"{w}: unknown product {src!r} in 'from'")
                v = _num(rec["value"], "value", w)
                if dst == OUTSIDE:
                    outside[pos[src]] = v
                    has_outside = True
                elif dst not in pos:
                    raise InputValidationError(f"{w}: unknown product {dst!r} in 'to'")
                else:
                    values[pos[src], pos[dst]] = v
    except OSError as exc:
        raise InputValidationError(f"cannot read {div_path}: {exc}") from exc
    diversion = DiversionMatrix(tuple(order), values, outside if has_outside else None)
    return MarketBundle(market, diversion, None)


def market_bundle_to_dict(bundle: MarketBundle) -> dict:
    """Inverse of :func:`market_bundle_from_dict`; numeric fields round-trip bit-exactly."""
    doc: dict = {
        "products": [
            {"id": p.id, "firm": p.firm, "revenue": p.revenue, "margin": p.margin}
            for p in bundle.market.products
        ],
        "currency": bundle.market.currency,
        "diversion": {
            "order": list(bundle.diversion.order),
            "matrix": bundle.diversion.values.tolist(),
        },
    }
    if bundle.diversion.outside is not None:
        doc["diversion"]["outside"] = bundle.diversion.outside.tolist()
    if bundle.merger is not None:
        m = bundle.merger
        pt = m.passthrough if isinstance(m.passthrough, str) else {"matrix": m.passthrough.tolist()}
        doc["merger"] = {
            "firm_a": m.firm_a,
            "firm_b": m.firm_b,
            "efficiencies": dict(m.efficiencies),
            "passthrough": pt,
        }
    return doc


def save_market(bundle: MarketBundle, path: str | Path) -> None:
    """Write a bundle back to the canonical JSON format."""
    with open(path, "w") as fh:
        json.dump(market_bundle_to_dict(bundle), fh, indent=2)
        fh.write("\n")
