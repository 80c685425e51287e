"""Command-line pipeline: each subcommand reads upstream artifacts from ``--out`` and writes its own.

Exit codes: 0 success, 1 user error (bad input, missing artifact), 2 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__

log = logging.getLogger("regfrontier")


class UserError(Exception):
    pass


class MissingArtifact(UserError):
    def __init__(self, path: Path, producer: str):
        super().__init__(f"missing {path.name} in {path.parent}; run `regfrontier {producer}` first")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    input: str | None = None
    cpi: str | None = None
    cost_index: str | None = None
    base_year: int | None = None
    max_years_from_construction: int = 1
    price_trim: tuple[float, float] = (0.01, 0.99)
    hedonic_spec: str = "restricted"
    mode: str = "constrained"
    g_points: int = 200
    mu_points: int = 60
    refine: int = 30
    zoom: int = 0
    smooth_max_degree: int = 6
    detrend_max_degree: int = 12
    bootstrap_B: int = 200
    bootstrap_level: float = 0.95
    radii: tuple[float, ...] = (250.0, 500.0, 1000.0)
    draws: int = 10_000
    kappa_T: str = "estimate"
    resales: str | None = None
    band: tuple[int, int] = (11, 24)
    target: int = 24
    seed: int = 0
    threads: int = 1
    simulate: dict = field(default_factory=dict)

    def digest(self) -> str:
        d = asdict(self)
        d.pop("threads")  # does not affect results
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=list).encode()).hexdigest()[:16]


def load_config(path: str | None, overrides: dict) -> PipelineConfig:
    d: dict = {}
    if path:
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise UserError(f"cannot read config {path}: {e}") from None
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(d) - known
    if unknown:
        raise UserError(f"unknown config keys: {sorted(unknown)}")
    sim = {**d.get("simulate", {}), **(overrides.get("simulate") or {})}
    d.update({k: v for k, v in overrides.items() if v is not None and k in known})
    if sim:
        d["simulate"] = sim
    for k in ("price_trim", "radii", "band"):
        if k in d:
            d[k] = tuple(d[k])
    return PipelineConfig(**d)


# ---------------------------------------------------------------------------
# artifact io


class Artifacts:
    def __init__(self, out: Path, config: PipelineConfig, command: str):
        self.out = out
        self.config = config
        self.command = command
        out.mkdir(parents=True, exist_ok=True)

    @property
    def stamp(self) -> dict:
        return {"tool": "regfrontier", "version": __version__, "config_hash": self.config.digest(),
                "command": self.command}

    def path(self, name: str) -> Path:
        return self.out / name

    def need(self, name: str, producer: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifact(p, producer)
        return p

    def write_csv(self, name: str, df: pd.DataFrame) -> Path:
        p = self.path(name)
        header = "# " + " ".join(f"{k}={v}" for k, v in self.stamp.items()) + "\n"
        with open(p, "w", newline="") as fh:
            fh.write(header)
            df.to_csv(fh, index=False, float_format="%.10g", lineterminator="\n")
        log.info("wrote %s", p)
        return p

    def write_json(self, name: str, payload: dict) -> Path:
        p = self.path(name)
        body = {"meta": self.stamp, **payload}
        with open(p, "w") as fh:
            fh.write(json.dumps(body, indent=2, sort_keys=True, default=_jsonable) + "\n")
        log.info("wrote %s", p)
        return p

    def read_csv(self, name: str, producer: str, **kw) -> pd.DataFrame:
        return read_csv_artifact(self.need(name, producer), **kw)

    def read_json(self, name: str, producer: str) -> dict:
        with open(self.need(name, producer)) as fh:
            return json.load(fh)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(f"not serializable: {type(o)}")


def read_csv_artifact(path, **kw) -> pd.DataFrame:
    """Read a CSV, skipping the provenance line if present."""
    with open(path) as fh:
        first = fh.readline()
    return pd.read_csv(path, skiprows=1 if first.startswith("#") else 0, **kw)


# ---------------------------------------------------------------------------
# shared loaders


def _panel(art: Artifacts):
    from .domain import build_panel

    adj = art.read_csv("adjusted.csv", "hedonic", dtype={"parcel_id": str, "bloc_id": str, "building_id": str})
    return build_panel(adj)


def _quantity(art: Artifacts):
    from .hedonic import QuantityTable

    q = art.read_csv("quantity.csv", "hedonic")
    return QuantityTable(q["height"].to_numpy(), q["q"].to_numpy())


def _estimate(art: Artifacts, name="frontier.json"):
    from .frontier.estimate import FrontierEstimate

    return FrontierEstimate.from_dict(art.read_json(name, "frontier"))


def _fit_config(cfg: PipelineConfig):
    from .frontier.pipeline import FitConfig

    return FitConfig(g_points=cfg.g_points, mu_points=cfg.mu_points, refine=cfg.refine,
                     smooth_max_degree=cfg.smooth_max_degree, zoom=cfg.zoom)


def _detrended(panel, cfg: PipelineConfig):
    from .variance import time_detrend

    if any(panel[h].day is None for h in panel.heights):
        return None, panel
    dt = time_detrend(panel, cfg.detrend_max_degree, seed=cfg.seed)
    return dt, dt.residuals


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(art: Artifacts, cfg: PipelineConfig):
    from .domain import FilterConfig, PriceIndexSeries, apply_sample_filters, deflate_prices, load_transactions

    if not cfg.input:
        raise UserError("ingest needs --input (raw transactions CSV)")
    loaded = load_transactions(cfg.input)
    filt = apply_sample_filters(loaded.transactions, FilterConfig(cfg.max_years_from_construction, tuple(cfg.price_trim)))
    txs = filt.transactions
    if cfg.cpi:
        if cfg.base_year is None:
            raise UserError("--base-year is required with --cpi")
        cpi = PriceIndexSeries.from_csv(cfg.cpi)
        cost = PriceIndexSeries.from_csv(cfg.cost_index) if cfg.cost_index else None
        txs = deflate_prices(txs, cpi, cost, cfg.base_year)
    else:
        txs = txs.assign(log_price=np.log(txs["price"].to_numpy(float) / txs["area"].to_numpy(float)))
    art.write_csv("transactions.csv", txs)
    art.write_csv("rejects.csv", loaded.rejects)
    art.write_json("ingest.json", {"rows_in": len(loaded.transactions) + len(loaded.rejects),
                                   "rejected": len(loaded.rejects), "drops": filt.drops, "rows_out": len(txs),
                                   "deflated": bool(cfg.cpi)})


def cmd_hedonic(art: Artifacts, cfg: PipelineConfig):
    from .domain import build_panel
    from .hedonic import adjust_prices, fit_hedonic, quantity_table

    txs = art.read_csv("transactions.csv", "ingest", dtype={"parcel_id": str, "bloc_id": str, "building_id": str})
    model = fit_hedonic(txs, cfg.hedonic_spec)
    adj = adjust_prices(txs, model)
    art.write_json("hedonic.json", model.to_dict())
    art.write_csv("adjusted.csv", adj)
    art.write_csv("quantity.csv", quantity_table(model).to_frame())
    art.write_csv("panel_summary.csv", build_panel(adj).summary())


def cmd_variances(art: Artifacts, cfg: PipelineConfig):
    from .variance import estimate_variances, smooth_variances

    panel = _panel(art)
    dt, y0 = _detrended(panel, cfg)
    var = smooth_variances(estimate_variances(panel, y0), cfg.smooth_max_degree)
    art.write_csv("variances.csv", var.to_frame())
    art.write_json("detrend.json", {} if dt is None else {
        "degree": dt.degree, "coef": list(dt.coef), "day_range": list(dt.day_range), "cv_mse": list(dt.cv_mse)})


def cmd_frontier(art: Artifacts, cfg: PipelineConfig):
    from .frontier.pipeline import estimate_frontier

    panel = _panel(art)
    _, y0 = _detrended(panel, cfg)
    q = _quantity(art)
    quantity = q if all(h in q.heights for h in panel.heights) else None
    if cfg.mode == "quartic" and quantity is None:
        raise UserError("quartic mode needs q(h) for every panel height; rerun `regfrontier hedonic`")
    fit = estimate_frontier(panel, y0, cfg.mode.replace("-", "_"), _fit_config(cfg), quantity)
    est = fit.estimate
    art.write_json("frontier.json", est.to_dict())
    art.write_csv("frontier.csv", est.to_frame())
    art.write_csv("frontier_table.csv", est.appendix_table(panel))


def cmd_bootstrap(art: Artifacts, cfg: PipelineConfig):
    from .frontier.bootstrap import bootstrap_ci

    est = _estimate(art)
    panel = _panel(art)
    q = _quantity(art)
    res = bootstrap_ci(est, panel, cfg.bootstrap_B, cfg.bootstrap_level, cfg.seed, _fit_config(cfg),
                       q if est.mode == "quartic" else None, workers=max(1, cfg.threads))
    est.bands = res.as_bands()
    art.write_json("frontier_bands.json", est.to_dict())
    df = est.to_frame()
    art.write_csv("bootstrap.csv", df[["h", "G_level", "band_lower", "band_upper"]])
    art.write_csv("bootstrap_replicates.csv", pd.DataFrame(res.replicates, columns=[str(h) for h in est.heights]))


def _tax_inputs(art: Artifacts):
    from .regtax import TaxFrontier, building_table

    est = _estimate(art)
    panel = _panel(art)
    q = _quantity(art)
    frontier = TaxFrontier.from_estimate(est, q if est.cost_curve is not None else None)
    return est, panel, frontier, building_table(panel, est)


def cmd_tax(art: Artifacts, cfg: PipelineConfig):
    from .regtax import tax_rates

    _, _, frontier, table = _tax_inputs(art)
    rates = tax_rates(table, frontier, cfg.draws, cfg.seed)
    art.write_csv("tax_rates.csv", rates)
    ok = rates["rate"].notna()
    art.write_json("tax.json", {"mean_rate": float(rates.loc[ok, "rate"].mean()),
                                "sd_rate": float(rates.loc[ok, "rate"].std(ddof=1)) if ok.sum() > 1 else None,
                                "buildings": int(ok.sum()), "draws": cfg.draws, "seed": cfg.seed,
                                "mes": frontier.mes, "frontier_flags": frontier.flags})


def _period_effects(art: Artifacts, cfg: PipelineConfig):
    from .kappa import PeriodEffects, fit_kappa_T

    if cfg.kappa_T != "estimate":
        try:
            return PeriodEffects.fixed(float(cfg.kappa_T)), {"kappa_T_source": "fixed"}
        except ValueError:
            raise UserError("--kappa-T must be 'estimate' or a number") from None
    path = Path(cfg.resales) if cfg.resales else art.path("resales.csv")
    if not path.exists():
        raise UserError(f"--kappa-T estimate needs resale data at {path}; pass --resales or run `regfrontier simulate`")
    rs = read_csv_artifact(path)
    origin = float(np.floor(rs["sale_year"].min()))
    rs = rs.assign(t=rs["sale_year"] - origin, s=rs["construction_year"] - origin)
    pe = fit_kappa_T(rs, origin=origin)
    return pe, {"kappa_T_source": "estimate", "resales": len(rs)}


def cmd_bounds(art: Artifacts, cfg: PipelineConfig):
    from .bounds import bounds_for_all
    from .spatial import build_neighbors

    rates = art.read_csv("tax_rates.csv", "tax", dtype={"building_id": str})
    _, _, frontier, table = _tax_inputs(art)
    pe, info = _period_effects(art, cfg)
    df = table.frame.copy()
    df["building_id"] = df["building_id"].astype(str)
    df["t"] = 1970.0 + df["day"].to_numpy(float) / 365.25  # calendar years; gamma() subtracts the origin
    if df["t"].isna().any():
        raise UserError("bounds need transaction dates for every building")
    xy = df[["x", "y"]].to_numpy(float)
    nsets = {float(d): build_neighbors(xy, float(d)) for d in cfg.radii}
    b = bounds_for_all(df, frontier, nsets, pe.kappa_T, pe.deflator, cfg.draws, cfg.seed)
    b["building_id"] = b["building_id"].astype(str)
    rep = rates.merge(b, on="building_id", how="left")
    cols = ["building_id", "h", "rate", "se"] + [f"bound_{int(d)}" for d in sorted(nsets)] + ["kappa_S_mean"]
    rep = rep[cols].assign(draws=cfg.draws, seed=cfg.seed)
    art.write_csv("tax_report.csv", rep)
    art.write_csv("bounds_detail.csv", b)
    summary = {f"mean_bound_{int(d)}": float(rep[f"bound_{int(d)}"].mean()) for d in sorted(nsets)}
    summary.update(mean_kappa_S=float(rep["kappa_S_mean"].mean()), kappa=asdict(pe), **info,
                   coordinates_missing=int(next(iter(nsets.values())).excluded))
    art.write_json("bounds.json", summary)


def _cost_curve(art: Artifacts, cfg: PipelineConfig):
    from .frontier.estimate import PAPER_QUARTIC

    p = art.path("frontier.json")
    if p.exists():
        est = _estimate(art)
        if est.cost_curve is not None:
            return est.cost_curve, "fitted"
    if cfg.mode == "paper-quartic":
        return PAPER_QUARTIC, "printed"
    raise UserError("needs a quartic cost curve; run `regfrontier frontier --mode quartic` "
                    "(or pass --mode paper-quartic to use the printed coefficients)")


def cmd_elasticity(art: Artifacts, cfg: PipelineConfig):
    from .econ import ISOQUANT_NOTE, elasticity_frame, isoquant

    curve, source = _cost_curve(art, cfg)
    q = _quantity(art)
    grid = np.linspace(float(q.q.min()), float(q.q.max()), 400)
    art.write_csv("elasticity.csv", elasticity_frame(curve, grid))
    art.write_csv("isoquant.csv", isoquant(curve, q))
    art.write_json("econ.json", {"cost_curve": list(curve.beta), "cost_source": source, "isoquant_units": ISOQUANT_NOTE})


def cmd_counterfactual(art: Artifacts, cfg: PipelineConfig):
    from .econ import consolidation_counterfactual

    curve, source = _cost_curve(art, cfg)
    q = _quantity(art)
    panel = _panel(art)
    lo, hi = cfg.band
    try:
        land, cost = consolidation_counterfactual(panel, curve, q, lo, hi, cfg.target)
    except ValueError as e:
        raise UserError(str(e)) from None
    art.write_json("counterfactual.json", {"band": [lo, hi], "target": cfg.target, "land_change_pct": land,
                                           "nonland_cost_change_pct": cost, "cost_source": source})


def cmd_simulate(art: Artifacts, cfg: PipelineConfig):
    from .hedonic import PAPER_RESTRICTED_COEFS, HedonicModel
    from .kappa import existing_home_sales
    from .synth import (PAPER_FRONTIER_LEVELS, MarketConfig, calibrated_truth, generate_panel, paper_shape,
                        panel_transactions, simulate_markets)

    s = {"heights": 12, "scale": 0.1, "markets": 10_000, "multi_parcels": 200, "trend": 0.03,
         "resale_parcels": 2000, "resale_delta": 0.0016, "start_year": 2012, **cfg.simulate}
    seqs = np.random.SeedSequence(cfg.seed).spawn(4)
    market = MarketConfig.from_cost_curve(H=int(s["heights"]))
    art.write_json("market_config.json", market.to_dict())
    art.write_csv("markets.csv", simulate_markets(market, int(s["markets"]), np.random.default_rng(seqs[0])))

    hs = range(1, int(s["heights"]) + 1)
    truth = calibrated_truth({h: PAPER_FRONTIER_LEVELS[h] for h in hs})
    gen = generate_panel(truth, paper_shape(np.random.default_rng(seqs[1]), hs, float(s["scale"])),
                         np.random.default_rng(seqs[2]))
    premia = HedonicModel.from_coefficients(PAPER_RESTRICTED_COEFS, max(hs))
    r = np.random.default_rng(seqs[3])
    tx = panel_transactions(gen, premia, start_year=int(s["start_year"]), multi_parcels=int(s["multi_parcels"]),
                            trend=float(s["trend"]), seed=r)
    art.write_csv("raw_transactions.csv", tx)
    rs = existing_home_sales(int(s["resale_parcels"]), 3, float(s["resale_delta"]), seed=r)
    rs = rs.assign(sale_year=rs["t"] + s["start_year"], construction_year=rs["s"] + s["start_year"])
    art.write_csv("resales.csv", rs[["parcel_id", "sale_year", "construction_year", "log_price"]])
    art.write_json("truth.json", {"settings": s, "per_height": {
        str(h): {"g": p.g, "mu_u": p.mu_u, "sigma_u": p.sigma_u, "sigma_v": p.sigma_v, "sigma_w": p.sigma_w}
        for h, p in gen.truth.items()}})


REPORT_PARTS = {
    "panel_summary.csv": "hedonic",
    "quantity.csv": "hedonic",
    "variances.csv": "variances",
    "frontier.csv": "frontier",
    "frontier_table.csv": "frontier",
    "bootstrap.csv": "bootstrap",
    "tax_rates.csv": "tax",
    "tax_report.csv": "bounds",
    "elasticity.csv": "elasticity",
    "isoquant.csv": "elasticity",
    "counterfactual.json": "counterfactual",
}


def cmd_report(art: Artifacts, cfg: PipelineConfig):
    """Bundle the figure data that exist; list what is missing and which command makes it."""
    present, missing = {}, {}
    for name, producer in REPORT_PARTS.items():
        p = art.path(name)
        if p.exists():
            present[name] = hashlib.sha256(p.read_bytes()).hexdigest()[:16]
        else:
            missing[name] = producer
    if "frontier.csv" not in present:
        raise MissingArtifact(art.path("frontier.csv"), "frontier")
    summary = {}
    est = _estimate(art)
    summary["mes"] = est.mes
    summary["frontier_mode"] = est.mode
    if "tax_rates.csv" in present:
        rates = art.read_csv("tax_rates.csv", "tax")
        summary["mean_tax_rate"] = float(rates["rate"].mean())
        hist, edges = np.histogram(rates["rate"].dropna(), bins=20, range=(0.0, 1.0))
        art.write_csv("report_tax_histogram.csv", pd.DataFrame({"lo": edges[:-1], "hi": edges[1:], "count": hist}))
    if "tax_report.csv" in present:
        rep = art.read_csv("tax_report.csv", "bounds")
        summary.update({c: float(rep[c].mean()) for c in rep.columns if c.startswith("bound_")})
    art.write_json("report.json", {"artifacts": present, "missing": missing, "summary": summary})


COMMANDS = {
    "ingest": cmd_ingest,
    "hedonic": cmd_hedonic,
    "variances": cmd_variances,
    "frontier": cmd_frontier,
    "bootstrap": cmd_bootstrap,
    "tax": cmd_tax,
    "bounds": cmd_bounds,
    "elasticity": cmd_elasticity,
    "counterfactual": cmd_counterfactual,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="artifacts", help="artifact directory (default: ./artifacts)")
    common.add_argument("--config", help="JSON file with PipelineConfig fields")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="regfrontier", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"regfrontier {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate, filter and deflate raw transactions")
    p.add_argument("--input")
    p.add_argument("--cpi")
    p.add_argument("--cost-index", dest="cost_index")
    p.add_argument("--base-year", dest="base_year", type=int)

    p = sub.add_parser("hedonic", parents=[common], help="floor/height premia, adjusted prices and q(h)")
    p.add_argument("--hedonic-spec", dest="hedonic_spec", choices=["restricted", "saturated"])

    sub.add_parser("variances", parents=[common], help="variance components by height")

    p = sub.add_parser("frontier", parents=[common], help="frontier maximum likelihood")
    p.add_argument("--mode", choices=["constrained", "per-height", "quartic"])
    p.add_argument("--g-points", dest="g_points", type=int)
    p.add_argument("--mu-points", dest="mu_points", type=int)
    p.add_argument("--zoom", type=int)

    p = sub.add_parser("bootstrap", parents=[common], help="parametric bootstrap bands for the frontier")
    p.add_argument("-B", dest="bootstrap_B", type=int)
    p.add_argument("--level", dest="bootstrap_level", type=float)
    p.add_argument("--g-points", dest="g_points", type=int)
    p.add_argument("--mu-points", dest="mu_points", type=int)
    p.add_argument("--zoom", type=int)

    p = sub.add_parser("tax", parents=[common], help="expected regulatory tax rate per building")
    p.add_argument("--draws", type=int)

    p = sub.add_parser("bounds", parents=[common], help="spatial lower bounds on the tax")
    p.add_argument("--radius", dest="radii", type=float, action="append")
    p.add_argument("--draws", type=int)
    p.add_argument("--kappa-T", dest="kappa_T")
    p.add_argument("--resales")

    p = sub.add_parser("elasticity", parents=[common], help="elasticity of AC to MC and the isoquant")
    p.add_argument("--mode", choices=["fitted", "paper-quartic"])

    p = sub.add_parser("counterfactual", parents=[common], help="consolidate a height band into taller buildings")
    p.add_argument("--band", type=int, nargs=2)
    p.add_argument("--target", type=int)
    p.add_argument("--mode", choices=["fitted", "paper-quartic"])

    p = sub.add_parser("simulate", parents=[common], help="synthetic markets, transactions and resales")
    p.add_argument("--heights", type=int)
    p.add_argument("--scale", type=float)
    p.add_argument("--markets", type=int)

    sub.add_parser("report", parents=[common], help="bundle figure data")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    over = vars(args).copy()
    command = over.pop("command")
    for k in ("heights", "scale", "markets"):
        v = over.pop(k, None)
        if v is not None:
            over.setdefault("simulate", {})[k] = v
    if over.get("mode") == "fitted":
        over["mode"] = None
    try:
        cfg = load_config(over.pop("config"), over)
        if cfg.threads > 1:
            os.environ.setdefault("OMP_NUM_THREADS", "1")
        art = Artifacts(Path(over["out"]), cfg, command)
        COMMANDS[command](art, cfg)
    except UserError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # classify known input problems as user errors
        from .domain import IndexCoverageError, SchemaError
        from .hedonic import MonotonicityError, RankDeficiencyError
        from .kappa import UnidentifiedError

        if isinstance(e, (SchemaError, IndexCoverageError, RankDeficiencyError, MonotonicityError,
                          UnidentifiedError, FileNotFoundError)):
            print(f"error: {e}", file=sys.stderr)
            return 1
        log.exception("internal error")
        print(f"internal error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
