"""Stage orchestration. Stages talk to each other only through files in ``out``.

ingest -> fit-quantiles -> replay -> segment-safety -> decide
       -> diagnose-support / transfer / bootstrap -> report

``decision.json`` is assembled from the stage outputs after every stage
that contributes to it, and carries no timestamps, paths or worker counts.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import platform
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .auction_log import (Panel, load_panel, parse_log, partition_segments, save_panel,
                          write_log)
from .decision import (PolicyBounds, catalog_size_scaling, decide, point_estimate_winner,
                       simultaneous_bounds, tolerance_sweep)
from .errors import ConfigError, DependencyError, ReserveCertError
from .policy_catalog import Catalog, QuantileSet, build_catalog, fit_quantiles
from .replay import ReplaySummary, replay_catalog, write_replay_table
from .segments import (SegmentCertificate, bounds_from_summary, coverage_sensitivity,
                       nonharm_certificate, write_segments)
from .support import (DEFAULT_KAPPA, DEFAULT_Q_GRID, boundary_sweep, localized_selection,
                      pairwise_boundary_mass, write_boundary_sweep, write_localized,
                      write_pairwise)
from .synth import GeneratorConfig, generate_holdout, generate_log
from .validation import day_bootstrap, frozen_transfer, response_gap_threshold, row_bootstrap

log = logging.getLogger(__name__)

WORKERS_ENV = "RESERVECERT_WORKERS"
STAGES = ("ingest", "fit-quantiles", "replay", "segment-safety", "decide",
          "diagnose-support", "transfer", "bootstrap", "report")


@dataclass
class RunConfig:
    input: str | None = None
    holdout: str | None = None
    synth: dict | None = None
    schema: Any = "standard"
    catalog: Any = "paper19"
    alpha: float = 0.05
    lam: float = 1.0
    tolerance: float = 0.0
    tolerance_grid: list = field(default_factory=lambda: [0.0, 0.025, 0.05, 0.075, 0.10])
    h_grid: list = field(default_factory=lambda: [1, 2, 5, 10, 20, 50, 100, 200])
    kappa: float = DEFAULT_KAPPA
    penalty_center: str = "lcb"
    q_grid: list = field(default_factory=lambda: list(DEFAULT_Q_GRID))
    segment_dimensions: list = field(default_factory=lambda: ["advertiser", "exchange", "region"])
    segment_min_rows: int = 100
    gap_bucket_edges: list | None = None
    bootstrap_draws: int = 1000
    bootstrap_ranking: str = "full-replay"
    bootstrap_unit: str = "day"
    seed: int = 0
    L_s: float = 0.0
    cover_radius: float = 0.0
    cover_radius_grid: list = field(default_factory=lambda: [0.0, 0.25, 0.5])
    daily_baseline: str = "day-local"
    topk: int = 5
    strict: bool = True
    out: str = "out"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.lam < 0 or self.tolerance < 0:
            raise ConfigError("lambda and tolerance must be >= 0")
        if (self.input is None) == (self.synth is None):
            raise ConfigError("config needs exactly one of 'input' or 'synth'")
        if self.bootstrap_unit not in ("day", "row"):
            raise ConfigError("bootstrap_unit must be 'day' or 'row'")

    @classmethod
    def from_mapping(cls, d: Mapping) -> "RunConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def generator(self) -> GeneratorConfig:
        params = dict(self.synth or {})
        params.pop("holdout_rows", None)
        params.setdefault("seed", self.seed)
        return GeneratorConfig.from_mapping(params)

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("out")
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.canonical(), sort_keys=True, default=str)
                              .encode()).hexdigest()


def load_config(path: str | Path, **overrides) -> RunConfig:
    """Read a YAML or JSON run configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if not isinstance(data, Mapping):
        raise ConfigError("config file must hold a mapping")
    data = dict(data)
    base = path.parent
    for key in ("input", "holdout"):
        if data.get(key) and not Path(data[key]).is_absolute():
            data[key] = str(base / data[key])
    cat = data.get("catalog")
    if isinstance(cat, str) and cat.endswith((".ini", ".cfg")) and not Path(cat).is_absolute():
        data["catalog"] = str(base / cat)
    for key, val in overrides.items():
        if val is not None:
            data[key] = val
    return RunConfig.from_mapping(data)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from None


# -------------------------------------------------------------- file helpers

def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, tuples become lists."""
    if isinstance(obj, float) or isinstance(obj, np.floating):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return x
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _unclean(obj):
    if isinstance(obj, str) and obj in ("NaN", "Infinity", "-Infinity"):
        return float(obj.replace("Infinity", "inf"))
    if isinstance(obj, dict):
        return {k: _unclean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unclean(v) for v in obj]
    return obj


def write_json(obj, path: Path) -> None:
    text = json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n")


def read_json(path: Path, stage: str):
    if not path.exists():
        raise DependencyError(f"missing {path.name}; run the '{stage}' stage first")
    return _unclean(json.loads(path.read_text()))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --------------------------------------------------------------- the stages

class Pipeline:
    """Runs stages for one config against one output directory."""

    def __init__(self, config: RunConfig, out: str | Path | None = None, workers: int | None = None):
        self.config = config
        self.out = Path(out or config.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.workers = workers or default_workers()

    def path(self, name: str) -> Path:
        return self.out / name

    # ingest ---------------------------------------------------------------
    def ingest(self) -> dict:
        cfg = self.config
        if cfg.synth is not None:
            gen = cfg.generator()
            panel = generate_log(gen, workers=self.workers)
            hold_rows = (cfg.synth or {}).get("holdout_rows", gen.n_rows)
            holdout = generate_holdout(gen, hold_rows) if hold_rows else None
        else:
            panel = parse_log(cfg.input, cfg.schema if isinstance(cfg.schema, Mapping)
                              else {"preset": cfg.schema}, strict=cfg.strict)
            holdout = None
            if cfg.holdout:
                holdout = parse_log(cfg.holdout, cfg.schema if isinstance(cfg.schema, Mapping)
                                    else {"preset": cfg.schema}, strict=cfg.strict)
        save_panel(panel, self.path("panel.npz"))
        info = {"rows": panel.n, "days": len(panel.days), "dropped_rows": panel.dropped_rows,
                "panel_id": panel.panel_id}
        if holdout is not None:
            save_panel(holdout, self.path("holdout.npz"))
            info["holdout"] = {"rows": holdout.n, "days": len(holdout.days),
                               "dropped_rows": holdout.dropped_rows, "panel_id": holdout.panel_id}
        elif self.path("holdout.npz").exists():
            self.path("holdout.npz").unlink()
        write_json(info, self.path("ingest.json"))
        return info

    def synth(self) -> None:
        """Write the synthetic development and holdout logs as standard CSV files."""
        if self.config.synth is None:
            raise ConfigError("the synth stage needs a 'synth' section in the config")
        gen = self.config.generator()
        write_log(generate_log(gen, workers=self.workers), self.path("synth_dev.csv"))
        write_log(generate_holdout(gen, self.config.synth.get("holdout_rows")),
                  self.path("synth_holdout.csv"))

    def _panel(self, name: str = "panel.npz") -> Panel:
        if not self.path(name).exists():
            raise DependencyError(f"missing {name}; run the 'ingest' stage first")
        return load_panel(self.path(name))

    # fit-quantiles ----------------------------------------------------------
    def fit_quantiles(self) -> QuantileSet:
        q = fit_quantiles(self._panel())
        write_json(q.to_dict(), self.path("quantiles.json"))
        return q

    def _catalog(self) -> Catalog:
        q = None
        if self.path("quantiles.json").exists():
            q = QuantileSet.from_dict(json.loads(self.path("quantiles.json").read_text()))
        try:
            return build_catalog(self.config.catalog, q)
        except ReserveCertError as exc:
            if q is None and "quantile" in str(exc):
                raise DependencyError(
                    f"{exc}; run the 'fit-quantiles' stage first") from exc
            raise

    def _grid(self, panel: Panel):
        c = self.config
        return partition_segments(panel, c.segment_dimensions, c.segment_min_rows,
                                  c.gap_bucket_edges)

    # replay -----------------------------------------------------------------
    def replay(self) -> list[ReplaySummary]:
        panel = self._panel()
        catalog = self._catalog()
        summaries = replay_catalog(panel, catalog, self._grid(panel), workers=self.workers,
                                   daily_baseline=self.config.daily_baseline)
        write_json({"summaries": [s.to_dict() for s in summaries],
                    "catalog_fingerprint": catalog.fingerprint()}, self.path("replay.json"))
        write_replay_table(summaries, self.path("replay_table.csv"))
        return summaries

    def _summaries(self) -> list[ReplaySummary]:
        data = read_json(self.path("replay.json"), "replay")
        return [ReplaySummary.from_dict(s) for s in data["summaries"]]

    # segment-safety ---------------------------------------------------------
    def segment_safety(self) -> dict[str, SegmentCertificate]:
        c = self.config
        panel = self._panel()
        grid = self._grid(panel)
        certs = {}
        for s in self._summaries():
            if s.is_baseline:
                continue
            bset = bounds_from_summary(s, grid, c.alpha)
            certs[s.policy_id] = nonharm_certificate(bset, c.L_s, c.cover_radius)
        sens = {pid: coverage_sensitivity([b.lcb for b in cert.segments], c.L_s,
                                          c.cover_radius_grid)
                for pid, cert in certs.items()}
        write_json({"certificates": {k: v.to_dict() for k, v in certs.items()},
                    "coverage_sensitivity": sens}, self.path("segments.json"))
        write_segments(list(certs.values()), self.path("segments.csv"))
        return certs

    # decide -----------------------------------------------------------------
    def decide(self) -> dict:
        c = self.config
        summaries = self._summaries()
        seg = read_json(self.path("segments.json"), "segment-safety")
        seg_pass = {pid: bool(v["certified"]) for pid, v in seg["certificates"].items()}
        bounds = simultaneous_bounds(summaries, c.alpha, c.lam)
        dec = decide(bounds, c.tolerance, seg_pass)
        lifts = {s.policy_id: s.lift for s in summaries}
        ranked = sorted((b for b in bounds if not b.is_baseline),
                        key=lambda b: -b.lcb_support)
        gap = None
        if len(ranked) > 1:
            lead, runner = ranked[0], ranked[1]
            if lifts[lead.policy_id] >= lifts[runner.policy_id]:
                gap = {"leader": lead.policy_id, "runner_up": runner.policy_id,
                       **response_gap_threshold(lifts[lead.policy_id],
                                                lifts[runner.policy_id]).to_dict()}
            else:
                gap = {"leader": lead.policy_id, "runner_up": runner.policy_id,
                       "margin": lifts[lead.policy_id] - lifts[runner.policy_id],
                       "threshold": None,
                       "interpretation": "runner-up has the larger replay lift; no margin to split"}
        core = dec.to_dict()
        core.update({
            "labels": {b.policy_id: dec.label(b.policy_id) for b in bounds},
            "point_estimate_winner": point_estimate_winner(bounds),
            "tolerance_sweep": [{"tolerance": t, "shortlist_size": n}
                                for t, n in tolerance_sweep(bounds, sorted(c.tolerance_grid),
                                                            seg_pass).items()],
            "catalog_size_scaling": catalog_size_scaling(
                bounds, list(range(3, len(bounds) + 1)), c.alpha, c.lam, dec.leader_id)
            if len(bounds) >= 3 else [],
            "replay": [{"policy_id": s.policy_id, "lift": s.lift, "mean_yield": s.mean_yield,
                        "retained_share": s.retained_share} for s in summaries],
            "response_gap": gap,
        })
        write_json(core, self.path("decision_core.json"))
        return self.assemble()

    def _bounds(self) -> list[PolicyBounds]:
        core = read_json(self.path("decision_core.json"), "decide")
        return [PolicyBounds(**b) for b in core["bounds"]]

    # diagnose-support -------------------------------------------------------
    def diagnose_support(self) -> dict:
        c = self.config
        panel = self._panel()
        catalog = self._catalog()
        bounds = self._bounds()
        core = read_json(self.path("decision_core.json"), "decide")
        sweep = boundary_sweep(panel, catalog, catalog.quantiles, c.h_grid, c.kappa, bounds,
                               c.penalty_center)
        sel = localized_selection(panel, catalog, catalog.quantiles, c.q_grid,
                                  c.bootstrap_draws, c.seed)
        leader = catalog.get(core["leader"])
        pairs = [pairwise_boundary_mass(panel, leader, p, catalog.quantiles)
                 for p in catalog.candidates if p.id != leader.id]
        write_boundary_sweep(sweep, self.path("boundary_sweep.csv"))
        write_localized(sel, self.path("localized.csv"))
        write_pairwise(pairs, self.path("pairwise.csv"))
        data = {
            "kappa": c.kappa, "center": c.penalty_center,
            "boundary_sweep": [asdict(r) for r in sweep],
            "localized": [{"q": lvl.q, "ranking": list(lvl.ranking),
                           "winner_frequency": lvl.winner_frequency,
                           "estimates": [asdict(e) for e in lvl.estimates]}
                          for lvl in sel.levels],
            "degenerate": list(sel.degenerate),
            "pairwise": [asdict(p) for p in pairs],
        }
        write_json(data, self.path("support.json"))
        return self.assemble()

    # transfer ---------------------------------------------------------------
    def transfer(self) -> dict:
        if not self.path("holdout.npz").exists():
            raise DependencyError("missing holdout.npz; configure a holdout and run 'ingest'")
        holdout = self._panel("holdout.npz")
        catalog = self._catalog()
        rep = frozen_transfer(catalog, holdout, self._summaries(), self.config.topk, self.workers)
        write_json(rep.to_dict(), self.path("transfer.json"))
        with open(self.path("transfer.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy_id", "dev_lift", "holdout_lift", "holdout_retained_share"])
            for pid, lift in rep.dev_lifts.items():
                w.writerow([pid, repr(lift), repr(rep.holdout_lifts[pid]),
                            repr(rep.holdout_retained[pid])])
        return self.assemble()

    # bootstrap --------------------------------------------------------------
    def bootstrap(self) -> dict:
        c = self.config
        if c.bootstrap_unit == "row":
            catalog = self._catalog()
            res = row_bootstrap(self._panel(), catalog, catalog.quantiles, c.bootstrap_draws,
                                c.seed, c.bootstrap_ranking, c.alpha, c.lam)
        else:
            res = day_bootstrap(self._summaries(), c.bootstrap_draws, c.seed,
                                c.bootstrap_ranking, c.alpha, c.lam)
        write_json(res.to_dict(), self.path("bootstrap.json"))
        return self.assemble()

    # decision.json ----------------------------------------------------------
    def assemble(self) -> dict:
        core = read_json(self.path("decision_core.json"), "decide")
        seg = read_json(self.path("segments.json"), "segment-safety")
        ingest = read_json(self.path("ingest.json"), "ingest")
        doc = dict(core)
        doc["segments"] = seg
        doc["panel"] = ingest
        for key, name in (("support", "support.json"), ("transfer", "transfer.json"),
                          ("bootstrap", "bootstrap.json")):
            p = self.path(name)
            doc[key] = _unclean(json.loads(p.read_text())) if p.exists() else None
        q = self.path("quantiles.json")
        doc["quantiles"] = json.loads(q.read_text()) if q.exists() else None
        doc["design"] = design_flags(self.config)
        write_json(doc, self.path("decision.json"))
        return doc

    # manifest ---------------------------------------------------------------
    def manifest(self) -> dict:
        ingest = read_json(self.path("ingest.json"), "ingest")
        outputs = sorted(p for p in self.out.iterdir()
                         if p.is_file() and p.name != "manifest.json")
        man = {
            "versions": {"reservecert": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "pandas": pd.__version__},
            "seed": self.config.seed,
            "config_hash": self.config.digest(),
            "config": self.config.canonical(),
            "rows": ingest,
            "design": design_flags(self.config),
            "workers": self.workers,
            "outputs": {p.name: _sha256(p) for p in outputs},
        }
        write_json(man, self.path("manifest.json"))
        return man

    def run(self) -> dict:
        self.ingest()
        self.fit_quantiles()
        self.replay()
        self.segment_safety()
        self.decide()
        self.diagnose_support()
        if self.path("holdout.npz").exists():
            self.transfer()
        else:
            for name in ("transfer.json", "transfer.csv"):
                if self.path(name).exists():
                    self.path(name).unlink()
        doc = self.bootstrap()
        render_report(self.out)
        self.manifest()
        return doc

    def stage(self, name: str) -> Callable[[], Any]:
        table = {
            "ingest": self.ingest, "fit-quantiles": self.fit_quantiles, "replay": self.replay,
            "segment-safety": self.segment_safety, "decide": self.decide,
            "diagnose-support": self.diagnose_support, "transfer": self.transfer,
            "bootstrap": self.bootstrap, "synth": self.synth, "run": self.run,
            "report": lambda: render_report(self.out),
        }
        return table[name]


def design_flags(config: RunConfig) -> dict:
    """Every method choice that changes numbers, recorded for auditability."""
    return {
        "bound": "bonferroni-normal over catalog incl. baseline",
        "daily_baseline": config.daily_baseline,
        "leader_rank": "lcb_support",
        "tolerance_reference": "lcb_support",
        "certification": "leader only, positive lcb_support and segment certificate",
        "tie_break": "catalog order",
        "segment_multiplicity": "bonferroni over covered segments",
        "segment_rule": "strict eta > L_s * cover_radius",
        "support_penalty_center": config.penalty_center,
        "kappa": config.kappa,
        "q_normalization": "floor-changing rows",
        "localized_bootstrap_radius": "fixed at full-sample radius",
        "pairwise_region": "filled rows, closed interval, floors differ",
        "bootstrap_unit": config.bootstrap_unit,
        "bootstrap_ranking": config.bootstrap_ranking,
        "rng": "philox via SeedSequence(seed, draw)",
        "summation": "exact integer partial sums",
    }


def run_pipeline(config: RunConfig, out: str | Path | None = None,
                 workers: int | None = None) -> int:
    """Run every stage; returns 0, or writes ``error.json`` and returns 2."""
    pipe = Pipeline(config, out, workers)
    try:
        pipe.run()
    except ReserveCertError as exc:
        write_json(exc.to_record(), pipe.path("error.json"))
        log.error("%s", exc)
        return 2
    return 0


# ------------------------------------------------------------------- report

def render_report(out: str | Path) -> str:
    """Text summary and plot-ready tables from ``decision.json`` alone."""
    out = Path(out)
    doc = read_json(out / "decision.json", "decide")
    lines = [
        f"leader: {doc['leader']}",
        f"alpha={doc['alpha']} lambda={doc['lambda']} tolerance={doc['tolerance']}",
        f"certified ({len(doc['certified'])}): {', '.join(doc['certified']) or '-'}",
        f"unresolved ({len(doc['unresolved'])}): {', '.join(doc['unresolved']) or '-'}",
        f"dominated ({len(doc['dominated'])}): {', '.join(doc['dominated']) or '-'}",
        f"point-estimate winner: {doc['point_estimate_winner']}",
    ]
    gap = doc.get("response_gap")
    if gap and gap.get("threshold") is not None:
        lines.append(f"response-gap threshold vs {gap['runner_up']}: {gap['threshold']:.4%}")
    if doc.get("transfer"):
        t = doc["transfer"]
        lines.append(f"transfer: spearman={t['spearman']:.3f} top-{t['topk']['k']} "
                     f"overlap={t['topk']['overlap']} holdout leader={t['holdout_leader']}")
    if doc.get("bootstrap"):
        b = doc["bootstrap"]
        best = max(b["frequencies"].items(), key=lambda kv: kv[1])
        lines.append(f"bootstrap ({b['draws']} {b['unit']} draws): {best[0]} wins {best[1]:.1%}")
    cert = doc["segments"]["certificates"].get(doc["leader"])
    if cert:
        lines.append(f"leader segments: K={cert['K']} eta={cert['eta']} "
                     f"certified={cert['certified']} ({cert['reason']})")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)

    with open(out / "plot_bounds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy_id", "lift", "lcb", "ucb", "lcb_support", "retained_share", "label"])
        for b in doc["bounds"]:
            w.writerow([b["policy_id"], b["lift_hat"], b["lcb"], b["ucb"], b["lcb_support"],
                        b["retained_share"], doc["labels"][b["policy_id"]]])
    if doc.get("support"):
        with open(out / "plot_support.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy_id", "h", "n_boundary", "penalized_lcb"])
            for r in doc["support"]["boundary_sweep"]:
                w.writerow([r["policy_id"], r["window_h"], r["n_boundary"], r["penalized_lcb"]])
    if doc.get("transfer"):
        t = doc["transfer"]
        with open(out / "plot_transfer.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy_id", "dev_lift", "holdout_lift", "holdout_retained_share"])
            for pid, lift in t["dev_lifts"].items():
                w.writerow([pid, lift, t["holdout_lifts"][pid], t["holdout_retained"][pid]])
    return text
