"""Command-line entry point: ``decompsens <command> --config analysis.toml``.

Every command reads one TOML file (data schema, design, sensitivity grid,
bootstrap, amplification and output settings); flags override config keys.
Artifacts are written to the output directory and are byte-identical across
reruns with the same config and seed. Diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .amplification import (
    CALIBRATION_CSV_COLUMNS,
    calibrate,
    contour_grid,
    max_bias,
    rank_points,
    render_contour_svg,
)
from .bootstrap import BootstrapConfig, critical_lambda_ci, draw_replicates
from .dataset import (
    RowFilter,
    Schema,
    filter_rows,
    load_csv,
    standardize_covariates,
    tomllib,
    write_csv,
)
from .decomposition import decompose
from .exceptions import DecompError
from .logistic import DesignSpec
from .sensitivity import (
    ESTIMANDS,
    GRID_CSV_COLUMNS,
    bounds_at,
    bounds_over_lambda,
    critical_lambda,
    equivalence_threshold,
)
from .synthetic import DgpConfig, generate
from .weights import compute_rmpw, fit_group_propensities

SCHEMA_VERSION = "1.0"

DEFAULTS = {
    "data": {},
    "design": {"interactions": False},
    "analysis": {
        "allowability": True,
        "lambda_grid": [1.0, 1.05, 1.1, 1.25, 1.5, 2.0, 3.0],
        "lambda_max": 20.0,
        "tol": 1e-3,
        "threshold": 0.0,
        "eta": [1.0],
        "filters": [],
    },
    "bootstrap": {"B": 1000, "alpha": 0.05, "seed": 0, "stratify": False},
    "amplification": {"resolution": 100, "mode": "joint", "estimand": "reduction"},
    "output": {"dir": "output"},
    "simulate": {},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path, args=None) -> dict:
    """Config file merged over defaults, with command-line overrides applied."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise DecompError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise DecompError(f"invalid TOML in {path}: {exc}") from None
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise DecompError(f"unknown config sections: {sorted(unknown)}")
    cfg = _merge(DEFAULTS, raw)
    base = path.resolve().parent
    if "path" in cfg["data"]:
        cfg["data"]["path"] = str((base / cfg["data"]["path"]).resolve())
    cfg["output"]["dir"] = str((base / cfg["output"]["dir"]).resolve())
    if args is not None:
        _apply_overrides(cfg, args)
    return cfg


def _apply_overrides(cfg: dict, args) -> None:
    if getattr(args, "seed", None) is not None:
        cfg["bootstrap"]["seed"] = args.seed
        if cfg["simulate"] is not None:
            cfg["simulate"]["seed"] = args.seed
    if getattr(args, "bootstrap_b", None) is not None:
        cfg["bootstrap"]["B"] = args.bootstrap_b
    if getattr(args, "alpha", None) is not None:
        cfg["bootstrap"]["alpha"] = args.alpha
    if getattr(args, "lambda_max", None) is not None:
        cfg["analysis"]["lambda_max"] = args.lambda_max
    if getattr(args, "eta", None):
        cfg["analysis"]["eta"] = list(args.eta)
    if getattr(args, "no_allowability", False):
        cfg["analysis"]["allowability"] = False
    if getattr(args, "output_dir", None):
        cfg["output"]["dir"] = str(Path(args.output_dir).resolve())
    filters = list(cfg["analysis"].get("filters", []))
    filters += [{"spec": s, "exclude": False} for s in getattr(args, "keep", None) or []]
    filters += [{"spec": s, "exclude": True} for s in getattr(args, "exclude", None) or []]
    cfg["analysis"]["filters"] = filters


def _sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def config_hash(cfg: dict) -> str:
    """Hash of the effective config; the output directory does not enter it."""
    view = {k: v for k, v in cfg.items() if k != "output"}
    return _sha256_bytes(json.dumps(view, sort_keys=True, separators=(",", ":")).encode())


def _log(msg: str) -> None:
    print(f"decompsens: {msg}", file=sys.stderr)


def _write_json(path: Path, obj) -> None:
    text = json.dumps(obj, indent=2, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def _write_csv(path: Path, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


class Analysis:
    """State shared by the analysis commands, built lazily and in a fixed order."""

    def __init__(self, cfg: dict, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg["output"]["dir"])
        a = cfg["analysis"]
        self.allowability = bool(a["allowability"])
        self.spec = DesignSpec(include_two_way_interactions=bool(cfg["design"]["interactions"]))
        b = cfg["bootstrap"]
        self.boot_cfg = BootstrapConfig(
            B=int(b["B"]), alpha=float(b["alpha"]), seed=int(b["seed"]), stratify=bool(b["stratify"])
        )
        self.lambda_max = float(a["lambda_max"])
        self.tol = float(a["tol"])
        self.bracket = (1.0, self.lambda_max)
        self.report: dict = {}
        self._load()

    def _load(self):
        data = self.cfg["data"]
        if "path" not in data:
            raise DecompError("config [data] section needs a 'path'")
        schema = Schema.from_mapping(data)
        raw, load_report = load_csv(data["path"], schema)
        filters = []
        for f in self.cfg["analysis"]["filters"]:
            rf = RowFilter.parse(f["spec"], exclude=bool(f.get("exclude", False)))
            before = raw.n
            raw = filter_rows(raw, rf)
            filters.append({"filter": str(rf), "rows_before": before, "rows_after": raw.n})
            _log(f"filter {rf}: {before} -> {raw.n} rows")
        self.raw = raw
        # standardizing is an affine change of covariates: fitted probabilities,
        # weights and bounds are unchanged, and calibration needs the scale
        self.ds = standardize_covariates(raw)
        self.data_sha256 = _sha256_bytes(Path(data["path"]).read_bytes())
        self.report["data"] = {
            **load_report.to_dict(),
            "n_analyzed": self.ds.n,
            "filters": filters,
            "cell_counts": {f"g{g}_z{z}": c for (g, z), c in self.ds.cell_counts().items()},
            "allowable": list(self.ds.allowable_names),
            "nonallowable": list(self.ds.nonallowable_names),
        }

    def metadata(self) -> dict:
        return {
            "tool_version": __version__,
            "command": self.command,
            "config_sha256": config_hash(self.cfg),
            "data_sha256": self.data_sha256,
            "seed": self.boot_cfg.seed,
            "B": self.boot_cfg.B,
            "alpha": self.boot_cfg.alpha,
            "allowability": self.allowability,
            "interactions": self.spec.include_two_way_interactions,
            "lambda_max": self.lambda_max,
            "tol": self.tol,
        }

    def fit(self):
        self.gp = fit_group_propensities(self.ds, self.spec, allowability=self.allowability)
        self.weights = compute_rmpw(self.ds, self.gp)
        self.estimate = decompose(self.ds, self.weights)
        _log(f"fitting {self.boot_cfg.B} bootstrap replicates")
        self.reps = draw_replicates(self.ds, self.spec, self.boot_cfg, self.allowability)
        if self.reps.n_failed:
            _log(f"{self.reps.n_failed} bootstrap replicates failed and were dropped")
        at1 = self.reps.result(1.0)
        est = self.estimate
        values = {"tau": est.tau, "mu_r0": est.mu_r0_hat, "reduction": est.reduction, "residual": est.residual}
        self.report["decomposition"] = {
            "mu1": est.mu1,
            "mu0": est.mu0,
            **{
                k: {"estimate": v, "sd": at1.sd(k), "ci": list(at1.interval(k))}
                for k, v in values.items()
            },
        }
        self.report["diagnostics"] = {
            "weights": self.weights.diagnostics(),
            "models": {"e1": self.gp.model_e1.to_dict(), "e0": self.gp.model_e0.to_dict()},
        }
        self.report["bootstrap"] = {
            "B": self.boot_cfg.B,
            "alpha": self.boot_cfg.alpha,
            "stratify": self.boot_cfg.stratify,
            "failed_replicates": self.reps.n_failed,
            "quantile_rule": self.boot_cfg.quantile_rule,
        }

    def sensitivity(self):
        a = self.cfg["analysis"]
        grid = sorted({float(v) for v in a["lambda_grid"]})
        rows = []
        for b in bounds_over_lambda(self.ds, self.weights, grid):
            r = self.reps.result(b.lam)
            d = b.to_dict()
            d["mu_r0_ci"] = list(r.interval("mu_r0"))
            d["reduction_ci"] = list(r.interval("reduction"))
            d["residual_ci"] = list(r.interval("residual"))
            rows.append(d)
        self.grid_rows = rows
        thr = float(a["threshold"])
        self.critical = {}
        crit_report = {}
        for est in ESTIMANDS:
            point = getattr(self.estimate, est)
            pc = critical_lambda(self.ds, self.weights, est, thr, self.bracket, self.tol)
            cc = critical_lambda_ci(
                self.ds, self.spec, self.boot_cfg, est, thr, self.bracket, self.tol,
                self.allowability, replicates=self.reps, point=point,
            )
            self.critical[est] = pc
            crit_report[est] = {"point": pc.to_dict(), "ci": cc.to_dict()}
        eq = []
        for eta in a["eta"]:
            thr_eta = equivalence_threshold(self.estimate.tau, float(eta))
            pc = critical_lambda(self.ds, self.weights, "residual", thr_eta, self.bracket, self.tol)
            cc = critical_lambda_ci(
                self.ds, self.spec, self.boot_cfg, "residual", thr_eta, self.bracket, self.tol,
                self.allowability, replicates=self.reps, point=self.estimate.residual,
            )
            eq.append({"eta": float(eta), "threshold": thr_eta, "point": pc.value, "ci": cc.value})
        self.report["sensitivity"] = {"lambda_grid": rows, "critical": crit_report, "equivalence": eq}

    def calibration(self):
        amp = self.cfg["amplification"]
        estimand = amp["estimand"]
        if estimand not in ESTIMANDS:
            raise DecompError(f"amplification estimand must be one of {ESTIMANDS}")
        critical_biases = {}
        for est, crit in self.critical.items():
            lam = crit.value if crit.found else self.lambda_max
            critical_biases[est] = {
                "lambda": lam,
                "lambda_found": crit.found,
                "max_bias": max_bias(bounds_at(self.ds, self.weights, lam), self.estimate.mu_r0_hat),
            }
        points, notes = calibrate(self.ds, self.gp, self.spec, self.allowability, amp["mode"])
        for note in notes:
            _log(note)
        self.points = rank_points(points)
        cb = critical_biases[estimand]["max_bias"]
        self.grid = None
        if cb > 0:
            self.grid = contour_grid(cb, self.points, int(amp["resolution"]))
        else:
            notes.append(f"{estimand}: critical bias is zero, no contour drawn")
            _log(notes[-1])
        self.report["calibration"] = {
            "mode": amp["mode"],
            "estimand": estimand,
            "critical_bias": critical_biases,
            "points": [dict(zip(CALIBRATION_CSV_COLUMNS, p.row())) for p in self.points],
            "notes": notes,
            "contour": None if self.grid is None else self.grid.to_dict(),
        }

    def write(self, emit_weights=False):
        self.out.mkdir(parents=True, exist_ok=True)
        report = {"schema_version": SCHEMA_VERSION, "metadata": self.metadata(), **self.report}
        _write_json(self.out / "report.json", report)
        written = ["report.json"]
        _write_csv(self.out / "bootstrap_replicates.csv", self.reps.result(1.0).replicate_rows())
        written.append("bootstrap_replicates.csv")
        if hasattr(self, "grid_rows"):
            _write_csv(
                self.out / "lambda_grid.csv",
                [GRID_CSV_COLUMNS] + [[r[c] for c in GRID_CSV_COLUMNS] for r in self.grid_rows],
            )
            written.append("lambda_grid.csv")
        if hasattr(self, "points"):
            _write_csv(self.out / "calibration.csv", [CALIBRATION_CSV_COLUMNS] + [p.row() for p in self.points])
            written.append("calibration.csv")
            if self.grid is not None:
                est = self.report["calibration"]["estimand"]
                title = f"Bias contour: {est} (critical bias {self.grid.critical_bias:.4g})"
                (self.out / "contour.svg").write_text(
                    render_contour_svg(self.grid, self.points, title), encoding="utf-8"
                )
                bias = self.grid.bias
                rows = [("delta_u", "beta_u", "bias", "killer")]
                for i, b in enumerate(self.grid.beta_axis):
                    for j, d in enumerate(self.grid.delta_axis):
                        rows.append((d, b, bias[i, j], int(bias[i, j] > self.grid.critical_bias)))
                _write_csv(self.out / "contour_grid.csv", rows)
                written += ["contour.svg", "contour_grid.csv"]
        if emit_weights:
            w = self.weights
            rows = [("row_id", "z", "y", "e1_hat", "e0_hat", "w")]
            for k, i in enumerate(w.unit_ids):
                rows.append((int(self.ds.row_ids[i]), int(self.ds.z[i]), self.ds.y[i], w.e1_hat[k], w.e0_hat[k], w.w[k]))
            _write_csv(self.out / "weights.csv", rows)
            written.append("weights.csv")
        return written


def run_analysis(cfg: dict, command: str, emit_weights: bool = False) -> dict:
    """Run ``decompose``, ``sensitivity`` or ``calibrate`` and write artifacts; returns the report."""
    an = Analysis(cfg, command)
    an.fit()
    if command in ("sensitivity", "calibrate"):
        an.sensitivity()
    if command == "calibrate":
        an.calibration()
    written = an.write(emit_weights)
    _log(f"wrote {', '.join(written)} to {an.out}")
    return {"schema_version": SCHEMA_VERSION, "metadata": an.metadata(), **an.report}


def run_simulate(cfg: dict) -> dict:
    """Draw a synthetic dataset; writes ``dataset.csv`` and ``truth.json``."""
    dgp = DgpConfig.from_dict(cfg["simulate"])
    sample = generate(dgp)
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    ds = sample.dataset
    if dgp.hidden:
        # keep the confounder on file for oracle checks; it is not a covariate
        ds = ds.replace(aux={"u_hidden": sample.u})
    write_csv(ds, out / "dataset.csv")
    truth = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "config": dgp.to_dict(),
        "truth": sample.truth.to_dict(),
    }
    _write_json(out / "truth.json", truth)
    _log(f"wrote dataset.csv ({ds.n} rows) and truth.json to {out}")
    return truth


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="TOML analysis config")
    p.add_argument("--seed", type=int, help="override bootstrap (and simulation) seed")
    p.add_argument("--output-dir", help="override [output] dir")


def _analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bootstrap-b", type=int, help="number of bootstrap replicates")
    p.add_argument("--alpha", type=float, help="two-sided level of bootstrap intervals")
    p.add_argument("--lambda-max", type=float, help="upper end of the critical-lambda search")
    p.add_argument("--eta", type=float, action="append", help="equivalence reduction share (repeatable)")
    p.add_argument("--no-allowability", action="store_true", help="condition the G=0 model on all covariates")
    p.add_argument("--exclude", action="append", metavar="FILTER", help="drop rows matching e.g. 'site==3'")
    p.add_argument("--emit-weights", action="store_true", help="also write weights.csv")


ANALYSIS_COMMANDS = ("decompose", "sensitivity", "calibrate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decompsens", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "decompose": "point estimates, bootstrap SDs and intervals",
        "sensitivity": "bounds over the lambda grid and critical lambdas",
        "calibrate": "calibration table and bias contour plot",
    }
    for name in ANALYSIS_COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        _common(p)
        _analysis_flags(p)
    p = sub.add_parser("simulate", help="draw a synthetic dataset with known truths")
    _common(p)
    p = sub.add_parser("filter", help="restrict rows, then run an analysis command")
    _common(p)
    _analysis_flags(p)
    p.add_argument("--keep", action="append", metavar="FILTER", help="keep rows matching e.g. 'site==3'")
    p.add_argument("--then", choices=ANALYSIS_COMMANDS, default="decompose", help="command to run afterwards")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args)
        if args.command == "simulate":
            run_simulate(cfg)
        elif args.command == "filter":
            if not cfg["analysis"]["filters"]:
                raise DecompError("filter needs at least one --keep or --exclude")
            run_analysis(cfg, args.then, args.emit_weights)
        else:
            run_analysis(cfg, args.command, args.emit_weights)
    except (DecompError, ValueError) as exc:
        _log(f"error: {exc}")
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
