"""Configured end-to-end runs: load, reduce covariates, fit, select and report."""

from __future__ import annotations

import configparser
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import FitSettings, analyse
from .cv import KINDS
from .lasso import INVERSE_SQRT_WEIGHTS
from .mctest import RANK, STUDENTISED, interaction_test_matrix
from .model import FAMILIES, SATURATION, ModelSpec, ThetaLayout, read_raster, write_raster
from .pattern import MultiTypePattern, Window, read_pattern_csv
from .pca import pca_covariates
from .report import abundance_order, write_matrix_csv, write_pgm, write_rows
from .simulate import ThomasSpec, sim_gibbs_fixed_n, sim_poisson, sim_thomas

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """Failure inside one pipeline stage; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# section -> key -> (parser, default); a default of None means optional
def _floats(s):
    return tuple(float(v) for v in s.replace(",", " ").split())


def _words(s):
    return tuple(s.replace(",", " ").split())


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


SCHEMA = {
    "paths": {
        "pattern": (str, ""),
        "covariates": (_words, ()),
        "output": (str, ""),
        "window": (_floats, None),
    },
    "model": {
        "family": (str, SATURATION),
        "ranges": (_floats, (7.0, 15.0)),
        "inter_ranges": (_floats, None),
        "saturation": (str, "auto"),
        "epsilon": (float, 0.01),
        "pca_components": (int, 0),
        "dummy_factor": (float, 4.0),
        "dummy_floor": (int, 500),
        "r_bor": (float, None),
    },
    "lasso": {
        "n_gamma": (int, 100),
        "ratio": (float, 1e-3),
        "tol": (float, 1e-7),
        "kkt_tol": (float, 1e-5),
        "max_iter": (int, 500),
        "weight_power": (float, INVERSE_SQRT_WEIGHTS),
    },
    "cv": {
        "enabled": (_bool, True),
        "kx": (int, 4),
        "ky": (int, 4),
        "kinds": (_words, KINDS),
        "type_weights": (str, "none"),
        "regenerate_dummies": (_bool, False),
        "workers": (int, 1),
    },
    "mc": {
        "enabled": (_bool, False),
        "bandwidth": (float, 30.0),
        "s": (int, 999),
        "grid": (_floats, (0.5, 15.0, 30)),
        "cell": (float, 2.0),
        "test": (str, STUDENTISED),
    },
    "run": {
        "seed": (int, 0),
    },
}


@dataclass
class PipelineConfig:
    values: dict  # section -> key -> parsed value
    source: Path | None = None

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @classmethod
    def from_dict(cls, sections: dict, source=None, base: Path | None = None) -> "PipelineConfig":
        unknown = set(sections) - set(SCHEMA)
        if unknown:
            raise ValueError(f"unknown section(s): {', '.join(sorted(unknown))}")
        values = {}
        for sec, keys in SCHEMA.items():
            given = dict(sections.get(sec, {}))
            bad = set(given) - set(keys)
            if bad:
                raise ValueError(f"unknown key(s) in [{sec}]: {', '.join(sorted(bad))}")
            values[sec] = {}
            for key, (conv, default) in keys.items():
                if key in given:
                    raw = given[key]
                    try:
                        values[sec][key] = conv(raw) if isinstance(raw, str) else raw
                    except ValueError as err:
                        raise ValueError(f"[{sec}] {key}: {err}") from None
                else:
                    values[sec][key] = default
        cfg = cls(values, source)
        if base is not None:
            cfg._resolve(base)
        cfg.validate()
        return cfg

    @classmethod
    def read(cls, path) -> "PipelineConfig":
        path = Path(path)
        parser = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=(";",))
        parser.optionxform = str  # keys are case sensitive
        with open(path) as fh:
            parser.read_file(fh)
        return cls.from_dict({s: dict(parser[s]) for s in parser.sections()}, path, path.parent)

    def _resolve(self, base: Path) -> None:
        p = self.values["paths"]
        if p["pattern"]:
            p["pattern"] = str((base / p["pattern"]).resolve())
        p["covariates"] = tuple(str((base / c).resolve()) for c in p["covariates"])
        if p["output"]:
            p["output"] = str((base / p["output"]).resolve())

    def validate(self) -> None:
        p, m, la, cv, mc = (self.values[s] for s in ("paths", "model", "lasso", "cv", "mc"))
        if not p["pattern"]:
            raise ValueError("[paths] pattern is required")
        if not p["output"]:
            raise ValueError("[paths] output is required")
        for f in (p["pattern"],) + tuple(p["covariates"]):
            if not Path(f).is_file():
                raise ValueError(f"file not found: {f}")
        if p["window"] is not None and len(p["window"]) != 4:
            raise ValueError("[paths] window needs x_min x_max y_min y_max")
        if m["family"] not in FAMILIES:
            raise ValueError(f"[model] family must be one of {FAMILIES}")
        for key in ("ranges", "inter_ranges"):
            r = m[key]
            if r is None:
                continue
            if not r or any(v <= 0 for v in r) or any(b <= a for a, b in zip(r, r[1:])):
                raise ValueError(f"[model] {key} must be positive and increasing")
        sat = m["saturation"]
        if sat != "auto" and not (sat.isdigit() and int(sat) >= 1):
            raise ValueError("[model] saturation must be 'auto' or a positive integer")
        if not 0 < m["epsilon"] < 1:
            raise ValueError("[model] epsilon must lie in (0, 1)")
        if not 0 <= m["pca_components"] <= len(p["covariates"]):
            raise ValueError("[model] pca_components must be between 0 and the number of covariates")
        if m["dummy_factor"] <= 0 or m["dummy_floor"] < 1:
            raise ValueError("[model] dummy_factor and dummy_floor must be positive")
        if m["r_bor"] is not None and m["r_bor"] < 0:
            raise ValueError("[model] r_bor must be non-negative")
        if la["n_gamma"] < 1 or not 0 < la["ratio"] < 1 or la["tol"] <= 0 or la["kkt_tol"] <= 0:
            raise ValueError("[lasso] n_gamma >= 1, 0 < ratio < 1 and positive tolerances required")
        if la["max_iter"] < 1:
            raise ValueError("[lasso] max_iter must be positive")
        if cv["kx"] < 1 or cv["ky"] < 1 or cv["kx"] * cv["ky"] < 2:
            raise ValueError("[cv] needs at least two quadrats")
        if not cv["kinds"] or any(k not in KINDS for k in cv["kinds"]):
            raise ValueError(f"[cv] kinds must be drawn from {KINDS}")
        if cv["type_weights"] not in ("none", "intensity"):
            raise ValueError("[cv] type_weights must be none or intensity")
        if cv["workers"] < 1:
            raise ValueError("[cv] workers must be positive")
        if mc["s"] < 19:
            raise ValueError("[mc] s must be at least 19")
        if mc["test"] not in (STUDENTISED, RANK):
            raise ValueError(f"[mc] test must be {STUDENTISED} or {RANK}")
        g = mc["grid"]
        if len(g) != 3 or not 0 < g[0] < g[1] or g[2] < 2 or g[2] != int(g[2]):
            raise ValueError("[mc] grid is 'r_min r_max n' with 0 < r_min < r_max and n >= 2")
        if mc["bandwidth"] <= 0 or mc["cell"] <= 0:
            raise ValueError("[mc] bandwidth and cell must be positive")

    def to_ini(self) -> str:
        """Every value, defaults included, in a form :meth:`read` accepts."""
        def fmt(v):
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, tuple):
                return " ".join(fmt(x) for x in v)
            if isinstance(v, float):
                return repr(v)
            return str(v)

        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            for key in keys:
                v = self.values[sec][key]
                if v is not None:
                    lines.append(f"{key} = {fmt(v)}")
            lines.append("")
        return "\n".join(lines)


@dataclass
class RunReport:
    output: Path
    gammas: dict  # rule -> selected gamma
    matrices: dict  # rule -> p x p, abundance order
    order: np.ndarray  # matrix row k is input type order[k]
    labels: list
    coefficients: dict  # rule -> p x (1 + n_covariates)
    diagnostics: dict
    timings: dict = field(default_factory=dict)
    files: list = field(default_factory=list)


class _Stages:
    def __init__(self):
        self.timings = {}

    def run(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kw)
        except StageError:
            raise
        except Exception as err:  # noqa: BLE001 - every failure gets its stage tag
            raise StageError(name, f"{type(err).__name__}: {err}") from err
        self.timings[name] = time.perf_counter() - t0
        log.info("stage %s done in %.1fs", name, self.timings[name])
        return out


def _window(cfg, rasters):
    w = cfg["paths"]["window"]
    if w is not None:
        return Window(*w)
    if rasters:
        r = rasters[0]
        return Window(r.x0, r.x0 + r.nx * r.dx, r.y0, r.y0 + r.ny * r.dy)
    return None


def _load(cfg):
    rasters = [read_raster(f) for f in cfg["paths"]["covariates"]]
    pattern = read_pattern_csv(cfg["paths"]["pattern"], _window(cfg, rasters))
    empty = [k + 1 for k in range(pattern.p) if pattern.counts[k] == 0]
    if empty:
        raise ValueError(f"types without points: {empty}")
    for r in rasters:
        if not r.covers(pattern.window):
            raise ValueError(f"raster {r.name} does not cover the window")
    return pattern, rasters


def _spec(cfg, pattern, n_cov):
    m = cfg["model"]
    spec = ModelSpec.build(pattern.p, m["ranges"], m["family"],
                           saturation=1 if m["saturation"] == "auto" else int(m["saturation"]),
                           n_covariates=n_cov, inter_ranges=m["inter_ranges"], epsilon=m["epsilon"])
    if m["saturation"] == "auto" and m["family"] == SATURATION:
        spec = spec.with_auto_saturation(pattern.counts, pattern.window.area())
    return spec


def run_pipeline(config: PipelineConfig, fit_only: bool = False) -> RunReport:
    """Run every stage and write the reports into the configured output directory.

    Files written already stay in place when a later stage fails.  Outputs
    depend only on the configuration and seed.
    """
    cfg = config
    st = _Stages()
    out = Path(cfg["paths"]["output"])
    files = []

    def emit(name):
        files.append(name)
        return out / name

    st.run("output", out.mkdir, parents=True, exist_ok=True)
    seed = cfg["run"]["seed"]
    emit("config.ini").write_text(cfg.to_ini())

    pattern, rasters = st.run("load", _load, cfg)
    covariates = rasters
    k = cfg["model"]["pca_components"]
    if k:
        pcs = st.run("pca", pca_covariates, rasters, k)
        covariates = pcs.fields
        rows = [[f"pc{c + 1}", float(pcs.explained[c])] + [float(v) for v in pcs.loadings[c]]
                for c in range(k)]
        write_rows(emit("pca.csv"), ["component", "cumulative_variance"] + list(pcs.kept), rows)
    spec = st.run("model", _spec, cfg, pattern, len(covariates))

    m, la, cvc = cfg["model"], cfg["lasso"], cfg["cv"]
    settings = FitSettings(dummy_factor=m["dummy_factor"], dummy_floor=m["dummy_floor"], r_bor=m["r_bor"],
                           n_gamma=la["n_gamma"], ratio=la["ratio"], tol=la["tol"], kkt_tol=la["kkt_tol"],
                           max_iter=la["max_iter"], weight_power=la["weight_power"], kx=cvc["kx"],
                           ky=cvc["ky"], kinds=tuple(cvc["kinds"]), cv=cvc["enabled"] and not fit_only,
                           workers=cvc["workers"],
                           type_weights=None if cvc["type_weights"] == "none" else cvc["type_weights"],
                           regenerate_dummies=cvc["regenerate_dummies"])
    res = st.run("fit", analyse, pattern, spec, covariates, settings, seed)

    labels = list(pattern.labels) if pattern.labels else [str(t + 1) for t in range(pattern.p)]
    order = abundance_order(pattern.counts)
    ordered = [labels[t] for t in order]
    write_rows(emit("type_order.csv"), ["position", "type", "label", "count"],
               [[pos + 1, int(t) + 1, labels[t], int(pattern.counts[t])] for pos, t in enumerate(order)])
    res.path.to_csv(emit("path.csv"))
    for kind, cvr in res.cv.items():
        cvr.to_csv(emit(f"cv_{kind}.csv"))
        cvr.summary_csv(emit(f"cv_{kind}_summary.csv"))

    matrices, coefs, gamma_rows, coef_rows = {}, {}, [], []
    names = ["intercept"] + [c.name or f"z{i + 1}" for i, c in enumerate(covariates)]
    for rule, mat in res.matrices.items():
        mat = np.asarray(mat)[np.ix_(order, order)].astype(np.int64)
        matrices[rule] = mat
        write_matrix_csv(mat, emit(f"matrix_{rule}.csv"), ordered)
        write_pgm(mat, emit(f"matrix_{rule}.pgm"))
        fit = res.fits[rule]
        gamma_rows.append([rule, float(res.gammas[rule]), res.path.index_of(res.gammas[rule]) + 1,
                           int(fit.converged)])
        coefs[rule] = np.array([res.design.layout.alpha(fit.theta, t) for t in range(pattern.p)])
        for t in order:
            coef_rows += [[rule, labels[t], nm, float(v)] for nm, v in zip(names, coefs[rule][t])]
    write_rows(emit("gammas.csv"), ["rule", "gamma", "grid_index", "converged"], gamma_rows)
    write_rows(emit("coefficients.csv"), ["rule", "type", "term", "value"], coef_rows)

    conv = np.array([f.converged for f in res.path.fits])
    diagnostics = {
        "seed": seed,
        "n_points": len(pattern),
        "n_rows": int(res.design.n_rows),
        "n_dummies": int(np.sum(~res.design.is_data)),
        "gamma_max": float(res.path.gamma_max),
        "path_converged_fraction": float(conv.mean()),
        "border_loss_fraction": float(1 - res.design.eroded.area() / pattern.window.area()),
        "cv_loss_fraction": float(res.partition.loss_fraction) if res.partition is not None else float("nan"),
        "cv_dummies": "per_fold" if cfg["cv"]["regenerate_dummies"] else "shared",
    }
    for kind, cvr in res.cv.items():
        diagnostics[f"cv_{kind}_dropped_folds"] = len(cvr.dropped)
    if res.design.warnings:
        diagnostics["design_warnings"] = " | ".join(res.design.warnings)

    mc = cfg["mc"]
    if mc["enabled"] and not fit_only:
        lo, hi, n = mc["grid"]
        r = np.linspace(lo, hi, int(n))
        mres = st.run("mctest", interaction_test_matrix, pattern, r, s=mc["s"], bandwidth=mc["bandwidth"],
                      cell=mc["cell"], test=mc["test"], seed=seed)
        pv = mres.pvalues[np.ix_(order, order)]
        ind = mres.indicators[np.ix_(order, order)].astype(np.int64)
        write_matrix_csv(pv, emit(f"mc_{mc['test']}_pvalues.csv"), ordered)
        write_matrix_csv(ind, emit(f"mc_{mc['test']}_indicators.csv"), ordered)
        write_pgm(ind, emit(f"mc_{mc['test']}_indicators.pgm"))
        matrices[f"mc_{mc['test']}"] = ind

    write_rows(emit("diagnostics.csv"), ["key", "value"], list(diagnostics.items()))
    return RunReport(out, dict(res.gammas), matrices, order, labels, coefs, diagnostics, st.timings, files)


def write_pca(rasters, k: int, out) -> list:
    """Component rasters plus a variance/loading table; returns the written names."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    pcs = pca_covariates(rasters, k)
    names = []
    for f in pcs.fields:
        write_raster(f, out / f"{f.name}.txt")
        names.append(f"{f.name}.txt")
    rows = [[f"pc{c + 1}", float(pcs.explained[c])] + [float(v) for v in pcs.loadings[c]] for c in range(k)]
    write_rows(out / "pca.csv", ["component", "cumulative_variance"] + list(pcs.kept), rows)
    return names + ["pca.csv"]


# ---------------------------------------------------------------------------
# simulation parameter files

SIM_FAMILIES = FAMILIES + ("poisson", "thomas")
_SIM_KEYS = {"family", "window", "counts", "ranges", "inter_ranges", "saturation", "sweeps", "mu", "sigma"}


@dataclass
class SimParams:
    family: str
    window: Window
    counts: np.ndarray
    spec: ModelSpec | None = None
    theta: np.ndarray | None = None
    truth: np.ndarray | None = None
    sweeps: int = 500
    mu: float = 5.0
    sigma: float = 1.0


def read_sim_params(path) -> SimParams:
    """``[model]`` plus, for Gibbs families, ``[theta]`` entries ``alpha.i`` and ``beta.i.j`` (1-based)."""
    parser = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=(";",))
    parser.optionxform = str
    with open(path) as fh:
        parser.read_file(fh)
    extra = set(parser.sections()) - {"model", "theta"}
    if extra or "model" not in parser:
        raise ValueError(f"{path}: expected sections [model] and optionally [theta]")
    m = dict(parser["model"])
    bad = set(m) - _SIM_KEYS
    if bad:
        raise ValueError(f"unknown key(s) in [model]: {', '.join(sorted(bad))}")
    family = m.get("family", SATURATION)
    if family not in SIM_FAMILIES:
        raise ValueError(f"family must be one of {SIM_FAMILIES}")
    w = _floats(m.get("window", ""))
    if len(w) != 4:
        raise ValueError("window needs x_min x_max y_min y_max")
    counts = np.array([int(v) for v in _words(m.get("counts", ""))], dtype=np.int64)
    if not len(counts) or counts.min() < 0:
        raise ValueError("counts must list one non-negative count per type")
    out = SimParams(family, Window(*w), counts, sweeps=int(m.get("sweeps", 500)),
                    mu=float(m.get("mu", 5.0)), sigma=float(m.get("sigma", 1.0)))
    if family in FAMILIES:
        p = len(counts)
        inter = _floats(m["inter_ranges"]) if "inter_ranges" in m else None
        out.spec = ModelSpec.build(p, _floats(m.get("ranges", "")), family,
                                   saturation=int(m.get("saturation", 1)), inter_ranges=inter)
        alpha, beta = {}, {}
        for key, val in (parser["theta"].items() if "theta" in parser else ()):
            parts = key.split(".")
            idx = [int(v) - 1 for v in parts[1:]]
            if parts[0] == "alpha" and len(idx) == 1:
                alpha[idx[0]] = _floats(val)
            elif parts[0] == "beta" and len(idx) == 2:
                beta[tuple(sorted(idx))] = _floats(val)
            else:
                raise ValueError(f"bad [theta] key {key!r}")
        truth = np.zeros((p, p), bool)
        for (i, j), b in beta.items():
            truth[i, j] = truth[j, i] = any(v != 0 for v in b)
        out.theta = ThetaLayout(out.spec).theta(alpha, beta)
        out.truth = truth
    else:
        out.truth = np.eye(len(counts), dtype=bool) if family == "thomas" else np.zeros((len(counts),) * 2, bool)
    return out


def simulate_from_params(params: SimParams, rng):
    w = params.window
    if params.family in FAMILIES:
        return sim_gibbs_fixed_n(params.spec, params.theta, params.counts, w, rng, sweeps=params.sweeps)
    if params.family == "poisson":
        parts = [sim_poisson(w, rng, n=int(n)) for n in params.counts]
    else:
        parts = [sim_thomas(w, ThomasSpec(params.mu, params.sigma, n_parents=max(1, round(n / params.mu))), rng)
                 for n in params.counts]
    return MultiTypePattern.from_subpatterns(parts, w)
