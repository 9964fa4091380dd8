"""Experiment orchestration: JSON configuration, deterministic parallel
Monte Carlo execution, canned desk-scale scenarios, and byte-reproducible
reports.

A configuration document fully determines every output byte: replicas are
dispatched in fixed blocks of 256 to per-replica counter-based streams, so
the worker count never changes a result; reports carry no timestamps; all
floats are written with round-trip repr.  Workers rebuild the model from
the JSON document, so nothing unpicklable crosses process boundaries.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis as an
from .analysis import _line_fit  # shared slope-with-error helper
from .kernels import (
    Domain,
    KernelSpec,
    kernel_deriv_l1,
    kernel_space_l2,
    time_integrated_l2,
)
from .noise import SeedSpec
from .solver import (
    DomainSpec,
    DriftSpec,
    GridAlignmentError,
    InitialCondition,
    ModelSpec,
    Scheme,
    SigmaSpec,
    SpaceTimeGrid,
    simulate,
    simulate_ensemble,
)

__all__ = [
    "AnalysisRequest",
    "ConfigError",
    "ExperimentAbortedError",
    "ExperimentConfig",
    "Report",
    "SCHEMA_VERSION",
    "build_config",
    "parse_config",
    "preset",
    "preset_document",
    "preset_names",
    "run_experiment",
]

SCHEMA_VERSION = 1
_BLOCK = 256  # replicas per dispatch block, fixed so worker count is moot
_FAILURE_BUDGET = 0.01


class ConfigError(ValueError):
    """Aggregated configuration problems, one bullet per violation."""

    def __init__(self, issues):
        self.issues = list(issues)
        lines = "\n".join(f"  - {msg}" for msg in self.issues)
        super().__init__(f"{len(self.issues)} problem(s) in configuration:\n{lines}")


class ExperimentAbortedError(RuntimeError):
    """Too many replicas failed for the statistics to be trusted."""


# --- coefficient libraries ---------------------------------------------------
# named, JSON-addressable building blocks; all callables are module-level
# (or partials of module-level functions) so configs rebuild identically
# in worker processes

def _sigma_sin_modulated(amplitude, x, u):
    return 1.0 + amplitude * np.sin(u)


def _sigma_sin_squared(base, amplitude, x, u):
    return base + amplitude * np.sin(u) ** 2


def _sigma_inverse_sqrt(x, u):
    return (1.0 + x * x) ** -0.5 + 0.0 * u


def _drift_scaled_sin(scale, u):
    return scale * np.sin(u)


def _build_sigma(doc, domain: DomainSpec) -> SigmaSpec:
    kind = doc.get("kind")
    if kind == "constant":
        return SigmaSpec.constant(float(doc["value"]))
    if kind == "sin_modulated":
        a = float(doc["amplitude"])
        if not 0 < a < 1:
            raise ValueError("sin_modulated amplitude must lie in (0, 1)")
        return SigmaSpec.custom(
            functools.partial(_sigma_sin_modulated, a), floor_k=(1.0 - a) ** 2, lipschitz_l1=a
        )
    if kind == "sin_squared":
        base, amp = float(doc["base"]), float(doc["amplitude"])
        if base <= 0 or amp < 0:
            raise ValueError("sin_squared needs base > 0 and amplitude >= 0")
        return SigmaSpec.custom(
            functools.partial(_sigma_sin_squared, base, amp),
            floor_k=base * base,
            lipschitz_l1=amp,
        )
    if kind == "inverse_sqrt_x":
        # bounded by 1, constant in the state; the variance floor is set by
        # the far edge of the spatial window
        lo, hi = domain.interval()
        edge = max(abs(lo), abs(hi))
        return SigmaSpec.custom(
            _sigma_inverse_sqrt, floor_k=1.0 / (1.0 + edge * edge), lipschitz_l1=0.0
        )
    raise ValueError(f"unknown sigma kind {kind!r}")


def _build_drift(doc) -> DriftSpec:
    kind = doc.get("kind")
    if kind == "zero":
        return DriftSpec.zero()
    if kind == "burgers":
        return DriftSpec.burgers()
    if kind == "scaled_sin":
        scale = float(doc["scale"])
        return DriftSpec.lipschitz(functools.partial(_drift_scaled_sin, scale), abs(scale))
    raise ValueError(f"unknown drift kind {kind!r}")


def _build_initial(doc) -> InitialCondition:
    kind = doc.get("kind")
    if kind == "zero":
        return InitialCondition.zero()
    if kind == "sine":
        return InitialCondition.sine(float(doc.get("amplitude", 1.0)), int(doc.get("mode", 1)))
    if kind == "gaussian_bump":
        return InitialCondition.gaussian_bump(
            float(doc.get("amplitude", 1.0)),
            float(doc.get("width", 0.5)),
            float(doc.get("center", 0.0)),
        )
    raise ValueError(f"unknown initial profile kind {kind!r}")


def _build_domain(doc) -> DomainSpec:
    kind = doc.get("kind")
    if kind == "unit_interval":
        return DomainSpec.unit_interval()
    if kind == "whole_line":
        return DomainSpec.whole_line(float(doc["half_length"]))
    raise ValueError(f"unknown domain kind {kind!r}")


_PHI_LIBRARY = {
    "sin": an.sin_fn,
    "cos": an.cos_fn,
}


def _build_phi(name: str, gamma=None) -> an.TestFunction:
    if name in _PHI_LIBRARY:
        return _PHI_LIBRARY[name]()
    if name == "weierstrass":
        return an.weierstrass_fn(float(gamma))
    raise ValueError(f"unknown test function {name!r}")


# --- configuration -----------------------------------------------------------

_ANALYSIS_KINDS = ("hoelder", "besov", "smoothing", "aux-error", "kernel-check", "moments")


@dataclass(frozen=True)
class AnalysisRequest:
    index: int
    kind: str
    params: dict

    @property
    def band(self):
        b = self.params.get("band")
        return None if b is None else (float(b[0]), float(b[1]))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    model: ModelSpec
    grid: SpaceTimeGrid
    seed: int
    replicas: int
    probes: tuple
    analyses: tuple
    output_dir: str | None
    raw: dict

    @property
    def config_hash(self) -> str:
        """Hash of the document minus location-only keys, so moving the
        output directory never changes report content."""
        doc = {k: v for k, v in self.raw.items() if k not in ("output_dir",)}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def effective_probes(self) -> tuple:
        """Configured probes plus every probe an analysis needs, sorted."""
        wanted = set(self.probes)
        for req in self.analyses:
            wanted.update(_required_probes(req))
        return tuple(sorted(wanted))


def _required_probes(req: AnalysisRequest):
    p = req.params
    try:
        if req.kind == "hoelder":
            t0, x = float(p["base_time"]), float(p["x"])
            return [(t0, x)] + [(t0 + float(h), x) for h in p["lags"]]
        if req.kind in ("besov", "smoothing"):
            return [(float(p["t"]), float(p["x"]))]
    except (KeyError, TypeError, ValueError):
        return []  # the missing/bad parameter is reported separately
    return []


def _check_analysis(req: AnalysisRequest, grid: SpaceTimeGrid, issues):
    tag = f"analysis {req.index} ({req.kind})"
    p = req.params
    need = {
        "hoelder": ("p", "base_time", "x", "lags"),
        "besov": ("t", "x", "s"),
        "smoothing": ("t", "x", "phi", "m", "lags"),
        "aux-error": ("t", "x", "eps_set"),
        "kernel-check": ("domain", "x"),
        "moments": ("p_values",),
    }
    if req.kind not in need:
        issues.append(f"{tag}: unknown analysis kind (known: {', '.join(_ANALYSIS_KINDS)})")
        return
    missing = [k for k in need[req.kind] if k not in p]
    if missing:
        issues.append(f"{tag}: missing parameter(s) {', '.join(missing)}")
        return
    band = p.get("band")
    if band is not None and (len(band) != 2 or not band[0] <= band[1]):
        issues.append(f"{tag}: band must be [lo, hi] with lo <= hi")
    if grid is not None:
        try:
            for t, x in _required_probes(req):
                grid.time_index(t)
                grid.space_index(x)
        except GridAlignmentError as e:
            issues.append(f"{tag}: {e}")
    if req.kind == "hoelder" and len(p["lags"]) < 4:
        issues.append(f"{tag}: need at least 4 lags")
    if req.kind == "aux-error":
        t = float(p["t"])
        for eps in p["eps_set"]:
            if not 0 < float(eps) < t / 2:
                issues.append(f"{tag}: eps {eps} outside (0, t/2)")
        if grid is not None:
            try:
                grid.time_index(t)
                for eps in p["eps_set"]:
                    grid.time_index(float(eps))
                grid.space_index(float(p["x"]))
            except GridAlignmentError as e:
                issues.append(f"{tag}: {e}")
    if req.kind == "smoothing":
        try:
            _build_phi(p["phi"], p.get("gamma"))
        except (ValueError, TypeError) as e:
            issues.append(f"{tag}: {e}")
    if req.kind == "kernel-check" and p["domain"] not in ("unit_interval", "whole_line"):
        issues.append(f"{tag}: domain must be unit_interval or whole_line")


def build_config(doc: dict) -> ExperimentConfig:
    """Validate a configuration document, reporting every problem at once."""
    issues = []
    if not isinstance(doc, dict):
        raise ConfigError(["document root must be a JSON object"])
    if doc.get("schema") != SCHEMA_VERSION:
        issues.append(f"schema must be {SCHEMA_VERSION}, got {doc.get('schema')!r}")
    known = {
        "schema", "name", "seed", "replicas", "model", "grid",
        "probes", "analyses", "output_dir",
    }
    for key in sorted(set(doc) - known):
        issues.append(f"unknown top-level key {key!r}")

    name = str(doc.get("name", "custom"))
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        issues.append("seed must be an unsigned 64-bit integer")
        seed = 0
    replicas = doc.get("replicas", 1)
    if not isinstance(replicas, int) or replicas < 1:
        issues.append("replicas must be a positive integer")
        replicas = 1

    model = grid = None
    mdoc = doc.get("model")
    gdoc = doc.get("grid")
    if not isinstance(mdoc, dict):
        issues.append("missing model block")
    if not isinstance(gdoc, dict):
        issues.append("missing grid block")
    if isinstance(mdoc, dict) and isinstance(gdoc, dict):
        try:
            domain = _build_domain(mdoc.get("domain", {}))
            model = ModelSpec(
                domain,
                _build_drift(mdoc.get("drift", {})),
                _build_sigma(mdoc.get("sigma", {}), domain),
                _build_initial(mdoc.get("initial", {})),
                float(mdoc["horizon"]),
            )
            model.validate()
        except (KeyError, TypeError, ValueError) as e:
            issues.append(f"model: {e}")
            model = None
        if model is not None:
            try:
                grid = SpaceTimeGrid.for_domain(
                    model.domain,
                    int(gdoc["n_space"]),
                    float(gdoc["dt"]),
                    model.horizon_t,
                    Scheme(gdoc.get("scheme", "semi_implicit")),
                )
            except (KeyError, TypeError, ValueError) as e:
                issues.append(f"grid: {e}")

    probes = []
    for entry in doc.get("probes", []):
        try:
            t, x = float(entry[0]), float(entry[1])
        except (TypeError, ValueError, IndexError):
            issues.append(f"probe {entry!r}: not a (t, x) pair")
            continue
        if grid is not None:
            try:
                grid.time_index(t)
                grid.space_index(x)
            except GridAlignmentError as e:
                issues.append(f"probe ({t}, {x}): {e}")
        probes.append((t, x))

    analyses = []
    for i, adoc in enumerate(doc.get("analyses", [])):
        if not isinstance(adoc, dict) or "kind" not in adoc:
            issues.append(f"analysis {i}: must be an object with a 'kind'")
            continue
        req = AnalysisRequest(i, adoc["kind"], {k: v for k, v in adoc.items() if k != "kind"})
        _check_analysis(req, grid, issues)
        analyses.append(req)

    have_probes = set(probes)
    for req in analyses:
        have_probes.update(_required_probes(req))
    for req in analyses:
        if req.kind == "moments" and not have_probes:
            issues.append(f"analysis {req.index} (moments): no probes configured")

    if issues:
        raise ConfigError(issues)
    return ExperimentConfig(
        name, model, grid, seed, replicas, tuple(probes), tuple(analyses),
        doc.get("output_dir"), doc,
    )


def parse_config(text: str) -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"not valid JSON: {e}"]) from None
    return build_config(doc)


# --- presets -----------------------------------------------------------------

def _heat_dirichlet_hoelder():
    return {
        "schema": 1,
        "name": "heat-dirichlet-hoelder",
        "seed": 1105,
        "replicas": 10000,
        "model": {
            "domain": {"kind": "unit_interval"},
            "drift": {"kind": "zero"},
            "sigma": {"kind": "constant", "value": 1.0},
            "initial": {"kind": "sine", "amplitude": 0.2},
            "horizon": 0.08,
        },
        "grid": {"n_space": 128, "dt": 1e-4},
        "probes": [[0.06, 0.5]],
        "analyses": [
            {
                "kind": "hoelder",
                "p": 2.0,
                "base_time": 0.06,
                "x": 0.5,
                "lags": [0.002, 0.004, 0.008, 0.016],
                "band": [0.2, 0.3],
            },
            {"kind": "moments", "p_values": [2.0, 4.0]},
        ],
    }


def _burgers_whole_line():
    # bounded state-independent noise coefficient with tail decay tag q=20:
    # expected time regularity 1/4 - 1/(2q) = 0.225 for smooth initial data
    return {
        "schema": 1,
        "name": "burgers-whole-line",
        "seed": 41,
        "replicas": 4000,
        "model": {
            "domain": {"kind": "whole_line", "half_length": 3.0},
            "drift": {"kind": "burgers"},
            "sigma": {"kind": "inverse_sqrt_x", "integrability_q": 20},
            "initial": {"kind": "gaussian_bump", "amplitude": 0.8, "width": 0.5},
            "horizon": 0.12,
        },
        "grid": {"n_space": 384, "dt": 1e-4},
        "probes": [[0.1, 0.0]],
        "analyses": [
            {
                "kind": "hoelder",
                "p": 2.0,
                "base_time": 0.1,
                "x": 0.0,
                "lags": [0.0025, 0.005, 0.01, 0.02],
                "band": [0.175, 0.275],
            },
            {"kind": "moments", "p_values": [2.0, 4.0]},
        ],
    }


def _burgers_lipschitz_interval():
    return {
        "schema": 1,
        "name": "burgers-lipschitz-interval",
        "seed": 42,
        "replicas": 2000,
        "model": {
            "domain": {"kind": "unit_interval"},
            "drift": {"kind": "scaled_sin", "scale": 0.5},
            "sigma": {"kind": "sin_squared", "base": 0.5, "amplitude": 0.3},
            "initial": {"kind": "sine", "amplitude": 0.3},
            "horizon": 0.07,
        },
        "grid": {"n_space": 128, "dt": 5e-5},
        "probes": [[0.05, 0.5]],
        "analyses": [
            {
                "kind": "hoelder",
                "p": 2.0,
                "base_time": 0.05,
                "x": 0.5,
                "lags": [0.002, 0.004, 0.008, 0.016],
                "band": [0.2, 0.3],
            },
            {"kind": "moments", "p_values": [2.0]},
        ],
    }


def _heat_whole_line():
    return {
        "schema": 1,
        "name": "heat-whole-line",
        "seed": 43,
        "replicas": 4000,
        "model": {
            "domain": {"kind": "whole_line", "half_length": 3.0},
            "drift": {"kind": "zero"},
            "sigma": {"kind": "inverse_sqrt_x", "integrability_q": 20},
            "initial": {"kind": "gaussian_bump", "amplitude": 0.5, "width": 0.4},
            "horizon": 0.12,
        },
        "grid": {"n_space": 256, "dt": 1e-4},
        "probes": [[0.1, 0.0]],
        "analyses": [
            {
                "kind": "hoelder",
                "p": 2.0,
                "base_time": 0.1,
                "x": 0.0,
                "lags": [0.0025, 0.005, 0.01, 0.02],
                "band": [0.175, 0.275],
            },
            {"kind": "moments", "p_values": [2.0, 4.0]},
        ],
    }


def _kernel_lemma21():
    return {
        "schema": 1,
        "name": "kernel-lemma21",
        "seed": 20210,
        "replicas": 1,
        "model": {
            "domain": {"kind": "unit_interval"},
            "drift": {"kind": "zero"},
            "sigma": {"kind": "constant", "value": 1.0},
            "initial": {"kind": "zero"},
            "horizon": 0.01,
        },
        "grid": {"n_space": 16, "dt": 1e-3},
        "probes": [],
        "analyses": [
            {
                "kind": "kernel-check",
                "domain": "unit_interval",
                "x": 0.5,
                "space_l2_levels": [6, 12],
                "deriv_l1_levels": [6, 12],
                "ti_time": 0.1,
                "ti_levels": [6, 11],
                "bands": {
                    "space_l2_slope": [-0.52, -0.48],
                    "deriv_l1_slope": [-0.52, -0.48],
                    "time_integrated_slope": [0.48, 0.52],
                },
            }
        ],
    }


def _smoothing_gaussian():
    # additive noise from zero-mean smooth data: the probed value is exactly
    # Gaussian with a nonzero mean, the generic case for the probe
    return {
        "schema": 1,
        "name": "smoothing-gaussian",
        "seed": 44,
        "replicas": 10000,
        "model": {
            "domain": {"kind": "unit_interval"},
            "drift": {"kind": "zero"},
            "sigma": {"kind": "constant", "value": 1.0},
            "initial": {"kind": "sine", "amplitude": 0.2},
            "horizon": 0.02,
        },
        "grid": {"n_space": 64, "dt": 2e-5},
        "probes": [[0.02, 0.5]],
        "analyses": [
            {
                "kind": "smoothing",
                "t": 0.02,
                "x": 0.5,
                "phi": "sin",
                "m": 4,
                "lags": [0.05, 0.1, 0.2, 0.4],
                "band": [1.2, 6.0],
            },
            {"kind": "besov", "t": 0.02, "x": 0.5, "s": 0.4, "n": 2},
        ],
    }


_PRESETS = {
    "burgers-whole-line": _burgers_whole_line,
    "burgers-lipschitz-interval": _burgers_lipschitz_interval,
    "heat-whole-line": _heat_whole_line,
    "heat-dirichlet-hoelder": _heat_dirichlet_hoelder,
    "kernel-lemma21": _kernel_lemma21,
    "smoothing-gaussian": _smoothing_gaussian,
}


def preset_names() -> tuple:
    return tuple(sorted(_PRESETS))


def preset_document(name: str) -> dict:
    """The JSON document of a shipped scenario, ready to edit or run."""
    if name not in _PRESETS:
        raise ValueError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        )
    return _PRESETS[name]()


def preset(name: str) -> ExperimentConfig:
    return build_config(preset_document(name))


# --- execution ---------------------------------------------------------------

def _run_block(doc_json: str, block_start: int, block_size: int):
    """Worker entry: rebuild the experiment from its document and run one
    replica block; returns (start, probe matrix, ok mask)."""
    config = build_config(json.loads(doc_json))
    res = simulate_ensemble(
        config.model,
        config.grid,
        SeedSpec(config.seed),
        list(config.effective_probes()),
        replicas=block_size,
        replica_start=block_start,
    )
    return block_start, res.probe_matrix, res.ok


def _gather_blocks(config: ExperimentConfig, workers: int):
    """Probe matrix over all replicas, assembled in replica order from
    fixed-size blocks; identical bytes for any worker count."""
    doc_json = json.dumps(config.raw, sort_keys=True)
    blocks = [
        (start, min(_BLOCK, config.replicas - start))
        for start in range(0, config.replicas, _BLOCK)
    ]
    if workers <= 1 or len(blocks) == 1:
        parts = [_run_block(doc_json, s, c) for s, c in blocks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_block, doc_json, s, c) for s, c in blocks]
            parts = [f.result() for f in futures]
    parts.sort(key=lambda item: item[0])
    matrix = np.concatenate([m for _, m, _ in parts], axis=1)
    ok = np.concatenate([k for _, _, k in parts])
    return matrix, ok


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


@dataclass
class Report:
    output_dir: Path
    files: dict
    summary: dict

    @property
    def overall_pass(self) -> bool:
        return self.summary["overall_pass"]


class _Reporter:
    def __init__(self, config: ExperimentConfig, out_dir: Path):
        self.config = config
        self.out = out_dir
        self.files = {}
        self.checks = []

    def write_csv(self, filename: str, header, rows):
        path = self.out / filename
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        self.files[filename] = path

    def add_check(self, index, kind, quantity, estimate, standard_error, band):
        ok = None
        if band is not None:
            ok = bool(band[0] <= estimate <= band[1]) if math.isfinite(estimate) else False
        self.checks.append(
            {
                "analysis": index,
                "kind": kind,
                "quantity": quantity,
                "estimate": estimate,
                "standard_error": standard_error,
                "band": None if band is None else list(band),
                "pass": ok,
            }
        )


def _analysis_rows(reporter, req, estimates):
    """Uniform long-format rows: (quantity, parameters, estimate, se, hash)."""
    h = reporter.config.config_hash
    return [(q, params, est, se, h) for q, params, est, se in estimates]


def _run_hoelder(reporter, req, matrix, probes):
    p = req.params
    t0, x, order = float(p["base_time"]), float(p["x"]), float(p["p"])
    base = matrix[probes.index((t0, x))]
    rows = []
    pairs = []
    for h in sorted(float(v) for v in p["lags"]):
        lagged = matrix[probes.index((t0 + h, x))]
        diff = np.abs(lagged - base) ** order
        diff = diff[np.isfinite(diff)]
        est = float(diff.mean())
        se = float(diff.std(ddof=1)) / math.sqrt(diff.size)
        pairs.append((h, est))
        rows.append(("time_increment_moment", f"p={order};h={h!r};t0={t0!r};x={x!r}", est, se))
    fit = an.hoelder_fit(pairs, order)
    rows.append(
        (
            "hoelder_exponent",
            f"p={order};t0={t0!r};x={x!r};lags={len(pairs)}",
            fit.exponent_estimate,
            fit.standard_error,
        )
    )
    reporter.write_csv(
        f"analysis_{req.index:02d}_hoelder.csv",
        ("quantity", "parameters", "estimate", "standard_error", "config_hash"),
        _analysis_rows(reporter, req, rows),
    )
    reporter.add_check(
        req.index, "hoelder", "hoelder_exponent", fit.exponent_estimate,
        fit.standard_error, req.band,
    )


def _run_moments(reporter, req, matrix, probes):
    rows = []
    sup_tracker = {}
    for order in [float(v) for v in req.params["p_values"]]:
        ensembles = []
        for j, probe in enumerate(probes):
            ens = an.EnsembleSamples.from_matrix(matrix[j], probe)
            ensembles.append(ens)
            powed = np.abs(ens.values) ** order
            rows.append(
                (
                    "abs_moment",
                    f"p={order};t={probe[0]!r};x={probe[1]!r}",
                    float(powed.mean()),
                    float(powed.std(ddof=1)) / math.sqrt(powed.size) if powed.size > 1 else 0.0,
                )
            )
        sup = an.moment_sup(ensembles, order)
        sup_tracker[order] = sup.value
        rows.append(("abs_moment_sup", f"p={order}", sup.value, 0.0))
    reporter.write_csv(
        f"analysis_{req.index:02d}_moments.csv",
        ("quantity", "parameters", "estimate", "standard_error", "config_hash"),
        _analysis_rows(reporter, req, rows),
    )
    first = min(sup_tracker)
    reporter.add_check(
        req.index, "moments", f"abs_moment_sup_p{first:g}", sup_tracker[first], 0.0, req.band
    )


def _run_besov(reporter, req, matrix, probes):
    p = req.params
    probe = (float(p["t"]), float(p["x"]))
    ens = an.EnsembleSamples.from_matrix(matrix[probes.index(probe)], probe)
    density = an.kde(ens)
    s = float(p["s"])
    n = int(p["n"]) if "n" in p else None
    lags = tuple(float(h) for h in p["lags"]) if "lags" in p else None
    split = an.besov_functional(density, s, n, lags)
    lag_tag = ",".join(repr(h) for h in split.lags)
    params_tag = f"s={s!r};n={n if n is not None else math.ceil(s) + 1};t={probe[0]!r};x={probe[1]!r}"
    rows = [
        ("kde_bandwidth", params_tag, density.bandwidth, 0.0),
        ("besov_l1", params_tag, split.l1_norm, 0.0),
        ("besov_sup", params_tag + f";lags={lag_tag}", split.sup_term, 0.0),
        ("besov_total", params_tag, split.total, 0.0),
    ]
    reporter.write_csv(
        f"analysis_{req.index:02d}_besov.csv",
        ("quantity", "parameters", "estimate", "standard_error", "config_hash"),
        _analysis_rows(reporter, req, rows),
    )
    reporter.add_check(req.index, "besov", "besov_total", split.total, 0.0, req.band)


def _run_smoothing(reporter, req, matrix, probes):
    p = req.params
    probe = (float(p["t"]), float(p["x"]))
    ens = an.EnsembleSamples.from_matrix(matrix[probes.index(probe)], probe)
    phi = _build_phi(p["phi"], p.get("gamma"))
    m = int(p["m"])
    fit = an.smoothing_probe(ens, phi, m, [float(h) for h in p["lags"]])
    rows = []
    for h in sorted(fit.estimates):
        est, se = fit.estimates[h]
        rows.append(("test_fn_increment", f"phi={phi.name};m={m};h={h!r}", est, se))
    rows.append(
        (
            "smoothing_exponent",
            f"phi={phi.name};m={m};gamma={phi.hoelder_gamma!r};excluded={len(fit.excluded_lags)}",
            fit.slope,
            fit.standard_error,
        )
    )
    reporter.write_csv(
        f"analysis_{req.index:02d}_smoothing.csv",
        ("quantity", "parameters", "estimate", "standard_error", "config_hash"),
        _analysis_rows(reporter, req, rows),
    )
    reporter.add_check(
        req.index, "smoothing", "smoothing_exponent", fit.slope, fit.standard_error, req.band
    )


def _run_aux_error(reporter, req):
    p = req.params
    config = reporter.config
    t, x = float(p["t"]), float(p["x"])
    eps_set = tuple(float(e) for e in p["eps_set"])
    replicas = int(p.get("replicas", config.replicas))
    fit = an.approx_error_curve(
        config.model, config.grid, SeedSpec(config.seed), t, x, eps_set, replicas
    )
    rows = []
    for eps in sorted(fit.errors):
        est, se = fit.errors[eps]
        rows.append(("freeze_gap", f"eps={eps!r};t={t!r};x={x!r}", est, se))
    rows.append(
        (
            "freeze_gap_exponent",
            f"t={t!r};x={x!r};exact_zero={fit.exact_zero};excluded={len(fit.excluded)}",
            fit.slope,
            fit.standard_error,
        )
    )
    reporter.write_csv(
        f"analysis_{req.index:02d}_aux_error.csv",
        ("quantity", "parameters", "estimate", "standard_error", "config_hash"),
        _analysis_rows(reporter, req, rows),
    )
    reporter.add_check(
        req.index, "aux-error", "freeze_gap_exponent", fit.slope, fit.standard_error, req.band
    )


def _run_kernel_check(reporter, req):
    p = req.params
    domain = Domain.UNIT_INTERVAL_DIRICHLET if p["domain"] == "unit_interval" else Domain.WHOLE_LINE
    spec = KernelSpec(domain)
    x = float(p["x"])
    h = reporter.config.config_hash
    bands = p.get("bands", {})
    rows = []

    def fit_levels(quantity, fn, levels):
        lo, hi = int(levels[0]), int(levels[1])
        ts = [2.0 ** -k for k in range(lo, hi + 1)]
        vals = [fn(t) for t in ts]
        for t, v in zip(ts, vals):
            rows.append((p["domain"], t, x, quantity, v, "", h))
        slope, _ = _line_fit(np.log(ts), np.log(vals))
        rows.append((p["domain"], "", x, f"{quantity}_slope", "", slope, h))
        band = bands.get(f"{quantity}_slope")
        reporter.add_check(
            req.index, "kernel-check", f"{quantity}_slope", slope, 0.0,
            None if band is None else (float(band[0]), float(band[1])),
        )

    if "space_l2_levels" in p:
        fit_levels("space_l2", lambda t: kernel_space_l2(spec, t, x), p["space_l2_levels"])
    if "deriv_l1_levels" in p:
        fit_levels("deriv_l1", lambda t: kernel_deriv_l1(spec, t, x), p["deriv_l1_levels"])
    if "ti_levels" in p:
        t_fix = float(p.get("ti_time", 0.1))
        lo, hi = int(p["ti_levels"][0]), int(p["ti_levels"][1])
        eps_vals = [2.0 ** -k for k in range(lo, hi + 1)]
        vals = [time_integrated_l2(spec, t_fix, eps, x) for eps in eps_vals]
        # the t column carries the window width for these rows
        for eps, v in zip(eps_vals, vals):
            rows.append((p["domain"], eps, x, "time_integrated_l2", v, "", h))
        slope, _ = _line_fit(np.log(eps_vals), np.log(vals))
        rows.append((p["domain"], "", x, "time_integrated_l2_slope", "", slope, h))
        band = bands.get("time_integrated_slope")
        reporter.add_check(
            req.index, "kernel-check", "time_integrated_l2_slope", slope, 0.0,
            None if band is None else (float(band[0]), float(band[1])),
        )

    reporter.write_csv(
        f"analysis_{req.index:02d}_kernel_check.csv",
        ("domain", "t", "x", "quantity", "value", "exponent_fit", "config_hash"),
        rows,
    )


def run_experiment(
    config: ExperimentConfig,
    workers: int = 1,
    dump_snapshots: bool = False,
    output_dir=None,
) -> Report:
    """Execute the configured replicas, run the requested analyses, and
    write a byte-reproducible report directory.

    Aborts (without writing) when more than 1% of replicas blow up.
    """
    out = Path(output_dir or config.output_dir or f"spdelab-out/{config.name}-{config.config_hash}")
    probes = list(config.effective_probes())

    matrix = np.zeros((len(probes), 0))
    ok = np.ones(0, dtype=bool)
    if probes:
        matrix, ok = _gather_blocks(config, workers)
        failed = int(config.replicas - ok.sum())
        if failed > _FAILURE_BUDGET * config.replicas:
            raise ExperimentAbortedError(
                f"{failed} of {config.replicas} replicas failed; "
                f"budget is {_FAILURE_BUDGET:.0%}"
            )
    else:
        failed = 0

    out.mkdir(parents=True, exist_ok=True)
    reporter = _Reporter(config, out)

    if probes:
        rows = []
        for j, (t, x) in enumerate(probes):
            vals = matrix[j][np.isfinite(matrix[j])]
            rows.append(
                (t, x, float(vals.mean()), float(vals.var()), vals.size, config.config_hash)
            )
        reporter.write_csv(
            "probes.csv", ("t", "x", "mean", "variance", "count", "config_hash"), rows
        )

    for req in config.analyses:
        if req.kind == "hoelder":
            _run_hoelder(reporter, req, matrix, probes)
        elif req.kind == "moments":
            _run_moments(reporter, req, matrix, probes)
        elif req.kind == "besov":
            _run_besov(reporter, req, matrix, probes)
        elif req.kind == "smoothing":
            _run_smoothing(reporter, req, matrix, probes)
        elif req.kind == "aux-error":
            _run_aux_error(reporter, req)
        elif req.kind == "kernel-check":
            _run_kernel_check(reporter, req)

    if dump_snapshots:
        times = sorted({t for t, _ in probes}) or [config.grid.horizon]
        rec = simulate(
            config.model, config.grid, SeedSpec(config.seed), probes=[], snapshot_times=times
        )
        rows = []
        for snap in rec.snapshots:
            for xi, vi in zip(snap.nodes, snap.values):
                rows.append((snap.time, float(xi), float(vi), config.config_hash))
        reporter.write_csv("snapshots.csv", ("t", "x", "value", "config_hash"), rows)

    from . import __version__

    passes = [c["pass"] for c in reporter.checks if c["pass"] is not None]
    summary = {
        "schema": SCHEMA_VERSION,
        "name": config.name,
        "config_hash": config.config_hash,
        "seed": config.seed,
        "replicas": config.replicas,
        "failed_replicas": failed,
        "version": __version__,
        "files": sorted(reporter.files),
        "checks": _jsonable(reporter.checks),
        "overall_pass": bool(all(passes)),
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    reporter.files["summary.json"] = summary_path
    return Report(out, reporter.files, summary)
