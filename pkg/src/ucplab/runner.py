"""Config-driven pipelines and their CSV/manifest outputs.

Every pipeline builds its tables in memory; files are written only after all
steps succeeded, so a failing run leaves no partial CSVs behind (only a
manifest recording the failure).
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import carleman as cm
from . import fields as fd
from .config import ExperimentConfig
from .errors import ConfigError, UcpLabError
from .fields import CartesianGrid, LogPolarGrid, ScalarField, VectorField
from .lame import CoefficientProfile, harmonic_gradient, residual_divergence, rigid_motion
from .solver import MMS_CASES, BoundaryData, solve_dirichlet, solve_traction, traction_of
from .ucp import GlobalScanConfig, doubling_scan, global_scan
from .weights import CarlemanWeight, check_decay_condition, check_weight_conditions


def load_schemas() -> dict:
    text = resources.files("ucplab").joinpath("data/csv_schemas.json").read_text()
    return json.loads(text)["tables"]


# ---------------------------------------------------------------------------
# tables


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list] = dc_field(default_factory=list)
    comments: list[str] = dc_field(default_factory=list)


def format_value(v) -> str:
    """Shortest round-trip decimal for floats; ``true``/``false`` for booleans."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_table(table: Table, directory: Path, schemas: dict | None = None) -> Path:
    schemas = load_schemas() if schemas is None else schemas
    expected = list(schemas[table.name]["columns"]) if table.name in schemas else None
    if expected is not None and expected != table.columns:
        raise ValueError(f"{table.name}: columns {table.columns} do not match the schema {expected}")
    path = directory / table.name
    with path.open("w", newline="") as fh:
        for line in table.comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([format_value(v) for v in row])
    return path


def read_table(path: Path) -> tuple[list[str], list[dict]]:
    """Header and rows (as strings) of a CSV written by ``write_table``."""
    with Path(path).open() as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(lines)
    return list(reader.fieldnames or []), list(reader)


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    command: str
    config_digest: str
    config_text: str
    version: str = __version__
    started: str = ""
    finished: str = ""
    status: str = "pending"
    steps: list[dict] = dc_field(default_factory=list)
    outputs: list[str] = dc_field(default_factory=list)
    error: dict | None = None

    def to_json(self) -> str:
        payload = {
            "artifact": "ucplab",
            "version": self.version,
            "command": self.command,
            "config_digest": self.config_digest,
            "config": self.config_text,
            "started": self.started,
            "finished": self.finished,
            "status": self.status,
            "steps": self.steps,
            "outputs": self.outputs,
            "error": self.error,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        data = json.loads(Path(path).read_text())
        return cls(
            data["command"], data["config_digest"], data.get("config", ""), data.get("version", ""),
            data.get("started", ""), data.get("finished", ""), data.get("status", ""),
            data.get("steps", []), data.get("outputs", []), data.get("error"),
        )


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class _Steps:
    def __init__(self, manifest: RunManifest):
        self.manifest = manifest

    def run(self, name: str, func, *args):
        start = time.perf_counter()
        entry = {"name": name, "status": "running"}
        self.manifest.steps.append(entry)
        try:
            result = func(*args)
        except Exception:
            entry["status"] = "failed"
            raise
        entry["status"] = "ok"
        entry["seconds"] = round(time.perf_counter() - start, 3)
        return result


def _pmap(func, items, threads: int) -> list:
    """Ordered map, concurrent when ``threads > 1``."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


# ---------------------------------------------------------------------------
# shared builders


def _grid(cfg: ExperimentConfig) -> CartesianGrid:
    g = cfg.section("grid")
    return CartesianGrid(g["half_width"], g["points_per_side"])


def build_coefficients(cfg: ExperimentConfig, grid: CartesianGrid):
    p = cfg.section("profile")
    coeffs = CoefficientProfile(p["kind"], p["params"], p["delta0"], p["M0"]).build(grid)
    if p["convexity_delta"] is not None:
        coeffs = replace(coeffs, convexity_delta=p["convexity_delta"])
    report = coeffs.validate()
    if not report.passed:
        bad = report.failures()[0]
        raise ConfigError(
            f"profile: coefficients violate '{bad.name}' (margin {bad.margin:.3e} at {bad.witness_point})", "profile"
        )
    return coeffs


def _harmonic_funcs(degree: int, phase: float):
    c = degree * complex(math.cos(phase), -math.sin(phase))

    def u(x1, x2):
        w = c * (x1 + 1j * x2) ** (degree - 1)
        return w.real, -w.imag

    def jac(x1, x2):
        # Hessian of Re(e^{-i phase} z^degree)
        d2 = c * (degree - 1) * (x1 + 1j * x2) ** (degree - 2) if degree > 1 else 0.0 * x1
        return [[np.real(d2), -np.imag(d2)], [-np.imag(d2), -np.real(d2)]]

    return u, jac


def _rigid_funcs(shift, rotation):
    def u(x1, x2):
        return shift[0] - rotation * x2 + 0 * x1, shift[1] + rotation * x1 + 0 * x2

    def jac(x1, x2):
        z = np.zeros_like(np.asarray(x1, dtype=float))
        return [[z, z - rotation], [z + rotation, z]]

    return u, jac


def _numerical_jacobian(func, eps: float = 1e-3):
    """Fourth-order central differences of a smooth callable."""

    def d(x1, x2, axis):
        def at(s):
            return np.array(func(x1 + s, x2) if axis == 0 else func(x1, x2 + s))

        return (-at(2 * eps) + 8 * at(eps) - 8 * at(-eps) + at(-2 * eps)) / (12 * eps)

    def jac(x1, x2):
        g1, g2 = d(x1, x2, 0), d(x1, x2, 1)
        return [[g1[0], g2[0]], [g1[1], g2[1]]]

    return jac


def _boundary_funcs(b: dict):
    if b["field"] == "harmonic":
        return _harmonic_funcs(b["degree"], b["phase"]), f"harmonic-{b['degree']}"
    if b["field"] == "rigid":
        return _rigid_funcs(b["shift"], b["rotation"]), "rigid"
    exact = MMS_CASES[b["mms_case"]].exact
    return (exact, _numerical_jacobian(exact)), f"mms-{b['mms_case']}"


def _nodal_lookup(grid: CartesianGrid, *arrays):
    def at(x1, x2):
        i = np.rint((np.asarray(x1) + grid.half_width) / grid.spacing).astype(int)
        j = np.rint((np.asarray(x2) + grid.half_width) / grid.spacing).astype(int)
        return tuple(a[i, j] for a in arrays)

    return at


def _weighted_l2(grid, values) -> float:
    return math.sqrt(float(np.sum(fd.domain_weights(grid) * np.sum(np.asarray(values) ** 2, axis=0))))


def solve_from_config(cfg: ExperimentConfig):
    """Run the configured boundary-value problem; returns ``(report, label, exact, forcing, coeffs)``."""
    grid = _grid(cfg)
    coeffs = build_coefficients(cfg, grid)
    b = cfg.section("boundary")
    (ufunc, jac), label = _boundary_funcs(b)
    exact = fd.sample(grid, ufunc)
    forcing = residual_divergence(exact, coeffs) if b["field"] == "mms" else None
    if b["kind"] == "dirichlet":
        report = solve_dirichlet(coeffs, BoundaryData.dirichlet(grid, ufunc), grid, forcing, method=b["method"])
    else:
        if forcing is not None:
            raise ConfigError("boundary.field: manufactured forcing is only supported for Dirichlet solves", "boundary.field")
        if np.any(coeffs.rho.values != 0.0):
            raise ConfigError("profile.params: the traction problem needs rho = 0", "profile.params")
        phi = traction_of(jac, _nodal_lookup(grid, coeffs.mu.values, coeffs.lam.values))
        report = solve_traction(
            coeffs, BoundaryData.traction(grid, phi).project_compatible(), grid, b["method"], cfg.get("tolerances.compatibility")
        )
    return report, label, exact, forcing, coeffs


def build_field(cfg: ExperimentConfig) -> tuple[VectorField, str]:
    f = cfg.section("field")
    if f["source"] == "solve":
        report, label, _, _, _ = solve_from_config(cfg)
        return report.solution, "solved-" + label
    grid = _grid(cfg)
    if f["source"] == "harmonic":
        return harmonic_gradient(grid, f["degree"], f["phase"]), f"harmonic-{f['degree']}"
    if f["source"] == "rigid":
        return rigid_motion(grid, f["shift"], f["rotation"]), "rigid"
    vals = np.stack([np.full(grid.shape, f["shift"][0]), np.full(grid.shape, f["shift"][1])])
    return VectorField(grid, vals), "constant"


# ---------------------------------------------------------------------------
# pipelines


def _header(cfg: ExperimentConfig) -> list[str]:
    return [f"ucplab {cfg.command}", f"config_digest={cfg.digest}"]


def pipeline_weight_check(cfg: ExperimentConfig, threads: int) -> list[Table]:
    w = cfg.section("weights")
    weights = [CarlemanWeight(tau, w["delta"], variant) for tau in w["taus"] for variant in w["variants"]]

    def one(weight):
        a = weight.regime_boundary
        t_max = max(w["t_max_factor"] * math.log(weight.tau), a + 4.0)
        reps = check_weight_conditions(weight, t_max, w["c_low"], w["c_high"], w["c_spectral"], w["n_points"])
        C = w["decay_C"] if w["decay_C"] is not None else weight.delta
        decay = None
        if C > 0:
            decay = check_decay_condition(weight, C, np.geomspace(1e-8, 1.0, w["decay_points"]))
        return weight, reps, decay, C

    table = Table("weights.csv", ["tau", "delta", "variant", "condition", "min_margin", "argmin_t", "pass"])
    dtable = Table("decay.csv", ["tau", "delta", "variant", "C", "r_star", "failures"])
    thresholds = f"thresholds: c_low={w['c_low']!r} c_high={w['c_high']!r} c_spectral={w['c_spectral']!r}"
    table.comments = _header(cfg) + [thresholds, f"t range: [0, max({w['t_max_factor']!r} ln tau, 2 ln tau + 4)]"]
    dtable.comments = _header(cfg)
    for weight, reps, decay, C in _pmap(one, weights, threads):
        for r in reps:
            table.rows.append([weight.tau, weight.delta, weight.variant, r.condition, r.margin, r.witness_t, r.passed])
        if decay is not None:
            dtable.rows.append([weight.tau, weight.delta, weight.variant, C, decay.r_star, int(decay.failures.size)])
    return [table, dtable]


def _carleman_row(rep: cm.RatioReport, k_sigma, delta, seed, n=2):
    return [rep.estimate, n, k_sigma, rep.tau, delta, seed, rep.lhs, rep.rhs, rep.ratio, rep.resolution, rep.log_scale]


CARLEMAN_COLUMNS = ["estimate", "n", "k_sigma", "tau", "delta", "seed", "lhs", "rhs", "ratio", "resolution", "log_scale"]


def pipeline_carleman_1d(cfg: ExperimentConfig, threads: int) -> list[Table]:
    c = cfg.section("carleman")
    base = cfg.get("run.seed")
    seeds = [base + i for i in range(c["n_seeds"])]
    t0, t1 = c["support"]
    res = c["resolution"]
    tasks = []
    for est in c["estimates"]:
        params = {
            "factor": c["sigmas"],
            "commutator": c["sigmas"],
            "mode_ode": c["modes"],
            "weighted_reduction": [c["reduction_mode"]],
            "full_mode": [c["full_mode"]],
        }[est]
        for seed in seeds:
            for p in params:
                for tau in c["taus"]:
                    tasks.append((est, seed, p, tau))

    def one(task):
        est, seed, p, tau = task
        v = cm.TestFunction1D.seeded(seed, t0, t1)
        h = CarlemanWeight(tau, c["delta"])
        if est == "factor":
            rep = cm.verify_factor_estimate(h, p, v, res)
        elif est == "commutator":
            rep = cm.verify_commutator_estimate(h, p, v, res)
        elif est == "mode_ode":
            rep = cm.verify_mode_ode(h, cm.ModeIndex(2, int(p)), v, res)
        elif est == "weighted_reduction":
            rep = cm.verify_weighted_reduction(c["reduction_constant"], tau, [cm.FourierMode(int(p), v)], h, res)
        else:
            rep = cm.carleman_mode_terms(h, int(p), v, res)
        return _carleman_row(rep, p, c["delta"], seed)

    table = Table("carleman.csv", CARLEMAN_COLUMNS, _pmap(one, tasks, threads))
    table.comments = _header(cfg) + [f"test functions: seeded bump sums on ({t0!r}, {t1!r})"]
    if "weighted_reduction" in c["estimates"]:
        table.comments.append(f"weighted_reduction: k_sigma is the Fourier index of f, K = {c['reduction_constant']!r}")
    return [table]


def pipeline_carleman_2d(cfg: ExperimentConfig, threads: int) -> list[Table]:
    c = cfg.section("carleman2d")
    lo, hi = c["t_range"]
    grid = LogPolarGrid(lo, hi, c["t_count"], c["theta_count"])
    base = cfg.get("run.seed")
    seeds = [base + i for i in range(c["n_seeds"])]
    k = c["mode"]
    t, th = grid.polar()

    def data(seed):
        w = cm.TestFunction1D.seeded(seed, *c["support"])
        u = cm.mode_field(grid, w, k)
        if c["f_support"] is None:
            f = ScalarField(grid, np.zeros(grid.shape))
        else:
            g = cm.TestFunction1D.seeded(seed, *c["f_support"])
            f = ScalarField(grid, g.profile(t)[0] * np.cos(k * th))
        return u, f

    inputs = {seed: data(seed) for seed in seeds}
    tasks = [(seed, tau) for seed in seeds for tau in c["taus"]]

    def one(task):
        seed, tau = task
        u, f = inputs[seed]
        rep = cm.verify_full_carleman(CarlemanWeight(tau, c["delta"]), u, f)
        return _carleman_row(rep, k, c["delta"], seed)

    table = Table("carleman.csv", CARLEMAN_COLUMNS, _pmap(one, tasks, threads))
    table.comments = _header(cfg) + [
        f"log-polar grid t in [{lo!r}, {hi!r}], {c['t_count']} x {c['theta_count']}; u = (w(t) cos({k} theta), 0)"
    ]
    return [table]


def pipeline_solve(cfg: ExperimentConfig, threads: int) -> list[Table]:
    report, label, exact, forcing, coeffs = solve_from_config(cfg)
    grid = report.solution.grid
    b = cfg.section("boundary")
    sol = report.solution.values
    reference = exact
    if b["kind"] == "traction":
        from .solver import project_rigid_complement

        reference = project_rigid_complement(exact)
    err = _weighted_l2(grid, sol - reference.values) / max(_weighted_l2(grid, reference.values), 1e-300)
    res = residual_divergence(report.solution, coeffs).values
    if forcing is not None:
        res = res - forcing.values
    ball = fd.AnnulusSpec((0.0, 0.0), 0.0, 0.8 * grid.half_width)
    unorm = fd.l2_norm(report.solution, ball)
    op_res = fd.l2_norm(VectorField(grid, res), ball) / unorm if unorm > 0 else 0.0
    rows = [
        ["profile", cfg.get("profile.kind")],
        ["boundary_kind", b["kind"]],
        ["boundary_field", label],
        ["points_per_side", grid.points_per_side],
        ["spacing", grid.spacing],
        ["method", report.stats.get("method")],
        ["unknowns", report.stats.get("unknowns")],
        ["nonzeros", report.stats.get("nonzeros")],
    ]
    for key in ("pivot_ratio", "iterations", "compatibility_defect"):
        if key in report.stats:
            rows.append([key, report.stats[key]])
    rows.append(["linear_residual", report.residual_norm])
    if report.normalization_deficits is not None:
        rows.append(["mean_deficit", report.normalization_deficits[0]])
        rows.append(["rotation_deficit", report.normalization_deficits[1]])
    rows.append(["relative_error_vs_reference", err])
    rows.append(["operator_residual_ball_0.8L", op_res])
    table = Table("solve.csv", ["quantity", "value"], rows, _header(cfg))
    return [table, ("solution.csv", report.solution)]


def pipeline_doubling_scan(cfg: ExperimentConfig, threads: int) -> list[Table]:
    u, label = build_field(cfg)
    s = cfg.section("scan")
    reports = _pmap(lambda x0: doubling_scan(u, x0, s["radii"], s["R"]), s["centers"], threads)
    dt = Table("doubling.csv", ["field", "x0_1", "x0_2", "r", "K", "m", "C_fit"], comments=_header(cfg))
    ft = Table("frequency.csv", ["field", "x0_1", "x0_2", "R", "norm_inner", "norm_outer", "m"], comments=_header(cfg))
    for rep in reports:
        for row in rep.rows:
            dt.rows.append([label, rep.x0[0], rep.x0[1], row.r, row.K, row.m, rep.c_tilde])
        f = rep.frequency
        ft.rows.append([label, rep.x0[0], rep.x0[1], f.R, f.inner_norm, f.outer_norm, f.m])
    return [dt, ft]


def pipeline_global_scan(cfg: ExperimentConfig, threads: int) -> list[Table]:
    u, label = build_field(cfg)
    s = cfg.section("scan")
    gcfg = GlobalScanConfig(
        s["sigma"], s["theta"], s["rbar"], s["vartheta"], s["lattice_spacing"], s["doubling_radii"], s["K_bound"]
    )
    rep = global_scan(u, gcfg)
    table = Table("global_scan.csv", ["probe_1", "probe_2", "scale", "metric", "value"])
    table.rows = [[r.probe[0], r.probe[1], r.scale, r.metric, r.value] for r in rep.rows]
    table.comments = _header(cfg) + [
        f"field={label}",
        f"propagation_constant={rep.propagation_constant!r}",
        f"global_doubling={rep.global_doubling!r}",
        f"h1_over_l2_proxy={rep.h1_ratio_proxy!r} (proxy for the fractional-norm ratio)",
        f"flagged_probes={len(rep.flagged)}",
    ]
    return [table]


# ---------------------------------------------------------------------------
# report


def _float(s) -> float:
    return float(s) if s not in ("", None) else float("nan")


def _summarize_carleman(rows, source, factor):
    out = []
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["estimate"], r["k_sigma"], r["seed"]), []).append(_float(r["ratio"]))
    by_est: dict = {}
    for (est, k, _), ratios in groups.items():
        ratios = [x for x in ratios if x > 0]
        if len(ratios) >= 2:
            by_est.setdefault((est, k), []).append(max(ratios) / min(ratios))
    for (est, k), spreads in sorted(by_est.items()):
        worst = max(spreads)
        out.append([f"tau_uniformity:{est}:k_sigma={k}", source, worst, factor, worst <= factor])
    return out


def _summarize_chain(drows, frows, source, tol_rel, tol_exp):
    out = []
    m_of = {(r["field"], r["x0_1"], r["x0_2"]): _float(r["m"]) for r in frows}
    worst: dict = {}
    for r in drows:
        label = r["field"]
        if not label.startswith("harmonic-") or _float(r["x0_1"]) != 0.0 or _float(r["x0_2"]) != 0.0:
            continue
        d = int(label.split("-")[1])
        K = _float(r["K"])
        m = m_of[(label, r["x0_1"], r["x0_2"])]
        dev_K = abs(K / 2.0**d - 1.0)
        dev_m = abs(m / (d * math.log(2.0)) - 1.0)
        dev_e = abs(math.exp(m) / K - 1.0)
        prev = worst.get(label, (0.0, 0.0))
        worst[label] = (max(prev[0], dev_K, dev_m), max(prev[1], dev_e))
    for label, (rel, ex) in sorted(worst.items()):
        out.append([f"homogeneous_chain:{label}", source, rel, tol_rel, rel <= tol_rel])
        out.append([f"homogeneous_chain_exp:{label}", source, ex, tol_exp, ex <= tol_exp])
    return out


def pipeline_report(cfg: ExperimentConfig, threads: int, base_dir: Path | None = None) -> list[Table]:
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    tol = cfg.section("tolerances")
    summary = Table("summary.csv", ["invariant", "source", "value", "threshold", "pass"], comments=_header(cfg))
    merged_weights: list[list] = []
    for entry in cfg.get("report.manifests"):
        mpath = Path(entry)
        mpath = mpath if mpath.is_absolute() else base_dir / mpath
        if not mpath.is_file():
            summary.rows.append(["missing", str(entry), None, None, "gap"])
            continue
        manifest = RunManifest.load(mpath)
        tables: dict[str, list[dict]] = {}
        for name in manifest.outputs:
            p = mpath.parent / name
            if not p.is_file():
                summary.rows.append(["missing", f"{entry}:{name}", None, None, "gap"])
                continue
            if name.endswith(".csv") and name != "solution.csv":
                tables[name] = read_table(p)[1]
        src = str(entry)
        if "weights.csv" in tables:
            rows = tables["weights.csv"]
            passed = all(r["pass"] == "true" for r in rows)
            worst = min((_float(r["min_margin"]) for r in rows), default=float("nan"))
            summary.rows.append(["weight_conditions", src, worst, None, passed])
            for r in rows:
                merged_weights.append([_float(r["tau"]), _float(r["delta"]), r["variant"], r["condition"],
                                       _float(r["min_margin"]), _float(r["argmin_t"]), r["pass"] == "true", src])
        if "decay.csv" in tables:
            stars = {r["r_star"] for r in tables["decay.csv"]}
            summary.rows.append(["decay_r_star_tau_independent", src, len(stars), 1, len(stars) == 1])
        if "carleman.csv" in tables:
            summary.rows.extend(_summarize_carleman(tables["carleman.csv"], src, tol["uniformity_factor"]))
        if "doubling.csv" in tables and "frequency.csv" in tables:
            summary.rows.extend(
                _summarize_chain(tables["doubling.csv"], tables["frequency.csv"], src, tol["chain_relative"], tol["chain_exponential"])
            )
            fits = [_float(r["C_fit"]) for r in tables["doubling.csv"]]
            if fits:
                summary.rows.append(["doubling_shape_C_fit", src, max(fits), None, all(math.isfinite(x) for x in fits)])
        if "global_scan.csv" in tables:
            prop = [_float(r["value"]) for r in tables["global_scan.csv"] if r["metric"] == "propagation"]
            if prop:
                summary.rows.append(["propagation_constant", src, min(prop), None, min(prop) > 0])
        if "acceptance.csv" in tables:
            for r in tables["acceptance.csv"]:
                summary.rows.append([f"criterion-{r['criterion']}:{r['description']}", src,
                                     r["value"], r["threshold"], r["pass"] == "true"])
    out = [summary]
    if merged_weights:
        merged_weights.sort(key=lambda r: (r[0], r[1]))
        cols = ["tau", "delta", "variant", "condition", "min_margin", "argmin_t", "pass", "source"]
        out.append(Table("merged_weights.csv", cols, merged_weights, _header(cfg)))
    return out


PIPELINES = {
    "weight-check": pipeline_weight_check,
    "carleman-1d": pipeline_carleman_1d,
    "carleman-2d": pipeline_carleman_2d,
    "solve": pipeline_solve,
    "doubling-scan": pipeline_doubling_scan,
    "global-scan": pipeline_global_scan,
}


def _prevalidate(cfg: ExperimentConfig) -> None:
    """Checks that need constructed objects but no heavy computation."""
    needs_coeffs = cfg.command == "solve" or cfg.get("field.source") == "solve"
    try:
        if "grid" in cfg.sections:
            grid = _grid(cfg)
            if needs_coeffs:
                build_coefficients(cfg, grid)
        if cfg.command in ("weight-check", "carleman-1d", "carleman-2d"):
            sec = {"weight-check": "weights", "carleman-1d": "carleman", "carleman-2d": "carleman2d"}[cfg.command]
            for tau in cfg.get(f"{sec}.taus"):
                CarlemanWeight(tau, cfg.get(f"{sec}.delta"))
        if cfg.command == "carleman-2d":
            lo, hi = cfg.get("carleman2d.t_range")
            LogPolarGrid(lo, hi, cfg.get("carleman2d.t_count"), cfg.get("carleman2d.theta_count"))
    except ConfigError:
        raise
    except (ValueError, UcpLabError) as exc:
        raise ConfigError(f"invalid configuration: {exc}", getattr(exc, "field", None)) from exc


def run(cfg: ExperimentConfig, out_dir, threads: int = 1, base_dir=None) -> RunManifest:
    """Execute the configured pipeline, then write its CSVs and ``manifest.json`` into ``out_dir``.

    Validation errors (``ConfigError``) are raised before anything is written.
    Numerical failures write a manifest with ``status = "failed"`` and re-raise.
    """
    _prevalidate(cfg)
    out_dir = Path(out_dir)
    manifest = RunManifest(cfg.command, cfg.digest, cfg.to_text(), started=_now())
    steps = _Steps(manifest)
    schemas = load_schemas()
    try:
        if cfg.command == "report":
            tables = steps.run("report", pipeline_report, cfg, threads, base_dir)
        else:
            tables = steps.run(cfg.command, PIPELINES[cfg.command], cfg, threads)
    except UcpLabError as exc:
        manifest.status = "failed"
        manifest.finished = _now()
        manifest.error = {"type": type(exc).__name__, "message": str(exc)}
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "manifest.json").write_text(manifest.to_json())
        raise
    out_dir.mkdir(parents=True, exist_ok=True)

    def write_all():
        for item in tables:
            if isinstance(item, Table):
                write_table(item, out_dir, schemas)
                manifest.outputs.append(item.name)
            else:
                name, field = item
                fd.write_field_csv(field, out_dir / name)
                manifest.outputs.append(name)

    steps.run("write", write_all)
    manifest.status = "ok"
    manifest.finished = _now()
    (out_dir / "manifest.json").write_text(manifest.to_json())
    return manifest
