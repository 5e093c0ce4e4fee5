"""Scenario configuration, runners and CSV/JSON output."""

from __future__ import annotations

import copy
import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .averaging import AveragingWindow, CgstAccumulator, discrepancy, tiling_centres, volume_average
from .grw import DETERMINISTIC, STOCHASTIC, TransportParams, bgrw_step, grw_step
from .lattice import (
    DIRICHLET,
    NOFLUX,
    BoundarySpec,
    ConfigurationError,
    LatticeSpec,
    ParticleField,
    ResetRegion,
    SideCondition,
    dirichlet_resets,
    init_uniform,
    lattice_1d,
)
from .random_field import KraichnanSpec, rng_for, sample_lnK, sample_velocity_1d, sample_velocity_2d
from .reactions import AVOGADRO, ReactionSystem, saturated_reactive_step, unsaturated_reactive_step
from .richards import (
    SILT_LOAM,
    FlowBoundary,
    LSchemeControl,
    SoilModel,
    initial_state,
    l_scheme_flow_step,
    node_flux,
)

log = logging.getLogger(__name__)

SCENARIOS = (
    "verify-1d",
    "verify-2d",
    "bimolecular-1d",
    "aquifer-1d",
    "soil-1d",
    "soil-2d",
    "aquifer-2d",
    "sweep-appendix-b",
)

PROFILE_COLUMNS = ["x", "y", "time", "species", "fine_grained", "moving_average", "volume", "cgst"]
METRIC_COLUMNS = ["label", "t", "e_c1", "eps_c1", "e_c2", "eps_c2"]
FLOW_COLUMNS = ["x", "z", "time", "psi", "theta", "q_x", "q_z"]
COEF_COLUMNS = ["scheme", "dx", "t", "x", "y", "species", "D11", "D12", "D21", "D22", "u", "v", "concentration"]


# --------------------------------------------------------------------------- config


@dataclass
class ScenarioConfig:
    scenario: str
    params: dict = field(default_factory=dict)
    mode: str = DETERMINISTIC
    seed: int = 0
    ensemble: int = 1
    out: str | None = None
    workers: int = 1

    def validate(self) -> "ScenarioConfig":
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"scenario: unknown id {self.scenario!r}")
        if self.mode not in (DETERMINISTIC, STOCHASTIC):
            raise ConfigurationError(f"mode: expected det or stoch, got {self.mode!r}")
        if self.ensemble < 1:
            raise ConfigurationError("ensemble: must be >= 1")
        required = _REQUIRED.get(self.scenario, ())
        for key in required:
            if key not in self.params:
                raise ConfigurationError(f"params.{key}: missing")
        p = self.params
        if "a" in p and p["a"] <= 0 or "tau" in p and p["tau"] <= 0:
            raise ConfigurationError("params.a/params.tau: must be positive")
        for t in p.get("times", []):
            if "tau" in p and "T" in p and (t - p["tau"] < -1e-12 or t + p["tau"] > p["T"] + 1e-12):
                raise ConfigurationError(f"params.times: window around {t} leaves [0, T]")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


_REQUIRED = {
    "verify-1d": ("u", "D", "a", "tau", "times", "dx_list", "T"),
    "verify-2d": ("u", "D", "a", "tau", "times", "dx_list", "T"),
    "bimolecular-1d": ("u", "D", "K_r", "dx", "dt", "T", "a", "tau", "times"),
    "aquifer-1d": ("U", "D", "dx", "dt", "T", "a", "tau", "times", "field"),
    "soil-1d": ("dz", "dt", "T", "a", "tau", "times", "D", "field"),
    "soil-2d": ("dx", "dt", "T", "a", "tau", "times", "D", "field", "lines"),
    "aquifer-2d": ("dx", "dt", "T", "a", "tau", "times", "D", "U", "field"),
    "sweep-appendix-b": ("dz", "dt", "T", "a", "tau", "times", "D", "field", "a_list", "tau_list"),
}


def list_presets() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("cgst.presets").iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str) -> dict:
    path = resources.files("cgst.presets") / f"{name}.yaml"
    if not path.is_file():
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return yaml.safe_load(path.read_text())


def load_config(preset: str | None = None, path: str | Path | None = None, **overrides) -> ScenarioConfig:
    """Preset, then file, then keyword overrides (``None`` values ignored)."""
    data: dict[str, Any] = {}
    if preset:
        data = _merge(data, load_preset(preset))
    if path:
        data = _merge(data, yaml.safe_load(Path(path).read_text()) or {})
    for k, v in overrides.items():
        if v is not None:
            data[k] = v
    if "scenario" not in data:
        raise ConfigurationError("scenario: missing")
    known = {f for f in ScenarioConfig.__dataclass_fields__}
    extra = set(data) - known
    if extra:
        raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
    return ScenarioConfig(**data).validate()


def _merge(base: dict, new: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in new.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


# --------------------------------------------------------------------------- sampling


class Sampler:
    """CGST accumulators and snapshot averages for a set of window centres and times."""

    def __init__(self, lattice: LatticeSpec, dt: float, T: float, times, centres, a: float, tau: float, species: int, total):
        self.lattice = lattice
        self.times = list(times)
        self.centres = [tuple(np.atleast_1d(c)) for c in centres]
        self.total = np.broadcast_to(np.asarray(total, dtype=float), (species,))
        self.acc = [
            [CgstAccumulator(AveragingWindow(c, a, t, tau).resolve(lattice, dt, T), species) for c in self.centres]
            for t in self.times
        ]
        # (time row, slot): slot 0 is the centre time, 1 and 2 the window edges
        self.snap_steps: dict[int, list[tuple[int, int]]] = {}
        for i, row in enumerate(self.acc):
            w = row[0].window
            for slot, k in enumerate((w.t_index, w.first_step, w.last_step + 1)):
                self.snap_steps.setdefault(k, []).append((i, slot))
        nt, nw = len(self.times), len(self.centres)
        self.volume = np.full((nt, nw, species), np.nan)
        self.edges = np.full((nt, 2, nw, species), np.nan)
        self.fine = np.full((nt, nw, species), np.nan)
        self.first = min(row[0].window.first_step for row in self.acc)
        self.last = max(row[0].window.last_step for row in self.acc)

    def snapshot(self, k: int, counts: np.ndarray) -> None:
        for i, slot in self.snap_steps.get(k, ()):
            for j, acc in enumerate(self.acc[i]):
                w = acc.window
                vol = volume_average(counts, w, self.total)
                if slot:
                    self.edges[i, slot - 1, j] = vol
                else:
                    self.volume[i, j] = vol
                    self.fine[i, j] = counts[(slice(None),) + w.index] / self.total

    def observe(self, rec) -> None:
        if rec.step < self.first or rec.step > self.last:
            return
        for row in self.acc:
            if row[0].window.covers(rec.step):
                for acc in row:
                    acc.add(rec)

    def results(self) -> dict:
        samples = [[acc.finalize(self.total) for acc in row] for row in self.acc]
        return {
            "times": np.array(self.times),
            "centres": np.array(self.centres),
            "cgst": np.array([[s.concentration for s in row] for row in samples]),
            "moving": np.array([[s.moving for s in row] for row in samples]),
            "volume": self.volume.copy(),
            "volume_edges": self.edges.copy(),  # volume averages at t - tau and t + tau
            "fine": self.fine.copy(),
            "velocity": np.array([[s.velocity for s in row] for row in samples]),
            "diffusion": np.array([[s.diffusion for s in row] for row in samples]),
            "delta1": np.array([[s.delta1 for s in row] for row in samples]),
            "a_eff": samples[0][0].window.a_eff,
            "tau_eff": samples[0][0].window.tau_eff,
            "n_sites": samples[0][0].window.n_sites,
        }


def metrics_rows(res: dict, label: str) -> list[list]:
    rows = []
    for i, t in enumerate(res["times"]):
        row = [label, float(t)]
        for s in range(res["cgst"].shape[2]):
            row += list(discrepancy(res["volume"][i, :, s], res["cgst"][i, :, s]))
        rows.append(row)
    return rows


def profile_rows(res: dict) -> list[list]:
    rows = []
    for i, t in enumerate(res["times"]):
        for j, c in enumerate(res["centres"]):
            xy = list(c) + [""] * (2 - len(c))
            for s in range(res["cgst"].shape[2]):
                rows.append(
                    xy
                    + [float(t), s + 1, res["fine"][i, j, s], res["moving"][i, j, s], res["volume"][i, j, s], res["cgst"][i, j, s]]
                )
    return rows


# --------------------------------------------------------------------------- output


@dataclass
class RunResult:
    scenario: str
    tables: dict = field(default_factory=dict)  # file stem -> (header, rows)
    data: dict = field(default_factory=dict)  # arrays for programmatic use
    info: dict = field(default_factory=dict)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_outputs(result: RunResult, config: ScenarioConfig, out_dir: str | Path, timings: dict | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for stem, (header, rows) in result.tables.items():
        write_csv(out / f"{stem}.csv", header, rows)
        files.append(f"{stem}.csv")
    manifest = {
        "version": __version__,
        "config": config.to_dict(),
        "resolved": _jsonable(result.info.get("resolved", {})),
        "seeds": result.info.get("seeds", [config.seed]),
        "solver": _jsonable(result.info.get("solver", {})),
        "timings": timings or {},
        "files": files,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# --------------------------------------------------------------------------- helpers


def _snap(a: float, dx: float) -> float:
    return np.floor(a / dx + 1e-9) * dx


def _centres_1d(lo: float, hi: float, a: float, dx: float) -> np.ndarray:
    return tiling_centres(lo, hi, _snap(a, dx))


def _n_steps(T: float, dt: float) -> int:
    return int(np.floor(T / dt + 1e-9))


def _rng(cfg: ScenarioConfig, seed: int):
    return rng_for(seed + 2**32) if cfg.mode == STOCHASTIC else None


def _integer_counts(counts: np.ndarray) -> np.ndarray:
    return np.round(counts)


# --------------------------------------------------------------------------- verification


def run_verify(cfg: ScenarioConfig) -> RunResult:
    """Uniform stationary field; recover D and u from CGST functionals."""
    p = cfg.params
    dims = 2 if cfg.scenario == "verify-2d" else 1
    u = list(np.broadcast_to(np.asarray(p["u"], dtype=float), (dims,)))
    D = list(np.broadcast_to(np.asarray(p["D"], dtype=float), (dims,)))
    length = float(p.get("length", 1.0))
    total = float(p.get("total", 1e24))
    coef_rows, summary_rows, resolved = [], [], {}
    data = {}
    for dx in p["dx_list"]:
        lat = LatticeSpec((0.0,) * dims, (length,) * dims, (dx,) * dims)
        centres_1d = np.asarray(p.get("centres", _centres_1d(0.0, length, p["a"], dx)), dtype=float)
        centres = [tuple(c) for c in np.array(np.meshgrid(*[centres_1d] * dims, indexing="ij")).reshape(dims, -1).T]
        for scheme in p.get("schemes", ["bgrw", "grw"]):
            if scheme == "grw":
                dt = dx / max(abs(x) for x in u)  # unit advective shift
            else:
                dt_r = 1.0 / sum(2.0 * Di / dx**2 for Di in D)
                dt = p["tau"] / np.ceil(p["tau"] / dt_r - 1e-9)
            params = TransportParams(dt=dt, D=D, u=u, d=1, peclet="ignore" if cfg.mode == DETERMINISTIC else "raise")
            field = init_uniform(lat, 1, total)
            if cfg.mode == STOCHASTIC:
                field.counts = _integer_counts(field.counts)
            bounds = BoundarySpec.uniform(dims, NOFLUX)
            sampler = Sampler(lat, dt, p["T"], p["times"], centres, p["a"], p["tau"], 1, total)
            step = bgrw_step if scheme == "bgrw" else grw_step
            rng = _rng(cfg, cfg.seed)
            for k in range(sampler.last + 1):
                sampler.snapshot(k, field.counts)
                field, rec = step(field, params, bounds, cfg.mode, rng, step=k)
                sampler.observe(rec)
            sampler.snapshot(sampler.last + 1, field.counts)
            res = sampler.results()
            data[(scheme, dx)] = res
            resolved[f"{scheme}/{dx}"] = {"dt": dt, "a_eff": res["a_eff"], "tau_eff": res["tau_eff"], "N_a": res["n_sites"]}
            Dt = res["diffusion"][:, :, 0]
            V = res["velocity"][:, :, 0]
            for i, t in enumerate(res["times"]):
                for j, c in enumerate(res["centres"]):
                    dd = np.zeros((2, 2))
                    dd[:dims, :dims] = Dt[i, j]
                    vv = np.zeros(2)
                    vv[:dims] = V[i, j]
                    xy = list(c) + [""] * (2 - dims)
                    coef_rows.append(
                        [scheme, dx, float(t)] + xy + [1, dd[0, 0], dd[0, 1], dd[1, 0], dd[1, 1], vv[0], vv[1], res["cgst"][i, j, 0]]
                    )
            row = [scheme, dx]
            for a in range(dims):
                for b in range(dims):
                    row += [Dt[..., a, b].mean(), Dt[..., a, b].std()]
            for a in range(dims):
                row += [V[..., a].mean(), V[..., a].std()]
            summary_rows.append(row)
    names = ["D11", "D12", "D21", "D22"] if dims == 2 else ["D"]
    vel = ["u", "v"] if dims == 2 else ["u"]
    summary_header = ["scheme", "dx"] + [f"{n}_{s}" for n in names + vel for s in ("mean", "std")]
    return RunResult(
        cfg.scenario,
        {"coefficients": (COEF_COLUMNS, coef_rows), "coefficients_summary": (summary_header, summary_rows)},
        data,
        {"resolved": resolved},
    )


# --------------------------------------------------------------------------- saturated 1D


def run_bimolecular(cfg: ScenarioConfig) -> RunResult:
    p = cfg.params
    lat = lattice_1d(p.get("length", 1.0), p["dx"])
    N = float(p.get("particles_per_mole", AVOGADRO))
    total = float(p.get("moles", 1.0)) * N
    field = init_uniform(lat, 2, total)
    if cfg.mode == STOCHASTIC:
        field.counts = _integer_counts(field.counts)
    bounds = BoundarySpec({"left": SideCondition(DIRICHLET, 1), "right": SideCondition(NOFLUX)})
    dirichlet_resets(lat, bounds, field.counts)
    params = TransportParams(dt=p["dt"], D=[p["D"]], u=[p["u"]])
    system = ReactionSystem.bimolecular(p["K_r"])
    centres = _centres_1d(0.0, p.get("length", 1.0), p["a"], p["dx"])
    sampler = Sampler(lat, p["dt"], p["T"], p["times"], centres, p["a"], p["tau"], 2, N)
    rng = _rng(cfg, cfg.seed)
    worst = 0.0
    for k in range(sampler.last + 1):
        sampler.snapshot(k, field.counts)
        before = field.counts.sum(axis=0)
        field, rec, rr = saturated_reactive_step(
            field, params, system, bounds, mode=cfg.mode, rng=rng, step=k, particles_per_mole=N
        )
        if rr is not None and rec.reaction is not None:
            moved = rec.post.sum(axis=0)
            worst = max(worst, float(np.max(np.abs(rec.reaction.sum(axis=0)) / np.maximum(np.abs(moved), 1e-300))))
        sampler.observe(rec)
    sampler.snapshot(sampler.last + 1, field.counts)
    res = sampler.results()
    D = res["diffusion"][..., 0, 0]
    V = res["velocity"][..., 0]
    coef_header = ["species", "D_mean", "D_std", "u_mean", "u_std"]
    coef_rows = [[s + 1, D[..., s].mean(), D[..., s].std(), V[..., s].mean(), V[..., s].std()] for s in range(2)]
    info = {
        "resolved": {"a_eff": res["a_eff"], "tau_eff": res["tau_eff"], "N_a": res["n_sites"], "dt": p["dt"]},
        "solver": {"max_relative_sum_change": worst},
    }
    tables = {
        "profiles": (PROFILE_COLUMNS, profile_rows(res)),
        "metrics": (METRIC_COLUMNS, metrics_rows(res, "realization")),
        "coefficients": (coef_header, coef_rows),
    }
    return RunResult(cfg.scenario, tables, {"samples": res, "sum_conservation": worst}, info)


def aquifer1d_realization(p: dict, seed: int, mode: str = DETERMINISTIC) -> dict:
    """One realization of the 1D Monod aquifer problem; returns sampler arrays."""
    length = p.get("length", 1.0)
    lat = lattice_1d(length, p["dx"])
    n = lat.shape[0]
    dL = (n - 1) // 10
    f = p["field"]
    vel = sample_velocity_1d(KraichnanSpec(p["U"], f["variance"], f["corr_length"], f.get("modes", 100), seed), lat)
    mask1 = np.zeros(n, dtype=bool)
    mask1[:dL] = True
    N = float(p.get("particles_per_mole", AVOGADRO))
    field = init_uniform(lat, 2, N, [mask1, ~mask1])
    if mode == STOCHASTIC:
        field.counts = _integer_counts(field.counts)
    bounds = BoundarySpec({"left": SideCondition(NOFLUX), "right": SideCondition(NOFLUX)}, [ResetRegion(mask1, field.counts.copy())])
    params = TransportParams(dt=p["dt"], D=[p["D"]], u=[vel.values[0]], peclet=p.get("peclet", "raise"))
    r = p["reaction"]
    system = ReactionSystem.monod(r["alpha1"], r["alpha2"], r["M1"], r["M2"])
    centres = _centres_1d(0.0, length, p["a"], p["dx"])
    sampler = Sampler(lat, p["dt"], p["T"], p["times"], centres, p["a"], p["tau"], 2, N)
    rng = rng_for(seed + 2**32) if mode == STOCHASTIC else None
    deficit = 0.0
    for k in range(sampler.last + 1):
        sampler.snapshot(k, field.counts)
        field, rec, rr = saturated_reactive_step(
            field, params, system, bounds, mode=mode, rng=rng, step=k, particles_per_mole=N
        )
        deficit += rr.deficit
        sampler.observe(rec)
    sampler.snapshot(sampler.last + 1, field.counts)
    out = sampler.results()
    out["clip_deficit"] = deficit
    out["seed"] = seed
    return out


def _aquifer1d_job(args):
    return aquifer1d_realization(*args)


def run_aquifer1d(cfg: ScenarioConfig) -> RunResult:
    p = cfg.params
    seeds = [cfg.seed + i for i in range(cfg.ensemble)]
    jobs = [(p, s, cfg.mode) for s in seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            runs = list(ex.map(_aquifer1d_job, jobs))
    else:
        runs = [_aquifer1d_job(j) for j in jobs]
    return _ensemble_result(cfg, runs, seeds)


def _ensemble_result(cfg: ScenarioConfig, runs: list[dict], seeds: list[int]) -> RunResult:
    mean = dict(runs[0])
    for key in ("cgst", "moving", "volume", "volume_edges", "fine"):
        mean[key] = np.mean([r[key] for r in runs], axis=0)
    metrics = metrics_rows(runs[0], "realization")
    if len(runs) > 1:
        metrics += metrics_rows(mean, "ensemble")
        std = np.std([r["cgst"] for r in runs], axis=0)
    else:
        std = np.zeros_like(runs[0]["cgst"])
    profiles = [["realization"] + r for r in profile_rows(runs[0])]
    if len(runs) > 1:
        profiles += [["ensemble"] + r for r in profile_rows(mean)]
    tables = {
        "profiles": (["label"] + PROFILE_COLUMNS, profiles),
        "metrics": (METRIC_COLUMNS, metrics),
    }
    info = {
        "seeds": seeds,
        "resolved": {"a_eff": runs[0]["a_eff"], "tau_eff": runs[0]["tau_eff"], "N_a": runs[0]["n_sites"]},
        "solver": {"clip_deficit": [r.get("clip_deficit", 0.0) for r in runs]},
    }
    return RunResult(cfg.scenario, tables, {"runs": runs, "mean": mean, "cgst_std": std}, info)


# --------------------------------------------------------------------------- soils


def _top_head(T: float, final: float = 0.2, start: float = -3.0, rise: float = 3.2):
    t1 = T / 3.0

    def head(t: float) -> float:
        return start + rise * t / t1 if t <= t1 else final

    return head


def _soil_setup(p: dict, seed: int, dims: int):
    f = p["field"]
    if dims == 1:
        height = p.get("height", 3.0)
        lat = lattice_1d(height, p["dz"])
        sides = ("left", "right")
    else:
        width, height = p.get("width", 2.0), p.get("height", 3.0)
        lat = LatticeSpec((0.0, 0.0), (width, height), (p["dx"], p["dx"]))
        sides = ("bottom", "top")
    K = sample_lnK(KraichnanSpec(SILT_LOAM["K_sat"], f["variance"], f["corr_length"], f.get("modes", 100), seed), lat).values
    soil = SoilModel(**{**SILT_LOAM, "K_sat": K})
    z = lat.mesh()[-1]
    flow = initial_state(-z, soil, lat)
    fb = FlowBoundary({sides[0]: 0.0, sides[1]: _top_head(p["T"])})
    ctrl = LSchemeControl(p.get("L"), p.get("tol_rel", 1e-6), p.get("tol_abs", 1e-12), p.get("max_iter", 1000))
    c = np.zeros((2,) + lat.shape)
    if dims == 1:
        n = lat.shape[0]
        dL = (n - 1) // 10
        top = np.zeros(n, dtype=bool)
        top[n - dL - 1 :] = True
        oxy = np.zeros(n, dtype=bool)
        oxy[: n - dL - 1] = True
        c[0][top] = 1.0 / top.sum()
        c[1][oxy] = 1.0 / oxy.sum()
        reset = np.zeros(n, dtype=bool)
        reset[n - dL :] = True
    else:
        X, Z = lat.mesh()
        x0, x1, z0 = p.get("source", [0.5, 1.5, 2.7])
        reset = (X >= x0 - 1e-9) & (X <= x1 + 1e-9) & (Z >= z0 - 1e-9)
        c[0][reset] = p.get("c1", 1.0 / 25.0)
        c[1][~reset] = p.get("c2", 1.0 / 216.0)
    bounds = BoundarySpec.uniform(dims, NOFLUX)
    bounds.resets.append(ResetRegion(reset, c.copy()))
    bounds.validate(lat)
    r = p["reaction"]
    system = ReactionSystem.monod(r["alpha1"], r["alpha2"], r["M1"], r["M2"])
    return lat, soil, flow, fb, ctrl, c, bounds, system


def soil_run(p: dict, seed: int, windows: list[tuple[float, float]] | None = None, dims: int = 1) -> dict:
    """Coupled flow and reactive transport; one sampler per ``(a, tau)`` in ``windows``."""
    lat, soil, flow, fb, ctrl, c, bounds, system = _soil_setup(p, seed, dims)
    dt = p["dt"]
    windows = windows or [(p["a"], p["tau"])]
    if dims == 1:
        lines = [None]
        centre_sets = {w: [(x,) for x in _centres_1d(0.0, lat.upper[0], w[0], lat.dx[0])] for w in windows}
    else:
        lines = p["lines"]
        zc = _centres_1d(0.0, lat.upper[1], p["a"], lat.dx[1])
        centre_sets = {(w, x): [(x, z) for z in zc] for w in windows for x in lines}
    samplers = {
        key: Sampler(lat, dt, p["T"], p["times"], cs, (key[0] if dims == 1 else key[0][0]), (key[1] if dims == 1 else key[0][1]), 2, AVOGADRO)
        for key, cs in centre_sets.items()
    }
    last = max(s.last for s in samplers.values())
    snap_idx = {int(round(t / dt)): t for t in p["times"]}
    flow_rows, flow_iters, react_iters = [], [], []
    for k in range(last + 1):
        molecules = c * flow.theta * AVOGADRO
        for s in samplers.values():
            s.snapshot(k, molecules)
        if k in snap_idx:
            flow_rows += _flow_rows(lat, flow, snap_idx[k])
        new_flow, it = l_scheme_flow_step(flow, soil, ctrl, fb, dt, lat)
        flow_iters.append(it)
        res = unsaturated_reactive_step(
            c, flow.theta, new_flow.theta, new_flow.q, p["D"], system, dt, bounds, lat, step=k, peclet=p.get("peclet", "upwind")
        )
        react_iters.append(res.iterations)
        c, flow = res.c, new_flow
        for s in samplers.values():
            s.observe(res.record)
    for s in samplers.values():
        s.snapshot(last + 1, c * flow.theta * AVOGADRO)
    return {
        "samples": {key: s.results() for key, s in samplers.items()},
        "flow_rows": flow_rows,
        "flow_iterations": np.array(flow_iters),
        "reaction_iterations": np.array(react_iters),
        "seed": seed,
        "final_c": c,
        "final_flow": flow,
    }


def _flow_rows(lat: LatticeSpec, flow, t: float) -> list[list]:
    qn = node_flux(flow.q, lat)
    if lat.dims == 1:
        z = lat.coords(0)
        return [["", z[i], t, flow.psi[i], flow.theta[i], "", qn[0][i]] for i in range(z.size)]
    X, Z = lat.mesh()
    return [
        [X.flat[i], Z.flat[i], t, flow.psi.flat[i], flow.theta.flat[i], qn[0].flat[i], qn[1].flat[i]]
        for i in range(lat.size)
    ]


def _iteration_stats(it: np.ndarray) -> dict:
    return {"min": int(it.min()), "max": int(it.max()), "mean": float(it.mean()), "median": float(np.median(it))}


def run_soil(cfg: ScenarioConfig) -> RunResult:
    p = cfg.params
    dims = 2 if cfg.scenario == "soil-2d" else 1
    out = soil_run(p, cfg.seed, dims=dims)
    metrics, profiles = [], []
    for key, res in out["samples"].items():
        label = "column" if dims == 1 else f"line_x={key[1]:g}"
        metrics += metrics_rows(res, label)
        profiles += [[label] + r for r in profile_rows(res)]
    first = next(iter(out["samples"].values()))
    info = {
        "seeds": [cfg.seed],
        "resolved": {"a_eff": first["a_eff"], "tau_eff": first["tau_eff"], "N_a": first["n_sites"], "dt": p["dt"]},
        "solver": {
            "flow_iterations": _iteration_stats(out["flow_iterations"]),
            "reaction_iterations": _iteration_stats(out["reaction_iterations"]),
        },
    }
    tables = {
        "profiles": (["label"] + PROFILE_COLUMNS, profiles),
        "metrics": (METRIC_COLUMNS, metrics),
        "flow": (FLOW_COLUMNS, out["flow_rows"]),
    }
    return RunResult(cfg.scenario, tables, out, info)


def run_sweep(cfg: ScenarioConfig, tau_list=None, a_list=None) -> RunResult:
    """Discrepancies over ``tau`` at fixed ``a`` and over ``a`` at fixed ``tau`` from one run."""
    p = cfg.params
    tau_list = list(tau_list if tau_list is not None else p["tau_list"])
    a_list = list(a_list if a_list is not None else p["a_list"])
    windows = [(p["a"], t) for t in tau_list] + [(a, p["tau"]) for a in a_list]
    windows = list(dict.fromkeys(windows))
    out = soil_run(p, cfg.seed, windows=windows)
    rows = []
    for (a, tau), res in out["samples"].items():
        for r in metrics_rows(res, "sweep"):
            rows.append([a, tau] + r[1:])
    header = ["a", "tau", "t", "e_c1", "eps_c1", "e_c2", "eps_c2"]
    info = {
        "seeds": [cfg.seed],
        "resolved": {f"{a}/{tau}": {"a_eff": r["a_eff"], "tau_eff": r["tau_eff"]} for (a, tau), r in out["samples"].items()},
        "solver": {"flow_iterations": _iteration_stats(out["flow_iterations"])},
    }
    return RunResult(cfg.scenario, {"sweep": (header, rows)}, out, info)


# --------------------------------------------------------------------------- saturated 2D


def run_aquifer2d(cfg: ScenarioConfig) -> RunResult:
    p = cfg.params
    width, height = p.get("width", 20.0), p.get("height", 10.0)
    dx = p["dx"]
    lat = LatticeSpec((0.0, 0.0), (width, height), (dx, dx))
    f = p["field"]
    vel = sample_velocity_2d(KraichnanSpec(p["U"], f["variance"], f["corr_length"], f.get("modes", 100), cfg.seed), lat).values
    X, Y = lat.mesh()
    side = p.get("source_size", 0.5)
    inj = (X <= side + 1e-9) & (np.abs(Y - height / 2) <= side / 2 + 1e-9)
    counts = np.zeros((2,) + lat.shape)
    counts[0][inj] = p.get("c1", 2.5) * AVOGADRO
    counts[1][~inj] = p.get("c2", 0.1) * AVOGADRO
    field = ParticleField(lat, counts, counts.sum(axis=(1, 2)))
    bounds = BoundarySpec(
        {
            "left": SideCondition(DIRICHLET, 1),
            "bottom": SideCondition(DIRICHLET, 1),
            "top": SideCondition(DIRICHLET, 1),
            "right": SideCondition(NOFLUX),
        }
    )
    dirichlet_resets(lat, bounds, counts)
    bounds.resets.append(ResetRegion(inj, counts.copy()))
    params = TransportParams(dt=p["dt"], D=[p["D"], p["D"]], u=[vel[0], vel[1]], peclet=p.get("peclet", "upwind"))
    r = p["reaction"]
    system = ReactionSystem.monod(r["alpha1"], r["alpha2"], r["M1"], r["M2"])
    y_line = p.get("line", height / 2)
    centres = [(x, y_line) for x in _centres_1d(0.0, width, p["a"], dx)]
    sampler = Sampler(lat, p["dt"], p["T"], p["times"], centres, p["a"], p["tau"], 2, AVOGADRO)
    deficit = 0.0
    for k in range(sampler.last + 1):
        sampler.snapshot(k, field.counts)
        field, rec, rr = saturated_reactive_step(field, params, system, bounds, step=k)
        deficit += rr.deficit
        sampler.observe(rec)
    sampler.snapshot(sampler.last + 1, field.counts)
    res = sampler.results()
    info = {
        "seeds": [cfg.seed],
        "resolved": {"a_eff": res["a_eff"], "tau_eff": res["tau_eff"], "N_a": res["n_sites"], "dt": p["dt"]},
        "solver": {"clip_deficit": deficit},
    }
    tables = {
        "profiles": (PROFILE_COLUMNS, profile_rows(res)),
        "metrics": (METRIC_COLUMNS, metrics_rows(res, "midline")),
    }
    return RunResult(cfg.scenario, tables, {"samples": res, "final_counts": field.counts}, info)


# --------------------------------------------------------------------------- dispatch


_RUNNERS = {
    "verify-1d": run_verify,
    "verify-2d": run_verify,
    "bimolecular-1d": run_bimolecular,
    "aquifer-1d": run_aquifer1d,
    "soil-1d": run_soil,
    "soil-2d": run_soil,
    "aquifer-2d": run_aquifer2d,
    "sweep-appendix-b": run_sweep,
}


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> tuple[RunResult, dict | None]:
    """Run a validated config; writes CSVs and ``manifest.json`` when ``out_dir`` is given."""
    cfg.validate()
    t0 = time.perf_counter()
    result = _RUNNERS[cfg.scenario](cfg)
    timings = {"wall_seconds": time.perf_counter() - t0}
    out_dir = out_dir or cfg.out
    manifest = write_outputs(result, cfg, out_dir, timings) if out_dir else None
    return result, manifest


def run_ensemble(cfg: ScenarioConfig, n: int, out_dir: str | Path | None = None):
    if cfg.scenario != "aquifer-1d":
        raise ConfigurationError(f"scenario {cfg.scenario!r} has no randomized-field ensemble")
    cfg = copy.deepcopy(cfg)
    cfg.ensemble = n
    return run_scenario(cfg, out_dir)
