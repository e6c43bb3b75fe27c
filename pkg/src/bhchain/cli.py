"""Command-line front end: ``bhchain {orbit,lyapunov,ensemble,sweep,theory}``.

A run is described by a JSON config; ``--key.path=value`` flags override
entries of that file.  Every run writes CSV/JSON results into ``--out`` and
finishes by writing ``manifest.json`` with checksums of everything written.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 partial completion.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .chaos import LyapunovConfig, LyapunovMode, lyapunov
from .ensemble import EnsembleSpec, default_workers, evolve_ensemble, filled_base, homogeneous_base, make_ensemble
from .integrate import IntegratorConfig, Status, integrate_orbit, log_schedule
from .model import ActionAngleState, ChainParams, action_angle_to_pq
from .scaling import Series, detect_crossover, fit_exponent, predict_exponents, fit_diffusion_coefficients
from . import theory

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTIAL = 0, 1, 2, 3
KINDS = ("orbit", "lyapunov", "ensemble", "sweep", "theory")
FMT = "%.16e"


class ConfigError(ValueError):
    pass


# --- configuration -----------------------------------------------------------

DEFAULTS = {
    "params": {"L": 10, "U": 1.0, "mu": 0.0, "J": 1.0, "boundary": "hardwall", "norm": 1.0},
    "initial": {"kind": "filled", "fillings": {"5": 1.0}},
    "integrator": {"t_end": 100.0, "t_min": 0.01, "points_per_decade": 20, "schedule": "log",
                   "n_samples": 1001, "rel_tol": 1e-15, "abs_tol": 1e-15,
                   "constraint_tol": 0.01, "mode": "unconstrained"},
    "ensemble": {"dist": "gaussian", "width": 1e-3, "count": 100, "angle_init": "uniform_random",
                 "empty_floor": 1e-12, "spread": "relative", "renormalize": True},
    "lyapunov": {"t_total": 1000.0, "t_transient": 10.0, "delta0": 1e-9, "renorm_interval": 1.0,
                 "mode": "per_site", "rel_tol": 1e-10, "abs_tol": 1e-10},
    "fit": {"window": [10.0, 1000.0], "series": "4m", "fill_threshold": 0.1},
    "sweep": {"task": "lyapunov", "U": None, "mu": None},
    "theory": {"I": None, "variance_csv": None, "fit_window": None, "dnse_t_end": None,
               "dnse_points": 2001, "mc_samples": 0},
    "seed": 0,
    "workers": None,
}


def _merge(base: dict, upd: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("fillings",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_path(d: dict, path: str, value):
    keys = path.split(".")
    cur = d
    for k in keys[:-1]:
        if not isinstance(cur.get(k), dict):
            cur[k] = {}
        cur = cur[k]
    cur[keys[-1]] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


@dataclass
class RunConfig:
    """Fully resolved run description (all defaults filled in)."""

    experiment: str
    raw: dict = field(repr=False)

    @classmethod
    def from_dict(cls, d: dict, experiment: Optional[str] = None) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        exp = experiment or d.get("experiment")
        if exp not in KINDS:
            raise ConfigError(f"experiment must be one of {KINDS}, got {exp!r}")
        if d.get("experiment") not in (None, exp):
            raise ConfigError(f"config is for {d['experiment']!r}, command is {exp!r}")
        unknown = set(d) - set(DEFAULTS) - {"experiment", "out"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        raw = _merge(DEFAULTS, d)
        raw["experiment"] = exp
        raw.pop("out", None)
        cfg = cls(exp, raw)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    # typed views
    def params(self, **changes) -> ChainParams:
        p = dict(self.raw["params"])
        p.update(changes)
        return ChainParams(**p)

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def workers(self) -> int:
        w = self.raw.get("workers")
        return default_workers() if w is None else int(w)

    def initial(self, params: ChainParams) -> ActionAngleState:
        spec = self.raw["initial"]
        kind = spec.get("kind")
        if kind == "filled":
            fill = {int(k): float(v) for k, v in spec["fillings"].items()}
            base = filled_base(params.L, fill, params.norm)
            phi = spec.get("phi")
            return base if phi is None else ActionAngleState(base.I, phi)
        if kind == "explicit":
            I = np.asarray(spec["I"], dtype=float)
            if I.size != params.L:
                raise ConfigError(f"initial.I has {I.size} entries, L = {params.L}")
            I = I * params.norm / I.sum()
            return ActionAngleState(I, spec.get("phi", np.zeros(params.L)))
        if kind == "homogeneous":
            return homogeneous_base(params.L, params.norm)
        if kind == "random_uniform":
            rng = np.random.default_rng(spec.get("seed", self.seed))
            I = rng.uniform(size=params.L)
            I *= params.norm / I.sum()
            phi = rng.uniform(0, 2 * np.pi, params.L) if spec.get("phi") == "random" else np.zeros(params.L)
            return ActionAngleState(I, phi)
        raise ConfigError(f"unknown initial.kind {kind!r}")

    def sample_times(self, t_end: Optional[float] = None) -> np.ndarray:
        ic = self.raw["integrator"]
        t_end = float(ic["t_end"] if t_end is None else t_end)
        if ic["schedule"] == "log":
            return np.concatenate([[0.0], log_schedule(float(ic["t_min"]), t_end, int(ic["points_per_decade"]))])
        if ic["schedule"] == "linear":
            return np.linspace(0.0, t_end, int(ic["n_samples"]))
        raise ConfigError(f"unknown integrator.schedule {ic['schedule']!r}")

    def integrator(self, t_end: Optional[float] = None) -> IntegratorConfig:
        ic = self.raw["integrator"]
        return IntegratorConfig(t_end=float(ic["t_end"] if t_end is None else t_end),
                                sample_times=self.sample_times(t_end),
                                rel_tol=float(ic["rel_tol"]), abs_tol=float(ic["abs_tol"]),
                                constraint_tol=float(ic["constraint_tol"]), mode=ic["mode"])

    def ensemble_spec(self, base: ActionAngleState) -> EnsembleSpec:
        e = dict(self.raw["ensemble"])
        e.setdefault("seed", self.seed)
        return EnsembleSpec(base=base, **e)

    def lyapunov_cfg(self) -> LyapunovConfig:
        l = dict(self.raw["lyapunov"])
        l.setdefault("seed", self.seed)
        return LyapunovConfig(**l)

    def grid(self) -> list:
        s = self.raw["sweep"]
        Us = s.get("U") or [self.raw["params"]["U"]]
        mus = s.get("mu") or [self.raw["params"]["mu"]]
        return [(float(u), float(m)) for u in Us for m in mus]

    def validate(self):
        try:
            p = self.params()
            # theory on an explicit action vector needs no initial condition
            if not (self.experiment == "theory" and self.raw["theory"]["I"] is not None
                    and not self.raw["theory"]["dnse_t_end"]):
                self.initial(p)
            self.integrator()
            if self.experiment in ("ensemble",) or self.raw["sweep"]["task"] == "ensemble":
                self.ensemble_spec(self.initial(p))
            if self.experiment == "lyapunov" or (self.experiment == "sweep" and self.raw["sweep"]["task"] == "lyapunov"):
                self.lyapunov_cfg()
            Series(self.raw["fit"]["series"])
            if self.experiment == "sweep":
                if self.raw["sweep"]["task"] not in ("lyapunov", "ensemble", "orbit"):
                    raise ConfigError("sweep.task must be lyapunov, ensemble or orbit")
                if not self.grid():
                    raise ConfigError("sweep grid is empty")
            if self.workers < 1:
                raise ConfigError("workers must be >= 1")
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


# --- output helpers ------------------------------------------------------------

class Output:
    """Tracks written files for the manifest."""

    def __init__(self, out: Path):
        self.dir = out
        self.files = []
        out.mkdir(parents=True, exist_ok=True)

    def _register(self, path: Path):
        rel = str(path.relative_to(self.dir))
        if rel not in self.files:
            self.files.append(rel)

    def csv(self, name: str, header: list, rows: np.ndarray):
        path = self.dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        np.savetxt(path, rows, fmt=FMT, delimiter=",", header=",".join(header),
                   comments="", newline="\n")
        self._register(path)

    def json(self, name: str, obj):
        path = self.dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        self._register(path)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out: Path, config: Optional[dict], files: list, statuses: dict,
                   started: float, exit_code: int, error: Optional[str] = None):
    out.mkdir(parents=True, exist_ok=True)
    inventory = [{"path": f, "sha256": _sha256(out / f)} for f in files if (out / f).exists()]
    manifest = dict(config=config, tool="bhchain", version=__version__,
                    platform=dict(python=platform.python_version(), system=platform.platform(),
                                  numpy=np.__version__),
                    started=started, finished=time.time(), exit_code=exit_code,
                    complete=exit_code == EXIT_OK, tasks=statuses, files=inventory, error=error)
    with open(out / "manifest.json", "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


# --- commands ------------------------------------------------------------------

def _orbit_rows(traj):
    I, phi = traj.actions, traj.angles
    return np.column_stack([traj.times, I, phi, traj.energy, traj.constraint])


def cmd_orbit(cfg: RunConfig, out: Output, prefix: str = "", params: Optional[ChainParams] = None) -> dict:
    p = params or cfg.params()
    res = integrate_orbit(action_angle_to_pq(cfg.initial(p)), p, cfg.integrator())
    L = p.L
    header = ["t"] + [f"I_{n}" for n in range(1, L + 1)] + [f"phi_{n}" for n in range(1, L + 1)] + ["energy", "constraint"]
    out.csv(prefix + "orbit.csv", header, _orbit_rows(res.trajectory))
    return {prefix + "orbit": res.status.value}


def _lyapunov_task(args):
    cfg_dict, U, mu = args
    cfg = RunConfig.from_dict(cfg_dict)
    p = cfg.params(U=U, mu=mu)
    try:
        r = lyapunov(action_angle_to_pq(cfg.initial(p)), p, cfg.lyapunov_cfg())
    except Exception as exc:  # per-point failures are recorded, the grid continues
        return dict(U=U, mu=mu, status=f"error: {exc}")
    return dict(U=U, mu=mu, status=r.status.value, energy=r.energy, lambda_max=r.lambda_max,
                per_site=None if r.lambda_per_site is None else r.lambda_per_site.tolist(),
                spectrum=None if r.spectrum is None else r.spectrum.tolist(),
                converged=r.converged)


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=1))


def cmd_lyapunov(cfg: RunConfig, out: Output, prefix: str = "") -> dict:
    L = cfg.raw["params"]["L"]
    mode = LyapunovMode(cfg.raw["lyapunov"]["mode"])
    jobs = [(cfg.to_dict(), U, mu) for U, mu in cfg.grid()]
    results = _map(_lyapunov_task, jobs, cfg.workers)
    ncols = 2 * L if mode is LyapunovMode.SPECTRUM else L
    label = "lambdaspec" if mode is LyapunovMode.SPECTRUM else "lambda"
    header = ["U", "mu", "energy", "ok", "converged", "lambda_max"] + [f"{label}_{k}" for k in range(1, ncols + 1)]
    rows, statuses = [], {}
    for k, r in enumerate(results):
        ok = r["status"] == Status.COMPLETED.value
        statuses[f"{prefix}point_{k:04d}"] = r["status"]
        vals = r.get("spectrum") if mode is LyapunovMode.SPECTRUM else r.get("per_site")
        if vals is None:
            vals = [np.nan] * ncols
        rows.append([r["U"], r["mu"], r.get("energy", np.nan), float(ok), float(r.get("converged", False)),
                     r.get("lambda_max", np.nan)] + list(vals))
    out.csv(prefix + "lyapunov.csv", header, np.array(rows))
    return statuses


def _fit_or_none(series, site, window):
    try:
        return fit_exponent(series, site, window).to_dict()
    except ValueError as exc:
        return {"site": site, "error": str(exc)}


def cmd_ensemble(cfg: RunConfig, out: Output, prefix: str = "", params: Optional[ChainParams] = None) -> dict:
    p = params or cfg.params()
    base = cfg.initial(p)
    spec = cfg.ensemble_spec(base)
    icfg = cfg.integrator()
    series = evolve_ensemble(make_ensemble(spec, p), p, icfg, workers=cfg.workers)
    L = p.L
    header = ["t"] + [f"var_{n}" for n in range(1, L + 1)] + [f"mean_{n}" for n in range(1, L + 1)]
    out.csv(prefix + "variance.csv", header, np.column_stack([series.times, series.var, series.mean]))
    header = ["t"] + [f"cov_{n}_{n + 1}" for n in range(1, L)] + ["members"]
    out.csv(prefix + "covariance.csv", header, np.column_stack([series.times, series.cov_next, series.members]))
    window = tuple(cfg.raw["fit"]["window"])
    out.json(prefix + "fits.json", dict(window=window, valid_until=series.valid_until,
                                        fits=[_fit_or_none(series, n, window) for n in range(1, L + 1)]))
    preds = predict_exponents(p, base, cfg.raw["fit"]["series"], cfg.raw["fit"]["fill_threshold"])
    out.json(prefix + "predictions.json", [e.to_dict() for e in preds])
    cross = {}
    for n in range(1, L + 1):
        c = detect_crossover(series, n)
        if c is not None and any(v is not None for v in c):
            cross[str(n)] = dict(t_star=c[0], t_star2=c[1])
    if cross:
        out.json(prefix + "crossover.json", cross)
    truncated = series.valid_until < icfg.t_end
    return {prefix + "ensemble": "truncated" if truncated else "completed"}


def cmd_sweep(cfg: RunConfig, out: Output) -> dict:
    task = cfg.raw["sweep"]["task"]
    if task == "lyapunov":
        return cmd_lyapunov(cfg, out)
    statuses = {}
    rows = []
    for k, (U, mu) in enumerate(cfg.grid()):
        p = cfg.params(U=U, mu=mu)
        prefix = f"point_{k:04d}/"
        try:
            st = (cmd_ensemble if task == "ensemble" else cmd_orbit)(cfg, out, prefix, params=p)
            ok = all(v == "completed" for v in st.values())
            statuses.update(st)
        except (ArithmeticError, ValueError) as exc:
            statuses[prefix + task] = f"error: {exc}"
            ok = False
        rows.append([k, U, mu, float(ok)])
    out.csv("sweep.csv", ["index", "U", "mu", "ok"], np.array(rows))
    return statuses


def _theory_point(I, p):
    res = {}
    h2, h2t = [], []
    for j in range(1, p.L + 1):
        for lst, fn in ((h2, theory.perturb_coeff_h2), (h2t, theory.perturb_coeff_h2tilde)):
            try:
                lst.append(fn(I, j, p))
            except theory.ResonanceDivergence as exc:
                lst.append(f"ResonanceDivergence: {exc}")
            except ValueError as exc:
                lst.append(f"error: {exc}")
    res["h2"], res["h2tilde"] = h2, h2t
    res["leading"] = theory.diffusion_matrix_leading(I, p).to_dict()
    res["langevin"] = theory.diffusion_matrix_langevin(I, p).to_dict()
    res["sigma_offdiag"] = theory.langevin_sigma(I, p)[1].tolist()
    if np.all(I > 0):
        res["phidot_correlation"] = theory.phidot_correlation(I, p).tolist()
    return res


def _read_variance_csv(path):
    from .ensemble import VarianceSeries
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    L = sum(h.startswith("var_") for h in header)
    return VarianceSeries(data[:, 0], data[:, 1 + L:1 + 2 * L], data[:, 1:1 + L],
                          np.zeros((data.shape[0], L - 1)), np.zeros(data.shape[0], int), float(data[-1, 0]))


def cmd_theory(cfg: RunConfig, out: Output) -> dict:
    p = cfg.params()
    th = cfg.raw["theory"]
    base = None if th.get("I") is not None and not th.get("dnse_t_end") else cfg.initial(p)
    I = np.asarray(th["I"], dtype=float) if th.get("I") is not None else base.I
    if I.size != p.L:
        raise ConfigError(f"theory.I has {I.size} entries, L = {p.L}")
    statuses = {}
    res = dict(I=I.tolist(), **_theory_point(I, p))
    if th.get("mc_samples"):
        mc = theory.angle_average_mc(I, p, int(th["mc_samples"]), cfg.seed, "sobol", cfg.workers)
        res["angle_average_mc"] = dict(normalized=mc.normalized, normalized_se=mc.normalized_se,
                                       raw=mc.raw, raw_se=mc.raw_se, samples=mc.samples)
    out.json("theory.json", res)
    statuses["theory"] = "completed"

    if th.get("variance_csv"):
        series = _read_variance_csv(th["variance_csv"])
        window = th.get("fit_window") or cfg.raw["fit"]["window"]
        fitted = fit_diffusion_coefficients(series, window, strict=False)
        m = series.window(*window)
        Ibar = series.mean[m].mean(axis=0)
        D = theory.diffusion_matrix_langevin(Ibar, p)
        pred = np.abs(theory.action_covariance_rate(D, Ibar))
        rows = []
        for n in range(1, p.L):
            v = fitted["var"].get(n, np.nan)
            rows.append([n, n, v, pred[n - 1, n - 1], np.log(abs(v)) if v else np.nan,
                         np.log(pred[n - 1, n - 1]) if pred[n - 1, n - 1] > 0 else np.nan])
        out.csv("diffusion_table.csv", ["n", "m", "fitted", "predicted", "log_fitted", "log_predicted"], np.array(rows))
        statuses["diffusion_table"] = "completed"

    if th.get("dnse_t_end"):
        t_end = float(th["dnse_t_end"])
        t = np.linspace(0.0, t_end, int(th["dnse_points"]))
        icfg = IntegratorConfig(t_end=t_end, sample_times=t, rel_tol=cfg.raw["integrator"]["rel_tol"],
                                abs_tol=cfg.raw["integrator"]["abs_tol"],
                                constraint_tol=cfg.raw["integrator"]["constraint_tol"])
        sim = integrate_orbit(action_angle_to_pq(base), p, icfg)
        n_ok = len(sim.trajectory)
        cols = [t[:n_ok]]
        for n in range(p.L):
            if base.I[n] > 0 and p.mu > 0:
                cols.append(np.abs(theory.dnse_homogeneous(base.I[n], p, t[:n_ok])) ** 2)
            else:
                cols.append(np.full(n_ok, np.nan))
        cols.append(sim.trajectory.actions)
        header = ["t"] + [f"dnse_{n}" for n in range(1, p.L + 1)] + [f"I_{n}" for n in range(1, p.L + 1)]
        out.csv("dnse.csv", header, np.column_stack(cols))
        statuses["dnse"] = sim.status.value
    return statuses


COMMANDS = dict(orbit=cmd_orbit, lyapunov=cmd_lyapunov, ensemble=cmd_ensemble, sweep=cmd_sweep, theory=cmd_theory)


def _exit_code(statuses: dict) -> int:
    vals = list(statuses.values())
    good = [v in ("completed", "truncated") for v in vals]
    if all(v == "completed" for v in vals):
        return EXIT_OK
    if not any(good):
        return EXIT_NUMERIC
    return EXIT_PARTIAL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bhchain", description=__doc__.splitlines()[0],
                                 epilog="Extra --section.key=value flags override config entries.")
    ap.add_argument("command", choices=KINDS)
    ap.add_argument("--config", type=Path, help="JSON run configuration")
    ap.add_argument("--out", type=Path, default=Path("bhchain_out"), help="output directory")
    ap.add_argument("--seed", type=int, help="master seed")
    ap.add_argument("--workers", type=int, help="worker processes (default $BHCHAIN_WORKERS or 1)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    started = time.time()
    out = args.out
    try:
        d = {}
        if args.config is not None:
            try:
                with open(args.config) as fh:
                    d = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        for item in extra:
            if not item.startswith("--") or "=" not in item:
                raise ConfigError(f"unrecognized argument {item!r}; overrides use --key.path=value")
            key, val = item[2:].split("=", 1)
            if not isinstance(d, dict):
                raise ConfigError("config must be a JSON object")
            _set_path(d, key, _parse_value(val))
        if isinstance(d, dict):
            if args.seed is not None:
                d["seed"] = args.seed
            if args.workers is not None:
                d["workers"] = args.workers
        cfg = RunConfig.from_dict(d, args.command)
    except ConfigError as exc:
        print(f"bhchain: config error: {exc}", file=sys.stderr)
        write_manifest(out, None, [], {}, started, EXIT_CONFIG, str(exc))
        return EXIT_CONFIG

    output = Output(out)
    try:
        statuses = COMMANDS[args.command](cfg, output)
        code = _exit_code(statuses)
        error = None
    except ConfigError as exc:
        statuses, code, error = {}, EXIT_CONFIG, str(exc)
        print(f"bhchain: config error: {exc}", file=sys.stderr)
    except (ArithmeticError, ValueError, FloatingPointError) as exc:
        statuses, code, error = {}, EXIT_NUMERIC, str(exc)
        print(f"bhchain: numerical failure: {exc}", file=sys.stderr)
    except KeyboardInterrupt:
        write_manifest(out, cfg.to_dict(), output.files, {}, started, EXIT_PARTIAL, "interrupted")
        raise
    write_manifest(out, cfg.to_dict(), output.files, statuses, started, code, error)
    return code


if __name__ == "__main__":
    sys.exit(main())
