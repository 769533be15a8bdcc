"""Batch command line: ``serfmem <experiment> [options]``.

Each experiment writes a CSV of plot data, a JSON summary or fit report, and
``manifest.json``. Parameters come from (highest priority first) command-line
flags, the experiment's table in ``--config`` (e.g. ``[map-storage]``) and
built-in defaults. Physical constants come from the ``[cesium]`` table.

Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import re
import secrets
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import io
from .darkstate import BlochOrientation, EigenSelectionError, storage_map
from .ellipse import anomaly_offset, fit_ellipse, mean_phase_shift
from .montecarlo import CSV_HEADER as COLLIDE_HEADER
from .montecarlo import SCHEMES, mc_coherence_decay
from .params import CesiumParams, ConfigError, alpha_ellipticity, load_config
from .retrieval import retrieval_map
from .sequence import (FitError, MeasurementModel, SequenceConfig, demodulate_trace, dark_evolution,
                       eraser_field, faraday_trace, fit_lifetime, full_transform_exact,
                       full_transform_first_order, phase_line_fit, transform_ellipticity)

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

HEADERS = {
    "map-storage": ("phi_l", "eta_a", "phi_a", "s_x", "s_y"),
    "map-retrieval": ("phi_a", "eta_l_out", "phi_l_out"),
    "full-transform": ("phi_l", "eta_l_out", "phi_l_out"),
    "eraser-scan": ("omega_b_t", "omega_b", "ellipticity"),
    "collide": COLLIDE_HEADER,
    "lifetime-scan": ("t", "retrieved_power"),
    "tomography": ("phi_l", "phi_a_measured", "phi_l_out"),
}


@dataclass(frozen=True)
class Param:
    name: str
    kind: type
    default: object
    help: str
    check: Callable[[object], bool] | None = None
    rule: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _alpha_ok(x):
    return x is None or abs(x) < 1


ALPHA = Param("alpha", float, None, "ellipticity parameter (default f*Gamma/Delta)", _alpha_ok, "|alpha| < 1")
GRID = Param("grid", int, 360, "number of phase points", lambda n: n >= 64, ">= 64")

EXPERIMENT_PARAMS: dict[str, tuple[Param, ...]] = {
    "map-storage": (
        ALPHA, GRID,
        Param("eta_l", float, 1e-3, "input signal/control ratio", _nonneg, ">= 0"),
    ),
    "map-retrieval": (
        ALPHA, GRID,
        Param("eta_a", float, 1e-3, "stored spin tilt", _nonneg, ">= 0"),
    ),
    "full-transform": (
        ALPHA, GRID,
        Param("eta_l", float, 1e-3, "input signal/control ratio", _nonneg, ">= 0"),
        Param("omega_b", float, 0.0, "Larmor frequency during storage (rad/s)"),
        Param("t_store", float, 0.1, "storage time (s)", _nonneg, ">= 0"),
        Param("tau_s", float, 0.3, "spin-tilt 1/e lifetime (s)", _pos, "> 0"),
    ),
    "eraser-scan": (
        ALPHA, GRID,
        Param("t_store", float, 0.1, "storage time (s)", _pos, "> 0"),
        Param("n_fields", int, 121, "number of omega_b*t points over one turn", lambda n: n >= 2, ">= 2"),
    ),
    "collide": (
        Param("scheme", str, "dm1", "stored coherence: dm1 or dm2", lambda s: s in SCHEMES, "dm1|dm2"),
        Param("rse", float, 1000.0, "per-atom spin-exchange rate (1/s)", _pos, "> 0"),
        Param("duration", float, 0.1, "simulated time (s)", _pos, "> 0"),
        Param("n_atoms", int, 200, "ensemble size", lambda n: n >= 2, ">= 2"),
        Param("eta", float, 1e-2, "stored tilt", lambda x: 0 <= x <= 0.1, "in [0, 0.1]"),
        Param("samples", int, 41, "trace points", lambda n: n >= 3, ">= 3"),
        Param("trials", int, 1, "independent trials averaged", _pos, ">= 1"),
        Param("workers", int, 1, "worker processes", _pos, ">= 1"),
    ),
    "lifetime-scan": (
        ALPHA,
        Param("tau", float, 0.43, "retrieved-power 1/e time (s)", _pos, "> 0"),
        Param("tmax", float, 1.0, "longest storage time (s)", _pos, "> 0"),
        Param("n_points", int, 21, "storage times sampled", lambda n: n >= 3, ">= 3"),
        Param("noise", float, 0.0, "relative Gaussian noise on the power", _nonneg, ">= 0"),
        Param("eta_l", float, 1e-3, "input signal/control ratio", _pos, "> 0"),
        Param("phi_l", float, 0.0, "input azimuth (rad)"),
    ),
    "tomography": (
        ALPHA,
        Param("grid", int, 36, "number of input phases", lambda n: n >= 8, ">= 8"),
        Param("eta_l", float, 1e-3, "input signal/control ratio", _pos, "> 0"),
        Param("omega_b", float, 1.34 * 2 * math.pi, "Larmor frequency during storage (rad/s)"),
        Param("t_store", float, 0.1, "storage time (s)", _nonneg, ">= 0"),
        Param("tau_s", float, 0.3, "spin-tilt 1/e lifetime (s)", _pos, "> 0"),
        Param("beta", float, 1.0, "Faraday constant (rad per unit spin)", lambda b: b != 0, "!= 0"),
        Param("monitor_hz", float, 1.4e3, "monitor modulation frequency (Hz)", _pos, "> 0"),
        Param("periods", int, 10, "modulation periods recorded", lambda n: n >= 2, ">= 2"),
        Param("points_per_period", int, 32, "samples per period", lambda n: n >= 8, ">= 8"),
    ),
}
EXPERIMENTS = tuple(EXPERIMENT_PARAMS)


def _config_line(text: str, section: str, key: str) -> int | None:
    """1-based line of ``key`` inside ``[section]``, for error messages."""
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        head = re.match(r"\s*\[\s*([^\]]+?)\s*\]", line)
        if head:
            current = head.group(1).strip('"')
            continue
        if current == section and re.match(rf"\s*{re.escape(key)}\s*=", line):
            return n
    return None


def _where(path, text, section, key) -> str:
    line = _config_line(text, section, key) if text else None
    return f"{path}:{line}" if line else str(path)


_CESIUM_ATTR = {"delta_hz": "delta", "gamma_hz": "gamma", "alpha_se_cm3_per_s": "alpha_se",
                "p_squared": "p_coeff"}


def _locate_cesium_error(path, exc: ConfigError) -> str:
    """Prefix a [cesium] validation message with the offending line when it can be found."""
    msg = str(exc)
    try:
        text = Path(path).read_text()
    except OSError:
        return msg
    pos = re.search(r"at line (\d+)", msg)
    if pos:  # syntax errors carry their own position
        return f"{path}:{pos.group(1)}: {msg}"
    for n, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*([A-Za-z_][\w-]*)\s*=", line)
        if m and _config_line(text, "cesium", m.group(1)) == n:
            key = m.group(1)
            if re.search(rf"\b({re.escape(key)}|{_CESIUM_ATTR.get(key, key)})\b", msg):
                return f"{path}:{n}: {msg}"
    return f"{path}: {msg}"


def resolve(experiment: str, cli_values: dict, config_path: str | None):
    """Merge defaults, config table and flags into (params, values)."""
    specs = {p.name: p for p in EXPERIMENT_PARAMS[experiment]}
    values = {name: p.default for name, p in specs.items()}
    params = CesiumParams()
    text = None
    if config_path:
        try:
            table = load_config(config_path)
        except ConfigError as exc:
            raise ConfigError(_locate_cesium_error(config_path, exc)) from exc
        text = Path(config_path).read_text()
        params = table.pop("cesium")
        section = table.get(experiment, {})
        if not isinstance(section, dict):
            raise ConfigError(f"{config_path}: [{experiment}] must be a table")
        for key, val in section.items():
            if key not in specs:
                raise ConfigError(f"{_where(config_path, text, experiment, key)}: "
                                  f"unknown key {key!r} for {experiment}")
            spec = specs[key]
            try:
                if spec.kind is float and isinstance(val, (int, float)) and not isinstance(val, bool):
                    val = float(val)
                elif not isinstance(val, spec.kind) or isinstance(val, bool):
                    raise TypeError
            except TypeError:
                raise ConfigError(f"{_where(config_path, text, experiment, key)}: "
                                  f"{key} must be {spec.kind.__name__}") from None
            values[key] = val
    for key, val in cli_values.items():
        if val is not None:
            values[key] = val
    if "alpha" in values and values["alpha"] is None:
        values["alpha"] = alpha_ellipticity(params)
    for key, spec in specs.items():
        if spec.check is not None and not spec.check(values[key]):
            origin = (_where(config_path, text, experiment, key)
                      if cli_values.get(key) is None and config_path else spec.flag)
            raise ConfigError(f"{origin}: {key}={values[key]!r} violates {spec.rule}")
    return params, values


def _phase_grid(n: int) -> np.ndarray:
    return np.linspace(0.0, 2 * math.pi, n, endpoint=False)


def _ellipse_summary(x, y, phase_in, phase_out) -> dict:
    fit = fit_ellipse(x, y)
    return {
        "semi_major": fit.semi_major,
        "semi_minor": fit.semi_minor,
        "major_axis_orientation": fit.orientation,
        "anomaly_offset": anomaly_offset(fit, x, y, phase_in),
        "mean_phase_shift": mean_phase_shift(phase_in, phase_out),
        "fit_residual": fit.residual,
    }


def run_map_storage(v, params, out: Path, rng):
    phi = _phase_grid(v["grid"])
    eta_a, phi_a = storage_map(np.full_like(phi, v["eta_l"]), phi, v["alpha"])
    s_x, s_y = 0.5 * eta_a * np.cos(phi_a), 0.5 * eta_a * np.sin(phi_a)
    csv_path = io.write_csv(out / "map-storage.csv", HEADERS["map-storage"],
                            zip(phi, eta_a, phi_a, s_x, s_y))
    summary = _ellipse_summary(eta_a * np.cos(phi_a), eta_a * np.sin(phi_a), phi, phi_a)
    return [csv_path, io.write_json(out / "map-storage_ellipse.json", summary)]


def run_map_retrieval(v, params, out: Path, rng):
    phi = _phase_grid(v["grid"])
    eta_o, phi_o = retrieval_map(np.full_like(phi, v["eta_a"]), phi, v["alpha"])
    csv_path = io.write_csv(out / "map-retrieval.csv", HEADERS["map-retrieval"], zip(phi, eta_o, phi_o))
    summary = _ellipse_summary(eta_o * np.cos(phi_o), eta_o * np.sin(phi_o), phi, phi_o)
    return [csv_path, io.write_json(out / "map-retrieval_ellipse.json", summary)]


def run_full_transform(v, params, out: Path, rng):
    cfg = SequenceConfig(t_store=v["t_store"], omega_b=v["omega_b"], tau_s=v["tau_s"], alpha=v["alpha"])
    phi = _phase_grid(v["grid"])
    eta_o, phi_o = full_transform_exact(np.full_like(phi, v["eta_l"]), phi, cfg)
    csv_path = io.write_csv(out / "full-transform.csv", HEADERS["full-transform"], zip(phi, eta_o, phi_o))
    slope, intercept = phase_line_fit(phi, phi_o)
    summary = {"ellipticity": transform_ellipticity(cfg, v["grid"], v["eta_l"]),
               "phase_slope": slope, "phase_intercept": intercept}
    if abs(cfg.alpha) < 0.3:
        eta_f, phi_f = full_transform_first_order(np.full_like(phi, v["eta_l"]), phi, cfg)
        summary["max_rel_dev_first_order"] = float(np.max(np.abs(eta_o - eta_f)) / v["eta_l"]) if v["eta_l"] else 0.0
    return [csv_path, io.write_json(out / "full-transform_summary.json", summary)]


def run_eraser_scan(v, params, out: Path, rng):
    t, a = v["t_store"], v["alpha"]
    wt = np.linspace(-math.pi, math.pi, v["n_fields"])
    rows = []
    for x in wt:
        cfg = SequenceConfig(t_store=t, omega_b=x / t, tau_s=math.inf, alpha=a)
        rows.append((x, x / t, transform_ellipticity(cfg, v["grid"])))
    csv_path = io.write_csv(out / "eraser-scan.csv", HEADERS["eraser-scan"], rows)
    w_e = eraser_field(a, t)
    at_zero = transform_ellipticity(SequenceConfig(t_store=t, tau_s=math.inf, alpha=a), v["grid"])
    at_eraser = transform_ellipticity(SequenceConfig(t_store=t, omega_b=w_e, tau_s=math.inf, alpha=a),
                                      v["grid"])
    summary = {"eraser_omega_b": w_e, "ellipticity_zero_field": at_zero,
               "ellipticity_eraser": at_eraser,
               "suppression": at_zero / at_eraser if at_eraser > 0 else math.inf}
    return [csv_path, io.write_json(out / "eraser-scan_summary.json", summary)]


def run_collide(v, params, out: Path, rng, seed: int):
    res = mc_coherence_decay(v["scheme"], v["rse"], v["duration"], v["n_atoms"], v["eta"], seed,
                             n_samples=v["samples"], n_trials=v["trials"], workers=v["workers"],
                             nuclear_spin=params.nuclear_spin)
    csv_path = io.write_csv(out / "collide.csv", HEADERS["collide"], res.csv_rows())
    report = {"scheme": res.scheme, "r_se": res.r_se, "n_collisions": res.n_collisions}
    if res.fit is not None:
        report.update(res.fit.as_record(), decay_rate=res.fit.decay_rate,
                      decay_rate_per_r_se=res.fit.decay_rate / res.r_se)
    json_path = io.write_json(out / "collide_fit.json", report)
    if res.fit is None:
        raise FitError(f"{res.fit_error} (raw trace kept in {csv_path})")
    return [csv_path, json_path]


def run_lifetime_scan(v, params, out: Path, rng):
    t = np.linspace(0.0, v["tmax"], v["n_points"])
    power = np.empty_like(t)
    for k, tk in enumerate(t):
        # power ~ eta^2, so the spin tilt lives twice as long as the power
        cfg = SequenceConfig(t_store=tk, tau_s=2 * v["tau"], alpha=v["alpha"])
        eta_o, _ = full_transform_exact(v["eta_l"], v["phi_l"], cfg)
        power[k] = eta_o**2
    if v["noise"] > 0:
        power = power * (1 + v["noise"] * rng.standard_normal(len(t)))
    csv_path = io.write_csv(out / "lifetime-scan.csv", HEADERS["lifetime-scan"], zip(t, power))
    fit = fit_lifetime(np.column_stack([t, power]))
    return [csv_path, io.write_json(out / "lifetime-scan_fit.json", fit.as_record())]


def run_tomography(v, params, out: Path, rng):
    cfg = SequenceConfig(t_store=v["t_store"], omega_b=v["omega_b"], tau_s=v["tau_s"], alpha=v["alpha"])
    meas = MeasurementModel(beta=v["beta"], omega_b_monitor=2 * math.pi * v["monitor_hz"])
    period = 1.0 / v["monitor_hz"]
    n_t = v["periods"] * v["points_per_period"]
    t_grid = np.arange(n_t) * (period / v["points_per_period"])
    phi = _phase_grid(v["grid"])
    rows = []
    for p in phi:
        stored = storage_map(v["eta_l"], p, cfg.alpha)
        s_x, s_y = demodulate_trace(faraday_trace(stored, meas, t_grid), meas)
        measured = BlochOrientation.from_spin(s_x, s_y)
        later = dark_evolution(stored, cfg)
        _, phi_out = retrieval_map(later.eta_a, later.phi_a, cfg.alpha)
        rows.append((p, measured.phi_a, phi_out))
    rows_arr = np.array(rows)
    csv_path = io.write_csv(out / "tomography.csv", HEADERS["tomography"], rows)
    slope, intercept = phase_line_fit(rows_arr[:, 0], rows_arr[:, 2])
    a_slope, a_intercept = phase_line_fit(rows_arr[:, 0], rows_arr[:, 1])
    summary = {"larmor_offset": cfg.larmor_phase, "phase_slope": slope, "phase_intercept": intercept,
               "storage_phase_slope": a_slope, "storage_phase_intercept": a_intercept}
    return [csv_path, io.write_json(out / "tomography_summary.json", summary)]


RUNNERS = {
    "map-storage": run_map_storage,
    "map-retrieval": run_map_retrieval,
    "full-transform": run_full_transform,
    "eraser-scan": run_eraser_scan,
    "collide": run_collide,
    "lifetime-scan": run_lifetime_scan,
    "tomography": run_tomography,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="serfmem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name, specs in EXPERIMENT_PARAMS.items():
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="TOML config file")
        sp.add_argument("--out", default=".", help="output directory (default: .)")
        sp.add_argument("--seed", type=int, help="64-bit seed (random and recorded if omitted)")
        for spec in specs:
            sp.add_argument(spec.flag, dest=spec.name, type=spec.kind, default=None,
                            help=f"{spec.help} (default: {spec.default})")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    name = args.experiment
    cli_values = {p.name: getattr(args, p.name) for p in EXPERIMENT_PARAMS[name]}
    try:
        params, values = resolve(name, cli_values, args.config)
        seed = args.seed if args.seed is not None else secrets.randbits(64)
        if not 0 <= seed < 2**64:
            raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {seed}")
    except ConfigError as exc:
        print(f"serfmem: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        rng = np.random.Generator(np.random.Philox(seed))
        runner = RUNNERS[name]
        if name == "collide":
            outputs = runner(values, params, out, rng, seed)
        else:
            outputs = runner(values, params, out, rng)
        config = {"experiment": name, "values": values, "cesium": asdict(params)}
        mpath = out / "manifest.json"
        io.write_json(mpath, io.manifest(name, config, seed, outputs))
    except OSError as exc:
        print(f"serfmem: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FitError, EigenSelectionError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        print(f"serfmem: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"seed {seed}")
    for path in [*outputs, mpath]:
        print(path)
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
