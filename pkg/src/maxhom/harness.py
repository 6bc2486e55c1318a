"""Run configurations, pipeline orchestration and the command-line interface.

Config files are flat `key = value` text with dotted section names, strict
unknown-key rejection and no hidden defaults: the manifest always contains the
fully resolved configuration, and its canonical form is hashed into the run
fingerprint.  Reruns of the same config produce byte-identical CSV outputs
(the algorithms are deterministic; runtimes live only in manifest.txt).

CLI:  maxhom {homogenize|simulate|sweep} --config <path> [--out <dir>]
             [--workers <k>] [--tol <r>]
Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

import argparse
import concurrent.futures as cf
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import corrector, fem, wave
from .cells import HomogenizationError, homogenize
from .coeffs import CoefficientError, CoefficientPart, CoefficientSpec, ScaleSchedule
from .mesh import DomainMesh, MeshError


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# typed flat-key schema

def _parse_bool(s):
    if s.lower() in ("true", "yes", "1"):
        return True
    if s.lower() in ("false", "no", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_floats(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _parse_ints(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _parse_factors(s):
    """Per-scale layered factors 'offset:amplitude:axis[:frequency[:phase]];...'."""
    out = []
    for part in s.split(";"):
        bits = part.split(":")
        if len(bits) < 3:
            raise ConfigError(f"factor {part!r} needs offset:amplitude:axis")
        fac = {"offset": float(bits[0]), "amplitude": float(bits[1]), "axis": int(bits[2])}
        if len(bits) > 3:
            fac["frequency"] = int(bits[3])
        if len(bits) > 4:
            fac["phase"] = float(bits[4])
        out.append(fac)
    return tuple(out)


_REQUIRED = object()

SCHEMA = {
    "mode": (str, _REQUIRED),
    "out": (str, "out"),
    "workers": (int, 1),
    "tol": (float, 1e-12),
    "coeff.d": (int, 2),
    "coeff.n": (int, 1),
    "coeff.alpha": (float, _REQUIRED),
    "coeff.beta": (float, _REQUIRED),
    "schedule.epsilon": (float, None),
    "schedule.ratios": (_parse_ints, ()),
    "schedule.require_integer": (_parse_bool, True),
    "hom.cell_n": (int, 64),
    "hom.slow_x": (int, None),
    "hom.slow_y": (_parse_ints, None),
    "sim.kind": (str, "homogenized"),
    "sim.n": (int, None),
    "sim.extent": (float, 1.0),
    "sim.t_final": (float, 0.5),
    "sim.dt": (float, None),
    "sim.store_every": (int, 1),
    "sim.probes": (_parse_ints, None),
    "sim.quad": (int, None),
    "sim.snapshots": (_parse_bool, False),
    "data.g0": (str, "zero"),
    "data.g1": (str, "zero"),
    "data.f": (str, "zero"),
    "sweep.epsilons": (_parse_floats, ()),
    "sweep.fine_ratio": (int, 32),
    "sweep.hom_n": (int, 64),
    "sweep.t_final": (float, 0.25),
    "sweep.dt_ratio": (int, 16),
    "sweep.snapshots_per_run": (int, 8),
    "sweep.multiscale": (_parse_bool, False),
}

for _which in ("a", "b"):
    SCHEMA.update({
        f"coeff.{_which}.family": (str, _REQUIRED),
        f"coeff.{_which}.value": (_parse_floats, None),
        f"coeff.{_which}.scale": (int, 1),
        f"coeff.{_which}.axis": (int, 0),
        f"coeff.{_which}.offset": (float, None),
        f"coeff.{_which}.amplitude": (float, None),
        f"coeff.{_which}.frequency": (int, 1),
        f"coeff.{_which}.phase": (float, 0.0),
        f"coeff.{_which}.axes": (_parse_ints, None),
        f"coeff.{_which}.phases": (_parse_floats, None),
        f"coeff.{_which}.base": (_parse_floats, None),
        f"coeff.{_which}.factors": (_parse_factors, None),
        f"coeff.{_which}.x_offset": (float, 1.0),
        f"coeff.{_which}.x_amplitude": (float, 0.0),
        f"coeff.{_which}.code": (str, None),
    })


def parse_config(text):
    """Parse flat key-value text into a resolved dict (defaults applied)."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        parser = SCHEMA[key][0]
        try:
            raw[key] = parser(val)
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    cfg = {}
    for key, (_, default) in SCHEMA.items():
        if key in raw:
            cfg[key] = raw[key]
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key {key!r}")
        else:
            cfg[key] = default
    if cfg["mode"] not in ("homogenize", "simulate", "sweep"):
        raise ConfigError(f"unknown mode {cfg['mode']!r}")
    return cfg


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def _fmt_value(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, tuple):
        return ";".join(_fmt_value(x) if not isinstance(x, dict)
                        else ":".join(f"{x[k]:g}" for k in sorted(x)) for x in v)
    return str(v)


# execution-environment keys: recorded in the manifest, excluded from the
# fingerprint so that worker counts and output paths cannot change report bytes
_NON_SEMANTIC = ("out", "workers")


def canonical_config(cfg, semantic_only=False):
    keys = sorted(k for k in cfg if not (semantic_only and k in _NON_SEMANTIC))
    return "\n".join(f"{k} = {_fmt_value(cfg[k])}" for k in keys)


def fingerprint(cfg):
    return hashlib.sha256(canonical_config(cfg, semantic_only=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# builders

def _matrix_param(vals, d):
    if vals is None:
        return None
    vals = tuple(vals)
    if len(vals) == 1:
        return vals[0]
    if len(vals) != d * d:
        raise ConfigError(f"matrix parameter needs 1 or {d * d} entries")
    return np.array(vals).reshape(d, d)


def build_part(cfg, which):
    d = cfg["coeff.d"]
    fam = cfg[f"coeff.{which}.family"]
    g = lambda k: cfg[f"coeff.{which}.{k}"]
    if fam == "constant":
        if g("value") is None:
            raise ConfigError(f"coeff.{which}.value required for the constant family")
        return CoefficientPart("constant", {"value": _matrix_param(g("value"), d)})
    if fam in ("layered", "trigonometric"):
        if g("offset") is None or g("amplitude") is None:
            raise ConfigError(f"coeff.{which} needs offset and amplitude")
        params = {"scale": g("scale"), "offset": g("offset"), "amplitude": g("amplitude"),
                  "frequency": g("frequency")}
        base = _matrix_param(g("base"), d)
        if base is not None:
            params["base"] = base
        if fam == "layered":
            params["axis"] = g("axis")
            params["phase"] = g("phase")
        else:
            if g("axes") is not None:
                params["axes"] = list(g("axes"))
                params["phases"] = list(g("phases") or (0.0,) * len(g("axes")))
        return CoefficientPart(fam, params)
    if fam == "separable-product":
        if g("factors") is None:
            raise ConfigError(f"coeff.{which}.factors required")
        params = {"factors": [dict(f) for f in g("factors")],
                  "x_offset": g("x_offset"), "x_amplitude": g("x_amplitude")}
        base = _matrix_param(g("base"), d)
        if base is not None:
            params["base"] = base
        return CoefficientPart(fam, params)
    if fam == "expression":
        if g("code") is None:
            raise ConfigError(f"coeff.{which}.code required")
        return CoefficientPart("expression", {"code": g("code")})
    raise ConfigError(f"unknown family {fam!r}")


def build_spec(cfg):
    return CoefficientSpec(cfg["coeff.d"], cfg["coeff.n"], a=build_part(cfg, "a"),
                           b=build_part(cfg, "b"), alpha=cfg["coeff.alpha"],
                           beta=cfg["coeff.beta"])


def build_schedule(cfg, epsilon=None):
    eps = epsilon if epsilon is not None else cfg["schedule.epsilon"]
    if eps is None:
        raise ConfigError("schedule.epsilon is required")
    ratios = cfg["schedule.ratios"]
    if 1 + len(ratios) != cfg["coeff.n"]:
        raise ConfigError("schedule.ratios must provide one ratio per extra scale")
    return ScaleSchedule(eps, ratios, cfg["schedule.require_integer"])


def _cavity(m, n):
    def fn(x):
        return np.stack([-n * np.pi * np.cos(m * np.pi * x[:, 0]) * np.sin(n * np.pi * x[:, 1]),
                         m * np.pi * np.sin(m * np.pi * x[:, 0]) * np.cos(n * np.pi * x[:, 1])],
                        axis=1)
    return fn


def _bubble(x):
    s = np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
    return np.stack([s, s], axis=1)


FIELD_REGISTRY = {
    "zero": None,
    "cavity11": _cavity(1, 1),
    "cavity21": _cavity(2, 1),
    "bubble": _bubble,
}

FORCING_REGISTRY = {
    "zero": None,
    "bubble": wave.Forcing(_bubble),
    "bubble_cos2t": wave.Forcing(_bubble, lambda t: np.cos(2.0 * t)),
}


def _field(cfg, key, registry):
    name = cfg[key]
    if name not in registry:
        raise ConfigError(f"{key} = {name!r} is not in the builtin registry "
                          f"({', '.join(sorted(registry))})")
    return registry[name]


def _default_quad(spec):
    fams = (spec.a.family, spec.b.family)
    return 3 if any(f in ("layered", "trigonometric", "separable-product") for f in fams) else 2


def build_wave_data(cfg, dt, t_final, store_every, probes=()):
    return wave.WaveData(
        T=t_final, dt=dt,
        g0=_field(cfg, "data.g0", FIELD_REGISTRY),
        g1=_field(cfg, "data.g1", FIELD_REGISTRY),
        f=_field(cfg, "data.f", FORCING_REGISTRY),
        store_every=store_every, probe_edges=probes, tol=cfg["tol"])


# ---------------------------------------------------------------------------
# pipelines

def _write_manifest(outdir, cfg, extra_lines=()):
    import scipy

    path = os.path.join(outdir, "manifest.txt")
    with open(path, "w") as fh:
        fh.write("# maxhom run manifest\n")
        fh.write(f"fingerprint = {fingerprint(cfg)}\n")
        fh.write(f"versions = python {sys.version.split()[0]}, numpy {np.__version__}, "
                 f"scipy {scipy.__version__}\n")
        for line in extra_lines:
            fh.write(line + "\n")
        fh.write("# resolved configuration\n")
        fh.write(canonical_config(cfg) + "\n")


def run_homogenize(cfg, outdir):
    spec = build_spec(cfg)
    hom = homogenize(spec, cfg["hom.cell_n"], slow_x=cfg["hom.slow_x"],
                     slow_y=cfg["hom.slow_y"], tol=cfg["tol"])
    hom.export_text(os.path.join(outdir, "tensors.txt"))
    _write_manifest(outdir, cfg)
    return hom


def _simulate_once(cfg, spec, schedule, hom, mesh, dt, t_final, store_every, probes):
    data = build_wave_data(cfg, dt, t_final, store_every, probes)
    quad = cfg["sim.quad"] or _default_quad(spec)
    prob = wave.setup_problem(cfg["sim.kind"], mesh, data, spec=spec,
                              schedule=schedule, hom=hom, quad_rule=quad)
    return wave.integrate(prob)


def run_simulate(cfg, outdir):
    spec = build_spec(cfg)
    schedule = hom = None
    if cfg["sim.kind"] == "fine":
        schedule = build_schedule(cfg)
    else:
        hom = homogenize(spec, cfg["hom.cell_n"], slow_x=cfg["hom.slow_x"],
                         slow_y=cfg["hom.slow_y"], tol=cfg["tol"])
        hom.export_text(os.path.join(outdir, "tensors.txt"))
    if cfg["sim.n"] is None:
        raise ConfigError("sim.n is required in simulate mode")
    mesh = DomainMesh(cfg["coeff.d"], cfg["sim.n"], cfg["sim.extent"])
    dt = cfg["sim.dt"] if cfg["sim.dt"] is not None else mesh.h / 2.0
    probes = cfg["sim.probes"]
    if probes is None:
        n_int = mesh.n_interior_edges
        probes = tuple(sorted({n_int // 7, n_int // 3, (5 * n_int) // 7})) if n_int else ()
    traj = _simulate_once(cfg, spec, schedule, hom, mesh, dt,
                          cfg["sim.t_final"], cfg["sim.store_every"], probes)
    wave.export_trajectory_csv(traj, os.path.join(outdir, "trajectory.csv"))
    if cfg["sim.snapshots"]:
        wave.export_snapshots(traj, os.path.join(outdir, "snapshots.bin"))
    _write_manifest(outdir, cfg)
    return traj


def fit_slope(pairs):
    """Least-squares slope of log(error) against log(eps)."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ConfigError("need at least two (eps, error) pairs for a slope")
    eps = np.array([p[0] for p in pairs], dtype=float)
    err = np.array([p[1] for p in pairs], dtype=float)
    if np.any(eps <= 0) or np.any(err <= 0):
        raise ConfigError("slope fit needs positive epsilons and errors")
    A = np.stack([np.log(eps), np.ones_like(eps)], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(err), rcond=None)
    return float(coef[0])


class ConvergenceReport:
    """Per-eps corrector errors with the fitted log-log slope."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.fingerprint = fingerprint(cfg)
        self.eps = []
        self.e_vel = []
        self.e_curl = []
        self.e_ms = []
        self.runtimes = []
        self.failures = []

    @property
    def totals(self):
        return [v + c for v, c in zip(self.e_vel, self.e_curl)]

    @property
    def partial(self):
        return bool(self.failures)

    def slope(self):
        vals = self.e_ms if self.cfg["sweep.multiscale"] else self.totals
        return fit_slope(list(zip(self.eps, vals)))

    def write_csv(self, path):
        ms = self.cfg["sweep.multiscale"]
        with open(path, "w") as fh:
            fh.write("eps,E_vel,E_curl,E_total,E_ms\n")
            for i, e in enumerate(self.eps):
                row = [f"{e:.17g}", f"{self.e_vel[i]:.17g}", f"{self.e_curl[i]:.17g}",
                       f"{self.totals[i]:.17g}",
                       f"{self.e_ms[i]:.17g}" if ms else ""]
                fh.write(",".join(row) + "\n")
            fh.write(f"slope,{self.slope():.17g},,,\n")
            fh.write(f"fingerprint,{self.fingerprint},,,\n")
            if self.partial:
                fh.write(f"partial,{len(self.failures)} failed runs,,,\n")

    def write_summary_json(self, path):
        doc = {"epsilons": self.eps, "E_vel": self.e_vel, "E_curl": self.e_curl,
               "E_total": self.totals, "E_ms": self.e_ms, "slope": self.slope(),
               "fingerprint": self.fingerprint, "partial": self.partial}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _sweep_one(cfg, spec, hom, eps):
    t0 = time.perf_counter()
    schedule = build_schedule(cfg, epsilon=eps)
    eps_n = schedule.epsilons[-1]
    Nf = int(round(cfg["sweep.fine_ratio"] / eps_n))
    mesh = DomainMesh(cfg["coeff.d"], Nf, cfg["sim.extent"])
    dt = eps_n / cfg["sweep.dt_ratio"]
    steps = int(round(cfg["sweep.t_final"] / dt))
    store_every = max(1, steps // cfg["sweep.snapshots_per_run"])
    data = build_wave_data(cfg, dt, cfg["sweep.t_final"], store_every)
    quad = cfg["sim.quad"] or _default_quad(spec)

    prob_f = wave.setup_problem("fine", mesh, data, spec=spec,
                                schedule=schedule, quad_rule=quad)
    traj_f = wave.integrate(prob_f)
    hom_mesh = DomainMesh(cfg["coeff.d"], cfg["sweep.hom_n"], cfg["sim.extent"])
    prob_h = wave.setup_problem("homogenized", hom_mesh, data, hom=hom, quad_rule=quad)
    traj_h = wave.integrate(prob_h)

    g1 = _field(cfg, "data.g1", FIELD_REGISTRY)
    if cfg["sweep.multiscale"]:
        errs = corrector.multiscale_corrector_error(traj_f, traj_h, hom, schedule, g1=g1)
        e_vel = e_curl = 0.0
        e_ms = errs.max_ms
    else:
        field = corrector.reconstruct_corrector(
            traj_h, hom, schedule, g1=g1, g0=_field(cfg, "data.g0", FIELD_REGISTRY),
            fine_mesh=mesh)
        errs = corrector.corrector_error(traj_f, field)
        e_vel, e_curl, e_ms = errs.max_vel, errs.max_curl, 0.0
    return eps, e_vel, e_curl, e_ms, errs, time.perf_counter() - t0


def run_sweep(cfg, outdir, workers=None):
    eps_list = cfg["sweep.epsilons"]
    if len(eps_list) < 3:
        raise ConfigError("sweep mode requires at least 3 epsilon values for a slope fit")
    spec = build_spec(cfg)
    hom = homogenize(spec, cfg["hom.cell_n"], slow_x=cfg["hom.slow_x"],
                     slow_y=cfg["hom.slow_y"], tol=cfg["tol"])
    hom.export_text(os.path.join(outdir, "tensors.txt"))
    report = ConvergenceReport(cfg)
    workers = workers or cfg["workers"]
    results = {}
    if workers > 1:
        with cf.ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(_sweep_one, cfg, spec, hom, e): e for e in eps_list}
            for fut in cf.as_completed(futs):
                e = futs[fut]
                try:
                    results[e] = fut.result()
                except (fem.SolveError, HomogenizationError) as exc:
                    report.failures.append((e, str(exc)))
    else:
        for e in eps_list:
            try:
                results[e] = _sweep_one(cfg, spec, hom, e)
            except (fem.SolveError, HomogenizationError) as exc:
                report.failures.append((e, str(exc)))
    series = []
    for e in eps_list:  # deterministic order regardless of completion order
        if e not in results:
            continue
        eps, e_vel, e_curl, e_ms, errs, rt = results[e]
        report.eps.append(eps)
        report.e_vel.append(e_vel)
        report.e_curl.append(e_curl)
        report.e_ms.append(e_ms)
        report.runtimes.append(rt)
        series.append((eps, errs))
    with open(os.path.join(outdir, "errors.csv"), "w") as fh:
        fh.write("eps,t,E_vel,E_curl,E_ms\n")
        for eps, errs in series:
            for i, t in enumerate(errs.times):
                ms = errs.e_ms[i] if errs.e_ms is not None else 0.0
                fh.write(f"{eps:.17g},{t:.17g},{errs.e_vel[i]:.17g},"
                         f"{errs.e_curl[i]:.17g},{ms:.17g}\n")
    report.failures.sort(key=lambda f: -f[0])
    report.write_csv(os.path.join(outdir, "report.csv"))
    report.write_summary_json(os.path.join(outdir, "summary.json"))
    lines = [f"runtime eps={e:.17g} = {rt:.3f}s" for e, rt in zip(report.eps, report.runtimes)]
    lines += [f"failure eps={e:.17g}: {msg}" for e, msg in report.failures]
    _write_manifest(outdir, cfg, lines)
    return report


def run(cfg, outdir=None, workers=None):
    """Dispatch a parsed config; returns the mode's primary result object."""
    outdir = outdir or cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    mode = cfg["mode"]
    if mode == "homogenize":
        return run_homogenize(cfg, outdir)
    if mode == "simulate":
        return run_simulate(cfg, outdir)
    return run_sweep(cfg, outdir, workers)


# ---------------------------------------------------------------------------
# CLI

def main(argv=None):
    parser = argparse.ArgumentParser(prog="maxhom",
                                     description="multiscale Maxwell homogenization runs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("homogenize", "simulate", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--tol", type=float, default=None)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg["mode"] != args.command:
            raise ConfigError(
                f"config mode {cfg['mode']!r} does not match subcommand {args.command!r}")
        if args.tol is not None:
            cfg["tol"] = args.tol
        if args.workers is not None:
            cfg["workers"] = args.workers
        run(cfg, outdir=args.out, workers=args.workers)
    except (ConfigError, CoefficientError, MeshError, wave.WaveSetupError,
            fem.AssemblyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (fem.SolveError, HomogenizationError, corrector.CorrectorInputError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
