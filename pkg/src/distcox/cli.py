"""Command-line interface: ``distcox {fit,simulate,km,bandwidth}``.

Exit codes: 0 success, 1 unexpected error, 2 invalid arguments,
3 input/schema errors, 4 configuration errors, 5 smoothing/calibration
errors, 6 Cox fitting errors, 7 simulation errors.
"""
import argparse
import configparser
import csv
import logging
import os
import re
import sys

import numpy as np

from . import __version__
from .cox import CoxPH, DistortedCovariateCoxPH
from .dataset import ColumnMapping, _parse_float, ingest_csv
from .exceptions import ConfigError, DistCoxError, SchemaError
from .kernels import check_grid, cv_curve, default_bandwidth_grid
from .km import km_estimate
from .simulation import DistortionSpec, SimulationConfig, calibrate_tau, run_study

log = logging.getLogger("distcox")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_IO = 3

SIM_COLUMNS = ["config_id", "n", "cr_target", "cr_achieved", "distortion", "method", "parameter",
               "bias", "sd", "se", "mse", "cp", "replications", "failures"]


# -- formatting ----------------------------------------------------------------

def fmt(x):
    """17 significant digits (exact round trip); NaN becomes an empty field."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if np.isnan(x) else format(x, ".17g")


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")


def render_table(header, rows, digits=3):
    cells = [[v if isinstance(v, str) else ("" if np.isnan(float(v)) else f"{float(v):.{digits}f}")
              for v in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)


def resolved_block(title, settings):
    lines = [f"[{title}]"]
    lines += [f"{k} = {v}" for k, v in settings.items()]
    return "\n".join(lines) + "\n"


# -- configuration files -------------------------------------------------------

def read_config(path):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"{path}: {exc.message if hasattr(exc, 'message') else exc}", line) from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parser, text.splitlines()


def _key_line(lines, section, key):
    current = None
    for no, raw in enumerate(lines, start=1):
        s = raw.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return no
    return None


SIM_KEYS = {"n", "beta0", "gamma0", "z_corr", "x_mean", "x_sd", "u_lo", "u_hi", "distortion",
            "distortion_shift", "distortion_table", "target_cr", "replications", "seed", "ci_level",
            "bandwidth", "tau", "max_failure_rate"}


def _parse_table(text):
    knots = []
    for item in text.replace(",", " ").split():
        u, phi = item.split(":")
        knots.append((float(u), float(phi)))
    return tuple(knots)


def simulation_configs(path, seed=None):
    """Parse every section of a study file into :class:`SimulationConfig`.

    Each section is one study; ``[DEFAULT]`` entries apply to all.
    """
    parser, lines = read_config(path)
    sections = parser.sections()
    if not sections:
        raise ConfigError(f"{path}: no study sections")
    configs = []
    for name in sections:
        sec = parser[name]

        def get(key, conv, default=None):
            if key not in sec:
                return default
            try:
                return conv(sec[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"[{name}] {key}: invalid value {sec[key]!r} ({exc})",
                                  _key_line(lines, name, key)) from None

        for key in sec:
            if key not in SIM_KEYS:
                raise ConfigError(f"[{name}] unknown key {key!r}", _key_line(lines, name, key))
        kind = get("distortion", str.strip, "linear_shift")
        default_shift = 1.0 if kind == "quadratic" else 3.0
        dist = DistortionSpec(kind, get("distortion_shift", float, default_shift),
                              get("distortion_table", _parse_table, ()))
        bw = get("bandwidth", str.strip, "cv")
        try:
            bw = bw if bw == "cv" else float(bw)
        except ValueError:
            raise ConfigError(f"[{name}] bandwidth: expected 'cv' or a number, got {bw!r}",
                              _key_line(lines, name, "bandwidth")) from None
        cfg = SimulationConfig(
            n=get("n", int, 100),
            beta0=get("beta0", lambda s: [float(v) for v in s.replace(",", " ").split()], (1.0, 0.5)),
            gamma0=get("gamma0", float, 1.5),
            z_corr=get("z_corr", float, 0.8),
            x_mean=get("x_mean", float, 1.0),
            x_sd=get("x_sd", float, 0.5),
            u_lo=get("u_lo", float, 2.0),
            u_hi=get("u_hi", float, 6.0),
            distortion=dist,
            target_cr=get("target_cr", float, 0.2),
            replications=get("replications", int, 1000),
            seed=seed if seed is not None else get("seed", int, 2020),
            ci_level=get("ci_level", float, 0.95),
            bandwidth=bw,
            tau=get("tau", float, None),
            max_failure_rate=get("max_failure_rate", float, 0.05),
            config_id=name,
        )
        try:
            cfg.validate()
        except ValueError as exc:
            raise ConfigError(f"[{name}] {exc}", _key_line(lines, name, "distortion") if "distortion" in str(exc)
                              else None) from None
        configs.append(cfg)
    return configs


def _section_defaults(args, section):
    """Fill unset command-line options from ``[section]`` of ``--config``."""
    if not args.config:
        return
    parser, _ = read_config(args.config)
    if not parser.has_section(section):
        return
    for key, value in parser[section].items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ConfigError(f"[{section}] unknown key {key!r}")
        if getattr(args, attr) in (None, False):
            setattr(args, attr, value)


def _require(args, *names):
    missing = [n for n in names if not getattr(args, n, None)]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _split(text):
    if not text:
        return ()
    return tuple(c.strip() for c in text.split(",") if c.strip())


def _outdir(args):
    out = args.output or "."
    os.makedirs(out, exist_ok=True)
    return out


# -- subcommands ---------------------------------------------------------------

def cmd_fit(args):
    _section_defaults(args, "fit")
    _require(args, "input", "time", "event", "distorted")
    method = args.method or "proposed"
    if method not in ("proposed", "naive", "oracle"):
        raise ConfigError(f"unknown method {method!r}")
    if method == "proposed":
        _require(args, "confounder")
    if method == "oracle":
        _require(args, "truth")
    ci_level = float(args.ci_level or 0.95)
    bw = args.bandwidth or "auto"
    mapping = ColumnMapping(time=args.time, event=args.event, distorted=args.distorted,
                            confounder=args.confounder, covariates=_split(args.covariates),
                            truth=args.truth if method == "oracle" else None)
    data = ingest_csv(args.input, mapping)
    y = np.column_stack([data.time, data.event])
    names = list(data.z_names)

    resolved = {"input": args.input, "time": args.time, "event": args.event,
                "distorted": args.distorted, "confounder": args.confounder or "",
                "covariates": ",".join(names), "method": method, "ci_level": ci_level,
                "n": data.n, "events": int(data.event.sum()), "rejected_rows": len(data.rejected)}
    if method == "oracle":
        model = CoxPH(ci_level=ci_level).fit(data.design("oracle"), y)
        names.append(args.truth)
    elif method == "naive":
        model = CoxPH(ci_level=ci_level).fit(data.design("naive"), y)
        names.append(args.distorted)
    else:
        bandwidth = "cv" if bw == "auto" else float(bw)
        X, _ = data.estimator_input()
        model = DistortedCovariateCoxPH("proposed", bandwidth=bandwidth, ci_level=ci_level).fit(X, y)
        names.append(args.distorted)
        resolved["bandwidth"] = fmt(model.bandwidth_)
    resolved.update({"loglik": fmt(model.log_likelihood_), "iterations": model.n_iter_})

    rows = model.summary(names)
    out = _outdir(args)
    header = ["name", "estimate", "se", "z", "p_value", "ci_lower", "ci_upper"]
    write_csv(os.path.join(out, "coefficients.csv"), header,
              [[r[h] for h in header] for r in rows])
    text = (f"Cox regression ({method})\n\n"
            + render_table(["name", "EST", "SE", "z", "P-value", "lower", "upper"],
                           [[r[h] for h in header] for r in rows]) + "\n\n"
            + resolved_block("resolved", resolved))
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK


def simulation_rows(summary):
    cfg = summary.config
    for row in summary.rows:
        yield [cfg.config_id, cfg.n, fmt(cfg.target_cr), fmt(summary.achieved_cr), cfg.distortion.label,
               row.method, row.parameter, row.bias, row.sd, row.se, row.mse, row.cp,
               summary.replications, summary.replication_failures]


def cmd_simulate(args):
    _require(args, "config")
    configs = simulation_configs(args.config, seed=args.seed)
    threads = int(args.threads or 1)
    out = _outdir(args)
    rows, blocks, tables = [], [], []
    for cfg in configs:
        tau = cfg.tau if cfg.tau is not None else calibrate_tau(cfg)
        log.info("[%s] tau = %.6g", cfg.config_id, tau)
        summary = run_study(cfg, threads=threads, tau=tau)
        rows.extend(simulation_rows(summary))
        blocks.append(resolved_block(cfg.config_id, {
            "n": cfg.n, "beta0": ", ".join(fmt(b) for b in cfg.beta0), "gamma0": fmt(cfg.gamma0),
            "z_corr": fmt(cfg.z_corr), "x_mean": fmt(cfg.x_mean), "x_sd": fmt(cfg.x_sd),
            "u_lo": fmt(cfg.u_lo), "u_hi": fmt(cfg.u_hi), "distortion": cfg.distortion.kind,
            "distortion_shift": fmt(cfg.distortion.shift),
            **({"distortion_table": " ".join(f"{fmt(a)}:{fmt(b)}" for a, b in cfg.distortion.table)}
               if cfg.distortion.table else {}),
            "target_cr": fmt(cfg.target_cr), "replications": cfg.replications, "seed": cfg.seed,
            "ci_level": fmt(cfg.ci_level),
            "bandwidth": cfg.bandwidth if isinstance(cfg.bandwidth, str) else fmt(cfg.bandwidth),
            "tau": fmt(tau), "max_failure_rate": fmt(cfg.max_failure_rate),
        }))
        tables.append(f"[{cfg.config_id}] n={cfg.n} CR={cfg.target_cr:g} (achieved {summary.achieved_cr:.3f}) "
                      f"phi={cfg.distortion.label} tau={tau:.4g} reps={summary.replications} "
                      f"failures={summary.replication_failures}\n"
                      + render_table(["method", "para", "Bias", "SD", "SE", "MSE", "CP"],
                                     [[r.method, r.parameter, r.bias, r.sd, r.se, r.mse, r.cp]
                                      for r in summary.rows]))
    write_csv(os.path.join(out, "simulation.csv"), SIM_COLUMNS, rows)
    with open(os.path.join(out, "simulation_resolved.ini"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(blocks))
    print("\n\n".join(tables))
    return EXIT_OK


def km_svg(curves, width=640, height=400, pad=48):
    """Static SVG step plot; ``curves`` maps stratum -> KMCurve."""
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    t_max = max((float(c.times[-1]) for c in curves.values() if c.times.size), default=1.0) or 1.0
    sx = lambda t: pad + (width - 2 * pad) * t / t_max
    sy = lambda s: height - pad - (height - 2 * pad) * s
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">time</text>',
             f'<text x="14" y="{height / 2}" font-size="12" transform="rotate(-90 14 {height / 2})" '
             f'text-anchor="middle">survival</text>']
    for frac in (0.0, 0.5, 1.0):
        parts.append(f'<text x="{pad - 6}" y="{sy(frac) + 4:.1f}" text-anchor="end" font-size="10">{frac:g}</text>')
        parts.append(f'<text x="{sx(frac * t_max):.1f}" y="{height - pad + 14}" text-anchor="middle" '
                     f'font-size="10">{frac * t_max:.3g}</text>')
    for k, (name, c) in enumerate(curves.items()):
        colour = colours[k % len(colours)]
        d = [f"M {sx(0):.2f} {sy(1.0):.2f}"]
        for t, s in zip(c.times, c.survival):
            d.append(f"H {sx(t):.2f} V {sy(s):.2f}")
        d.append(f"H {sx(t_max):.2f}")
        parts.append(f'<path d="{" ".join(d)}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - pad - 4}" y="{pad + 14 * (k + 1)}" text-anchor="end" '
                     f'font-size="11" fill="{colour}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_km(args):
    _section_defaults(args, "km")
    _require(args, "input", "time", "event")
    mapping = ColumnMapping(time=args.time, event=args.event, strata=args.strata or None)
    data = ingest_csv(args.input, mapping)
    if data.strata is None:
        groups = {"all": np.ones(data.n, dtype=bool)}
    else:
        groups = {s: data.strata == s for s in sorted(set(data.strata))}
    curves = {name: km_estimate(data.time[mask], data.event[mask]) for name, mask in groups.items()}
    rows = []
    for name, c in curves.items():
        rows.append([name, 0.0, 1.0, c.n, 0])
        rows.extend([name, t, s, int(r), int(d)] for t, s, r, d in zip(c.times, c.survival, c.at_risk, c.n_events))
    out = _outdir(args)
    write_csv(os.path.join(out, "km.csv"), ["stratum", "time", "survival", "at_risk", "n_events"], rows)
    if args.svg:
        with open(os.path.join(out, "km.svg"), "w", encoding="utf-8") as fh:
            fh.write(km_svg(curves))
    for name, c in curves.items():
        print(f"{name}: n={c.n} events={int(c.n_events.sum())} final S={c.survival[-1] if c.survival.size else 1.0:.4f}")
    return EXIT_OK


def cmd_bandwidth(args):
    _section_defaults(args, "bandwidth")
    _require(args, "input", "confounder")
    u = _read_column(args.input, args.confounder)
    if args.grid:
        grid = check_grid([float(v) for v in _split(args.grid)])
    else:
        grid = default_bandwidth_grid(u, int(args.grid_size or 40))
    grid, scores = cv_curve(u, grid)
    best = int(np.argmin(scores))
    out = _outdir(args)
    write_csv(os.path.join(out, "bandwidth.csv"), ["h", "cv_score", "selected"],
              [[h, s, int(i == best)] for i, (h, s) in enumerate(zip(grid, scores))])
    text = resolved_block("resolved", {"input": args.input, "confounder": args.confounder, "n": u.size,
                                       "grid_size": grid.size, "grid_min": fmt(grid[0]),
                                       "grid_max": fmt(grid[-1]), "h_opt": fmt(grid[best])})
    with open(os.path.join(out, "bandwidth_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"h_opt = {fmt(grid[best])}")
    return EXIT_OK


def _read_column(path, column):
    values = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        if column not in header:
            raise SchemaError(f"{path}: column not found: {column}")
        reader.fieldnames = header
        for row_no, rec in enumerate(reader, start=1):
            v = _parse_float(rec.get(column) or "", row_no, column)
            if v is not None:
                values.append(v)
    return np.asarray(values)


# -- entry point ---------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file with sections")
    common.add_argument("--input", help="input CSV with a header row")
    common.add_argument("--output", help="output directory (default: current)")
    common.add_argument("--seed", type=int, help="override the random seed")
    common.add_argument("--threads", type=int, help="worker processes for simulate")
    common.add_argument("--svg", action="store_true", help="also write an SVG plot (km)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="distcox", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit a Cox model with a distorted covariate")
    p.add_argument("--time")
    p.add_argument("--event")
    p.add_argument("--distorted", help="observed (distorted) covariate column")
    p.add_argument("--confounder", help="confounder driving the distortion")
    p.add_argument("--covariates", help="comma-separated accurately measured covariates")
    p.add_argument("--truth", help="undistorted covariate column (method=oracle)")
    p.add_argument("--method", choices=["proposed", "naive", "oracle"])
    p.add_argument("--bandwidth", help="'auto' (cross-validation) or a positive number")
    p.add_argument("--ci-level", dest="ci_level")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", parents=[common], help="run the Monte Carlo study")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("km", parents=[common], help="Kaplan-Meier curves")
    p.add_argument("--time")
    p.add_argument("--event")
    p.add_argument("--strata", help="optional stratification column")
    p.set_defaults(func=cmd_km)

    p = sub.add_parser("bandwidth", parents=[common], help="cross-validation bandwidth curve")
    p.add_argument("--confounder")
    p.add_argument("--grid", help="comma-separated increasing bandwidths")
    p.add_argument("--grid-size", dest="grid_size", help="size of the default log grid (40)")
    p.set_defaults(func=cmd_bandwidth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DistCoxError as exc:
        print(f"distcox: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"distcox: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"distcox: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
