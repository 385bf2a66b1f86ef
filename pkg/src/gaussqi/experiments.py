"""Reproductions of the numerical experiments as CSV-writing runs.

Each runner takes an ExperimentConfig, builds the layout it describes,
and writes one CSV file plus a gnuplot command file next to it.  The
CSV starts with a commented header block carrying the artifact version,
the resolved configuration and the wall time, so a result file is
self-describing; re-running with the same configuration and seed
reproduces every byte except the wall-time line.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .cubature import RadialKernel, cubature_eval
from .errors import ConfigError, StarNotFound
from .gridded import GriddedQIConfig, evaluate_gridded
from .nodes import NodeSet, build_stencil_stars, check_conditions, generate_perturbed_grid
from .partition import (
    build_single_scale,
    build_theta,
    saturation_reference,
    theta_scan,
)
from .scattered import build_pjk, build_scattered

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    """One experiment run, fully described.

    The same schema serves every experiment; each runner reads the
    fields it needs and validates the ones it requires.  window is the
    evaluation interval per axis, resolution the number of samples
    across it, out the directory results land in.
    """

    experiment: str = "table1"
    n: int = 1
    h: float = 1.0
    H: float = 0.5
    D: float = 2.0
    D0: float | None = None
    N: int = 2
    L: int = 4
    count: int = 5
    kappa1: float = 0.5
    kernel: str = "gauss"
    amplitude: float = 1.0
    gh_order: int = 12
    rho_cut: float = 6.0
    seed: int = 0
    window: tuple[float, float] = (-4.0, 4.0)
    resolution: int = 801
    out: str = "."

    def __post_init__(self):
        self.window = (float(self.window[0]), float(self.window[1]))
        if not self.window[0] < self.window[1]:
            raise ConfigError(f"window must be increasing, got {self.window}")
        if self.resolution < 2:
            raise ConfigError(f"resolution must be >= 2, got {self.resolution}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.h <= 0:
            raise ConfigError(f"h must be positive, got {self.h}")


_INT_FIELDS = {"n", "N", "L", "count", "gh_order", "seed", "resolution"}
_FLOAT_FIELDS = {"h", "H", "D", "D0", "amplitude", "rho_cut", "kappa1"}
_STR_FIELDS = {"experiment", "kernel", "out"}


def config_from_toml(path) -> ExperimentConfig:
    """Load a configuration, rejecting unknown keys and wrong types."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from None
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for key, val in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "window":
            if not (isinstance(val, list) and len(val) == 2):
                raise ConfigError(f"window must be a two-element list, got {val!r}")
            values[key] = (float(val[0]), float(val[1]))
        elif key in _INT_FIELDS:
            if not isinstance(val, int) or isinstance(val, bool):
                raise ConfigError(f"{key} must be an integer, got {val!r}")
            values[key] = val
        elif key in _FLOAT_FIELDS:
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ConfigError(f"{key} must be a number, got {val!r}")
            values[key] = float(val)
        elif key in _STR_FIELDS:
            if not isinstance(val, str):
                raise ConfigError(f"{key} must be a string, got {val!r}")
            values[key] = val
    return ExperimentConfig(**values)


def config_to_toml(cfg: ExperimentConfig) -> str:
    """Serialize a configuration; floats use repr, so parsing is lossless."""
    lines = []
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if val is None:
            continue
        if isinstance(val, str):
            lines.append(f'{f.name} = "{val}"')
        elif isinstance(val, tuple):
            lines.append(f"{f.name} = [{', '.join(repr(float(v)) for v in val)}]")
        elif isinstance(val, float):
            lines.append(f"{f.name} = {val!r}")
        else:
            lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


# -- output plumbing ----------------------------------------------------------


def _write_csv(path: Path, cfg: ExperimentConfig, columns, rows, notes=(), t0=None):
    """Commented header block, then RFC-4180 rows.

    The wall-time line comes last in the block so everything above it is
    a pure function of (config, seed).
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# artifact {__version__}\r\n")
        for line in config_to_toml(cfg).splitlines():
            fh.write(f"# {line}\r\n")
        for note in notes:
            fh.write(f"# {note}\r\n")
        if t0 is not None:
            fh.write(f"# wall_time_s = {time.perf_counter() - t0:.3f}\r\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)
    log.info("wrote %s (%d rows)", path, len(rows))


def _write_gnuplot(path: Path, csv_name: str, title: str, plots, *, logscale=""):
    lines = [
        "set datafile separator ','",
        "set datafile commentschars '#'",
        f"set title '{title}'",
        "set key left top",
    ]
    if logscale:
        lines.append(f"set logscale {logscale}")
    joined = ", \\\n     ".join(f"'{csv_name}' {p}" for p in plots)
    lines.append(f"plot {joined}")
    path.write_text("\n".join(lines) + "\n")


def _index_box(window, h, pad, n):
    lo = math.floor(window[0] / h) - pad
    hi = math.ceil(window[1] / h) + pad
    return ((lo, hi),) * n


def _uniform_nodes(grid, h):
    return NodeSet(
        grid.dim, grid.centers.copy(), np.full(len(grid.centers), h), h=h
    )


def _runge(p):
    return 1.0 / (1.0 + np.sum(p * p, axis=1))


def _stencil_or_none(nodes, N, offsets):
    """Stencil stars when every offset combination is admissible.

    A strongly perturbed draw can degenerate a fixed stencil somewhere in
    a large box; returning None lets the evaluator fall back to its
    per-index member search, which stays deterministic for the draw.
    """
    try:
        return build_stencil_stars(nodes, N, offsets)
    except StarNotFound as exc:
        log.warning("stencil stars degenerate (%s); using the per-index search", exc)
        return None


# -- experiments --------------------------------------------------------------

TABLE1_H = tuple(2.0**-k for k in range(4, 9))
TABLE1_D = (2.0, 4.0)
# index half-width covering the evaluation ball at the origin for D <= 4
_TABLE1_BOX = ((-14, 14), (-14, 14))


def run_table1(cfg: ExperimentConfig) -> Path:
    """Centred error of the second-order interpolant for the 2-D bump u = 1/(1+|x|^2).

    Rows (h, D, Mu(0) - u(0)) for h = 2^-4 .. 2^-8 and D in {2, 4}; the
    node layout is redrawn per h and shared between the two D columns.
    """
    t0 = time.perf_counter()
    if cfg.n != 2:
        raise ConfigError(f"table1 runs the two-dimensional layout, got n={cfg.n}")
    rows = []
    for h in TABLE1_H:
        nodes = generate_perturbed_grid(2, h, cfg.kappa1, _TABLE1_BOX, seed=cfg.seed)
        stars = _stencil_or_none(nodes, 2, ((1, 0), (0, 1)))
        for D in TABLE1_D:
            gcfg = GriddedQIConfig(h, D, 2, _TABLE1_BOX, rho_cut=cfg.rho_cut)
            err = evaluate_gridded(_runge, nodes, gcfg, np.zeros(2), stars=stars) - 1.0
            rows.append([h, D, err])
    out = Path(cfg.out)
    path = out / "table1.csv"
    _write_csv(path, cfg, ["h", "D", "error"], rows, t0=t0)
    _write_gnuplot(
        out / "table1.gp",
        "table1.csv",
        "centred error of the second-order interpolant",
        [
            "using 1:($2==2.0?-$3:1/0) with linespoints title 'D=2'",
            "using 1:($2==4.0?-$3:1/0) with linespoints title 'D=4'",
        ],
        logscale="xy",
    )
    return path


def run_theta_scan(cfg: ExperimentConfig) -> Path:
    """Partition deviation profile against the saturation curve.

    One-dimensional quasi-uniform layout; columns (x, Theta(x) - 1,
    saturation(x)), sup |Theta - 1| recorded in the header.  The lattice
    extends nine steps past the scan window so the profile is free of
    boundary deficit.
    """
    t0 = time.perf_counter()
    if cfg.n != 1:
        raise ConfigError(f"theta-scan runs the one-dimensional layout, got n={cfg.n}")
    box = _index_box(cfg.window, cfg.h, 9, 1)
    grid = build_single_scale(box, cfg.h, cfg.D, 1, H=cfg.H)
    nodes = generate_perturbed_grid(1, cfg.h, cfg.kappa1, box, seed=cfg.seed)
    theta = build_theta(nodes, grid, count=cfg.count, L=cfg.L, D0=cfg.D0)
    scan = theta_scan(theta, (cfg.window,), cfg.resolution, rho_cut=cfg.rho_cut)
    sat = saturation_reference(cfg.D, 6)
    xs = scan.points[:, 0]
    rows = list(zip(xs, scan.values - 1.0, sat(xs)))
    out = Path(cfg.out)
    path = out / "theta_scan.csv"
    _write_csv(
        path, cfg, ["x", "theta_minus_1", "saturation"], rows,
        notes=[f"sup_error = {scan.sup!r}"], t0=t0,
    )
    _write_gnuplot(
        out / "theta_scan.gp",
        "theta_scan.csv",
        f"partition deviation, count={cfg.count}, L={cfg.L}",
        [
            "using 1:2 with lines title 'Theta - 1'",
            "using 1:3 with lines title 'saturation'",
        ],
    )
    return path


QI_FIGURE_H = (1.0 / 32, 1.0 / 64)


def run_qi_figures(cfg: ExperimentConfig) -> Path:
    """Pointwise error profiles of the gridded interpolant.

    n = 1: columns (x, x^N and bump errors at h = 1/32 and 1/64) for
    order N in {2, 4}.  n = 2: one error profile of the bump along the
    first axis at the configured h.
    """
    t0 = time.perf_counter()
    if cfg.N not in (2, 4):
        raise ConfigError(f"qi-figures supports orders 2 and 4, got N={cfg.N}")
    xs = np.linspace(cfg.window[0], cfg.window[1], cfg.resolution)
    out = Path(cfg.out)
    path = out / "qi_figures.csv"
    pad = math.ceil(cfg.rho_cut * math.sqrt(cfg.D)) + 2
    if cfg.n == 1:
        offsets = ((1,),) if cfg.N == 2 else ((-2,), (-1,), (1,))
        poly_tag = f"x{cfg.N}"
        errs = {}
        for h in QI_FIGURE_H:
            box = _index_box(cfg.window, h, pad, 1)
            nodes = generate_perturbed_grid(1, h, cfg.kappa1, box, seed=cfg.seed)
            stars = _stencil_or_none(nodes, cfg.N, offsets)
            gcfg = GriddedQIConfig(h, cfg.D, cfg.N, box, rho_cut=cfg.rho_cut)
            vals = evaluate_gridded(
                lambda p: p[:, 0] ** cfg.N, nodes, gcfg, xs, stars=stars
            )
            errs[poly_tag, h] = vals - xs**cfg.N
            vals = evaluate_gridded(
                lambda p: 1.0 / (1.0 + p[:, 0] ** 2), nodes, gcfg, xs, stars=stars
            )
            errs["runge", h] = vals - 1.0 / (1.0 + xs**2)
        columns = ["x"]
        series = []
        for tag in (poly_tag, "runge"):
            for h in QI_FIGURE_H:
                columns.append(f"{tag}_h{round(1/h)}")
                series.append(errs[tag, h])
        rows = list(zip(xs, *series))
        notes = [
            f"sup_{c} = {float(np.max(np.abs(s)))!r}"
            for c, s in zip(columns[1:], series)
        ]
        plots = [
            f"using 1:{i + 2} with lines title '{c}'"
            for i, c in enumerate(columns[1:])
        ]
    else:
        if cfg.n != 2:
            raise ConfigError(f"qi-figures runs in one or two dimensions, got n={cfg.n}")
        if cfg.N != 2:
            raise ConfigError("the two-dimensional figure uses the second-order interpolant")
        h = cfg.h
        # the profile runs along the first axis; nodes beyond the
        # evaluation ball never contribute, so the lattice is a strip
        box = (_index_box(cfg.window, h, pad, 1)[0], (-pad, pad))
        nodes = generate_perturbed_grid(2, h, cfg.kappa1, box, seed=cfg.seed)
        stars = _stencil_or_none(nodes, 2, ((1, 0), (0, 1)))
        gcfg = GriddedQIConfig(h, cfg.D, 2, box, rho_cut=cfg.rho_cut)
        pts = np.stack([xs, np.zeros_like(xs)], axis=-1)
        err = evaluate_gridded(_runge, nodes, gcfg, pts, stars=stars) - _runge(pts)
        columns = ["x", "error"]
        rows = list(zip(xs, err))
        notes = [f"sup_error = {float(np.max(np.abs(err)))!r}"]
        plots = ["using 1:2 with lines title 'error along the first axis'"]
    _write_csv(path, cfg, columns, rows, notes=notes, t0=t0)
    _write_gnuplot(
        out / "qi_figures.gp", "qi_figures.csv",
        f"interpolation error, N={cfg.N}, n={cfg.n}", plots,
    )
    return path


def run_cubature_demo(cfg: ExperimentConfig) -> Path:
    """Convolution of a Gaussian density against the closed-form answer.

    Builds the order-N interpolant of u(y) = amplitude * exp(-|y|^2/2)
    on a uniform grid, applies the Gaussian kernel by cubature, and
    tabulates (x, value, oracle, error) with the exact convolution
    (2 pi / 3)^{n/2} amplitude exp(-|x|^2/3).  kernel "zero" swaps in
    the vanishing kernel, whose convolution is identically zero.
    """
    t0 = time.perf_counter()
    if cfg.kernel == "gauss":
        kernel = "gauss"
        factor = (2.0 * math.pi / 3.0) ** (cfg.n / 2)
    elif cfg.kernel == "zero":
        kernel = RadialKernel("zero", lambda r: np.zeros_like(r), decay="compact")
        factor = 0.0
    else:
        raise ConfigError(
            f"the demo oracle covers kernels 'gauss' and 'zero', got {cfg.kernel!r}"
        )
    if cfg.n not in (1, 2):
        raise ConfigError(f"cubature-demo runs in one or two dimensions, got n={cfg.n}")
    # the lattice must carry the density's mass, not just the window
    reach = max(abs(cfg.window[0]), abs(cfg.window[1])) + 4.0
    half = math.ceil(max(reach, 6.5) / cfg.h)
    box = ((-half, half),) * cfg.n
    grid = build_single_scale(box, cfg.h, cfg.D, cfg.n, H=cfg.H)
    nodes = _uniform_nodes(grid, cfg.h)
    theta = build_theta(nodes, grid, count=1, L=0, D0=cfg.D0)
    qi = build_pjk(theta, {}, 1) if cfg.N == 1 else build_scattered(nodes, theta, cfg.N)
    u = cfg.amplitude * np.exp(-np.sum(nodes.points**2, axis=1) / 2.0)
    xs = np.linspace(cfg.window[0], cfg.window[1], cfg.resolution)
    pts = xs if cfg.n == 1 else np.stack([xs, np.zeros_like(xs)], axis=-1)
    vals = cubature_eval(qi, u, kernel, pts, gh_order=cfg.gh_order, rho_cut=cfg.rho_cut)
    oracle = cfg.amplitude * factor * np.exp(-(xs**2) / 3.0)
    err = vals - oracle
    rows = list(zip(xs, vals, oracle, err))
    out = Path(cfg.out)
    path = out / "cubature_demo.csv"
    _write_csv(
        path, cfg, ["x", "value", "oracle", "error"], rows,
        notes=[f"sup_error = {float(np.max(np.abs(err)))!r}"], t0=t0,
    )
    _write_gnuplot(
        out / "cubature_demo.gp", "cubature_demo.csv",
        f"Gaussian-kernel cubature, n={cfg.n}, h={cfg.h}",
        [
            "using 1:2 with lines title 'cubature'",
            "using 1:3 with points title 'closed form'",
        ],
    )
    return path


def run_check_conditions(cfg: ExperimentConfig):
    """Layout condition report for a perturbed-grid draw.

    Returns (path, report); the CLI maps a failing report to its
    numerical-failure exit code.
    """
    t0 = time.perf_counter()
    box = _index_box(cfg.window, cfg.h, 0, cfg.n)
    nodes = generate_perturbed_grid(cfg.n, cfg.h, cfg.kappa1, box, seed=cfg.seed)
    report = check_conditions(
        nodes, h=cfg.h, kappa1=cfg.kappa1, index_box=box, N=cfg.N, per_node=True
    )
    rows = [
        ["ball_coverage", report.ball_coverage_ok,
         f"worst distance {report.worst_ball_distance!r} at {report.worst_ball_index}"],
        ["star_existence", report.stars_ok,
         f"min det {report.min_star_det!r}, failures {len(report.star_failures)}"],
        ["node_coverage", report.coverage_ok,
         f"uncovered {len(report.uncovered_nodes)}"],
        ["per_node_stars", report.per_node_stars_ok,
         f"min det {report.min_per_node_det!r}, failures {len(report.per_node_failures)}"],
    ]
    path = Path(cfg.out) / "conditions.csv"
    _write_csv(
        path, cfg, ["check", "ok", "witness"], rows,
        notes=[f"passed = {report.passed()}"], t0=t0,
    )
    return path, report


def run_theta_build(cfg: ExperimentConfig) -> Path:
    """Build the partition for the configured layout and serialize it.

    The output is the plain partition CSV (round-trippable through the
    partition loader), without the experiment header block.
    """
    box = _index_box(cfg.window, cfg.h, 0, cfg.n)
    grid = build_single_scale(box, cfg.h, cfg.D, cfg.n, H=cfg.H)
    nodes = generate_perturbed_grid(cfg.n, cfg.h, cfg.kappa1, box, seed=cfg.seed)
    theta = build_theta(nodes, grid, count=cfg.count, L=cfg.L, D0=cfg.D0)
    path = Path(cfg.out) / "theta.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    theta.to_csv(path)
    log.info("wrote %s (%d entries)", path, len(theta.entries))
    return path


EXPERIMENTS = {
    "table1": run_table1,
    "theta-scan": run_theta_scan,
    "qi-figures": run_qi_figures,
    "cubature-demo": run_cubature_demo,
    "check-conditions": run_check_conditions,
    "theta-build": run_theta_build,
}


def run_experiment(cfg: ExperimentConfig):
    """Dispatch on cfg.experiment; unknown names are configuration errors."""
    try:
        runner = EXPERIMENTS[cfg.experiment]
    except KeyError:
        raise ConfigError(
            f"unknown experiment {cfg.experiment!r}; available: {sorted(EXPERIMENTS)}"
        ) from None
    return runner(cfg)


def with_overrides(cfg: ExperimentConfig, *, experiment=None, seed=None, out=None):
    """Copy of cfg with the CLI-level overrides applied."""
    updates = {}
    if experiment is not None:
        updates["experiment"] = experiment
    if seed is not None:
        updates["seed"] = int(seed)
    if out is not None:
        updates["out"] = str(out)
    return replace(cfg, **updates) if updates else cfg
