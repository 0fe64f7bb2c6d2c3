"""Scenario configuration, the two benchmark setups and run orchestration.

Configuration files are INI-style (read with :mod:`configparser`). Sections:

``[scenario]``
    ``name``, ``geometry`` (``disc_with_hole`` | ``channel_with_cylinder`` |
    ``rectangle`` | ``mesh_file``; ``example1`` and ``example2`` are aliases of
    the first two), ``seed``.
``[geometry]``
    Generator arguments, e.g. ``radius``, ``half_width``, ``target_h`` or
    ``length``, ``height``, ``center_x``, ``center_y``, ``cyl_radius``,
    ``target_h``, ``cyl_h``; ``path`` for ``mesh_file``.
``[flow]``
    ``nu``, ``dt``.
``[boundary]``
    One line per boundary tag: ``zero``, ``rotation`` (the field
    ``(x2, -x1)``), ``parabolic <y_max>`` (channel inflow) or ``natural``
    (do-nothing, no Dirichlet condition).
``[reference]``
    ``tol``, ``max_iter`` of the stationary Newton solve.
``[initial]``
    ``kind = zero_flow`` (``y0 = 0``), ``reference`` (``y0 = yhat``, so
    ``v0 = 0``) or ``spinup``: the uncontrolled flow after ``spinup_time``,
    started at ``yhat`` and kicked during ``kick_time`` by seeded random
    forcing of amplitude ``kick_amplitude`` through the actuators.
``[actuators]``
    Any number of lines ``<label> = x0 x1 y0 y1 d1 d2``, each a grid of
    ``d1 x d2`` rectangles on the given axis-aligned region.
``[rhc]``
    ``T_inf``, ``delta``, ``T``, ``beta``, ``grad_tol``, ``grad_rtol``
    (stop once the gradient norm falls by this factor; 0 disables),
    ``max_iter``, ``memory``, ``bb_variant``.
``[mor]``
    ``ell``, ``update_basis``, ``adjoint_enrichment``, ``snapshot_cap``
    (``none`` for unbounded), ``dual_basis``.
``[output]``
    ``dir``, ``vtk`` (write reference and final fields).
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import logging
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, NsrhcError, ParameterError
from .fem import ActuatorSet, FeSpace, Rect, boundary_values, build_actuator_layout, build_space
from .flow import (
    Discretization,
    FomModel,
    SaddleSolver,
    TimeGrid,
    discretize,
    run_full_ns,
    solve_stationary_reference,
    stationary_residual,
)
from .mesh import Mesh, generate_channel_with_cylinder, generate_disc_with_hole, generate_rectangle, import_mesh
from .mor_rhc import MorRhcConfig, run_mor_rhc
from .optimizer import SgOptions
from .rhc import decay_rate, run_rhc, run_uncontrolled, steps_of
from .vtk import write_vtk

log = logging.getLogger(__name__)

__all__ = [
    "ScenarioConfig",
    "Setup",
    "Outcome",
    "MODES",
    "load_config",
    "loads_config",
    "dump_config",
    "bundled_config",
    "resolve_config",
    "inflow_profile",
    "prepare",
    "run_scenario",
    "run_sweep",
    "with_override",
]

MODES = ("uncontrolled", "fom_rhc", "mor_rhc", "stationary_only")
_GEOMETRY_ALIASES = {"example1": "disc_with_hole", "example2": "channel_with_cylinder"}
_GEOMETRIES = ("disc_with_hole", "channel_with_cylinder", "rectangle", "mesh_file")
_INITIAL = ("zero_flow", "reference", "spinup")


def inflow_profile(y_max: float, height: float):
    """Parabolic inflow ``x2 -> (4 y_max x2 (height - x2) / height^2, 0)``."""

    def profile(x2):
        x2 = np.asarray(x2, dtype=float)
        return 4.0 * y_max * x2 * (height - x2) / height**2, np.zeros_like(x2)

    return profile


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    geometry: str
    geometry_args: dict
    nu: float
    dt: float
    boundary: dict  # tag -> spec string
    actuators: tuple  # ((label, Rect, d1, d2), ...)
    rhc: MorRhcConfig
    reference_tol: float = 1e-10
    reference_max_iter: int = 30
    initial: dict = field(default_factory=lambda: {"kind": "zero_flow"})
    seed: int = 0
    out_dir: str = "out"
    vtk: bool = False
    source: str | None = None

    @property
    def dirichlet_labels(self) -> frozenset:
        return frozenset(t for t, s in self.boundary.items() if s.split()[0] != "natural")


# --------------------------------------------------------------------------
# parsing


def _get(parser, section, key, conv, default=None, required=False):
    if not parser.has_option(section, key):
        if required:
            raise ConfigError(f"[{section}] {key}: missing required field")
        return default
    raw = parser.get(section, key)
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _opt_int(s: str):
    return None if s.strip().lower() in ("none", "") else int(s)


def _check_boundary(tag: str, spec: str) -> str:
    parts = spec.split()
    if not parts:
        raise ConfigError(f"[boundary] {tag}: empty specification")
    kind = parts[0]
    if kind in ("zero", "rotation", "natural") and len(parts) == 1:
        return kind
    if kind == "parabolic" and len(parts) == 2:
        try:
            y_max = float(parts[1])
        except ValueError:
            raise ConfigError(f"[boundary] {tag}: parabolic needs a number, got {parts[1]!r}") from None
        return f"parabolic {y_max!r}"
    raise ConfigError(
        f"[boundary] {tag} = {spec!r}: expected zero, rotation, natural or 'parabolic <y_max>'"
    )


def _field_error(section: str, exc: Exception, fields) -> str:
    """``[section] field: message`` with the first field named in ``exc``."""
    msg = str(exc)
    words = msg.replace("=", " ").replace("<", " ").split()
    name = next((f for f in fields if f in words), None)
    return f"[{section}] {name}: {msg}" if name else f"[{section}]: {msg}"


def loads_config(text: str, source: str | None = None) -> ScenarioConfig:
    """Parse and validate a configuration given as text."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep tag and parameter case
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    for sec in ("scenario", "flow", "boundary", "actuators", "rhc"):
        if not parser.has_section(sec):
            raise ConfigError(f"missing section [{sec}]")
    name = _get(parser, "scenario", "name", str, "scenario")
    geometry = _get(parser, "scenario", "geometry", str, required=True).strip()
    geometry = _GEOMETRY_ALIASES.get(geometry, geometry)
    if geometry not in _GEOMETRIES:
        raise ConfigError(f"[scenario] geometry = {geometry!r}: expected one of {', '.join(_GEOMETRIES)}")
    gargs = {}
    if parser.has_section("geometry"):
        for k, v in parser.items("geometry"):
            if k == "path":
                gargs[k] = v
                continue
            try:
                gargs[k] = float(v)
            except ValueError:
                raise ConfigError(f"[geometry] {k} = {v!r}: expected a number") from None
    if geometry == "mesh_file":
        if "path" not in gargs:
            raise ConfigError("[geometry] path: required for geometry = mesh_file")
        p = Path(gargs["path"])
        if not p.is_absolute() and source is not None:
            p = Path(source).parent / p
        if not p.exists():
            raise ConfigError(f"[geometry] path = {gargs['path']!r}: file does not exist")
        gargs["path"] = str(p)
    nu = _get(parser, "flow", "nu", float, required=True)
    dt = _get(parser, "flow", "dt", float, required=True)
    if not nu > 0:
        raise ConfigError("[flow] nu: must be positive")
    if not dt > 0:
        raise ConfigError("[flow] dt: must be positive")
    boundary = {tag: _check_boundary(tag, spec) for tag, spec in parser.items("boundary")}
    acts = []
    for label, spec in parser.items("actuators"):
        parts = spec.split()
        if len(parts) != 6:
            raise ConfigError(f"[actuators] {label}: expected 'x0 x1 y0 y1 d1 d2', got {spec!r}")
        try:
            x0, x1, y0, y1 = map(float, parts[:4])
            d1, d2 = int(parts[4]), int(parts[5])
        except ValueError:
            raise ConfigError(f"[actuators] {label}: expected 'x0 x1 y0 y1 d1 d2', got {spec!r}") from None
        if not (x0 < x1 and y0 < y1 and d1 >= 1 and d2 >= 1):
            raise ConfigError(f"[actuators] {label}: need x0 < x1, y0 < y1, d1, d2 >= 1")
        acts.append((label, Rect(x0, x1, y0, y1), d1, d2))
    if not acts:
        raise ConfigError("[actuators]: at least one actuator region is required")
    try:
        sg = SgOptions(
            grad_tol=_get(parser, "rhc", "grad_tol", float, 1e-6),
            grad_rtol=_get(parser, "rhc", "grad_rtol", float, 0.0),
            max_iter=_get(parser, "rhc", "max_iter", int, 500),
            memory=_get(parser, "rhc", "memory", int, 10),
            bb_variant=_get(parser, "rhc", "bb_variant", str, "alternating"),
        )
    except ValueError as exc:
        raise ConfigError(_field_error("rhc", exc, ("grad_tol", "grad_rtol", "max_iter", "memory", "bb_variant"))) from None
    has_mor = parser.has_section("mor")
    try:
        rcfg = MorRhcConfig(
            T_inf=_get(parser, "rhc", "T_inf", float, required=True),
            delta=_get(parser, "rhc", "delta", float, required=True),
            T=_get(parser, "rhc", "T", float, required=True),
            beta=_get(parser, "rhc", "beta", float, required=True),
            dt=dt,
            sg=sg,
            ell=_get(parser, "mor", "ell", int, 20) if has_mor else 20,
            update_basis=_get(parser, "mor", "update_basis", _bool, False) if has_mor else False,
            adjoint_enrichment=_get(parser, "mor", "adjoint_enrichment", _bool, False) if has_mor else False,
            snapshot_cap=_get(parser, "mor", "snapshot_cap", _opt_int, None) if has_mor else None,
            dual_basis=_get(parser, "mor", "dual_basis", _bool, False) if has_mor else False,
        )
    except (ParameterError, ValueError) as exc:
        msg = str(exc)
        if any(k in msg for k in ("ell", "snapshot_cap")):
            raise ConfigError(_field_error("mor", exc, ("ell", "snapshot_cap"))) from None
        raise ConfigError(_field_error("rhc", exc, ("T_inf", "delta", "beta", "T"))) from None
    initial = {"kind": "zero_flow"}
    if parser.has_section("initial"):
        initial = dict(parser.items("initial"))
        kind = initial.get("kind", "zero_flow")
        if kind not in _INITIAL:
            raise ConfigError(f"[initial] kind = {kind!r}: expected one of {', '.join(_INITIAL)}")
        for k in ("spinup_time", "kick_time", "kick_amplitude"):
            if kind == "spinup" and k not in initial:
                raise ConfigError(f"[initial] {k}: required for kind = spinup")
        if kind == "spinup":
            try:
                st = float(initial["spinup_time"])
                kt = float(initial["kick_time"])
                float(initial["kick_amplitude"])
            except ValueError as exc:
                raise ConfigError(f"[initial]: {exc}") from None
            try:
                steps_of(st, dt, "[initial] spinup_time")
                steps_of(kt, dt, "[initial] kick_time")
            except ParameterError as exc:
                raise ConfigError(str(exc)) from None
    cfg = ScenarioConfig(
        name=name,
        geometry=geometry,
        geometry_args=gargs,
        nu=nu,
        dt=dt,
        boundary=boundary,
        actuators=tuple(acts),
        rhc=rcfg,
        reference_tol=_get(parser, "reference", "tol", float, 1e-10),
        reference_max_iter=_get(parser, "reference", "max_iter", int, 30),
        initial=initial,
        seed=_get(parser, "scenario", "seed", int, 0),
        out_dir=_get(parser, "output", "dir", str, "out"),
        vtk=_get(parser, "output", "vtk", _bool, False),
        source=source,
    )
    if not cfg.reference_tol > 0:
        raise ConfigError("[reference] tol: must be positive")
    return cfg


def load_config(path) -> ScenarioConfig:
    """Read and validate a configuration file.

    Raises
    ------
    ConfigError
        Naming the offending section, field and constraint.
    """
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{p}: no such configuration file")
    return loads_config(p.read_text(), source=str(p))


def bundled_config(name: str) -> str:
    """Text of a configuration shipped with the package (``example1``, ...)."""
    stem = name[:-4] if name.endswith(".cfg") else name
    res = resources.files("nsrhc").joinpath("configs", f"{stem}.cfg")
    if not res.is_file():
        raise ConfigError(f"no bundled configuration named {name!r}")
    return res.read_text()


def resolve_config(name_or_path) -> ScenarioConfig:
    """A file path, or the name of a bundled configuration."""
    p = Path(name_or_path)
    if p.exists():
        return load_config(p)
    return loads_config(bundled_config(str(name_or_path)), source=None)


def dump_config(cfg: ScenarioConfig) -> str:
    """Serialize to the INI grammar; ``loads_config(dump_config(c)) == c``
    up to the ``source`` field."""
    r = cfg.rhc
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser["scenario"] = {"name": cfg.name, "geometry": cfg.geometry, "seed": str(cfg.seed)}
    parser["geometry"] = {k: (v if isinstance(v, str) else repr(v)) for k, v in cfg.geometry_args.items()}
    parser["flow"] = {"nu": repr(cfg.nu), "dt": repr(cfg.dt)}
    parser["boundary"] = dict(cfg.boundary)
    parser["reference"] = {"tol": repr(cfg.reference_tol), "max_iter": str(cfg.reference_max_iter)}
    parser["initial"] = dict(cfg.initial)
    parser["actuators"] = {
        label: f"{rc.x0!r} {rc.x1!r} {rc.y0!r} {rc.y1!r} {d1} {d2}" for label, rc, d1, d2 in cfg.actuators
    }
    parser["rhc"] = {
        "T_inf": repr(r.T_inf),
        "delta": repr(r.delta),
        "T": repr(r.T),
        "beta": repr(r.beta),
        "grad_tol": repr(r.sg.grad_tol),
        "grad_rtol": repr(r.sg.grad_rtol),
        "max_iter": str(r.sg.max_iter),
        "memory": str(r.sg.memory),
        "bb_variant": r.sg.bb_variant,
    }
    parser["mor"] = {
        "ell": str(r.ell),
        "update_basis": str(r.update_basis).lower(),
        "adjoint_enrichment": str(r.adjoint_enrichment).lower(),
        "snapshot_cap": "none" if r.snapshot_cap is None else str(r.snapshot_cap),
        "dual_basis": str(r.dual_basis).lower(),
    }
    parser["output"] = {"dir": cfg.out_dir, "vtk": str(cfg.vtk).lower()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


_OVERRIDES = {
    "T": ("rhc", "T"),
    "delta": ("rhc", "delta"),
    "T_inf": ("rhc", "T_inf"),
    "beta": ("rhc", "beta"),
    "ell": ("rhc", "ell"),
    "update_basis": ("rhc", "update_basis"),
    "nu": ("top", "nu"),
    "dt": ("top", "dt"),
}


def with_override(cfg: ScenarioConfig, name: str, value) -> ScenarioConfig:
    """Copy of ``cfg`` with one sweepable parameter replaced."""
    if name not in _OVERRIDES:
        raise ConfigError(f"cannot sweep {name!r}; choose one of {', '.join(_OVERRIDES)}")
    where, attr = _OVERRIDES[name]
    try:
        if where == "top":
            new = dataclasses.replace(cfg, **{attr: float(value)})
            if attr == "dt":
                new = dataclasses.replace(new, rhc=dataclasses.replace(cfg.rhc, dt=float(value)))
            return new
        if attr == "ell":
            value = int(value)
        elif attr == "update_basis":
            value = value if isinstance(value, bool) else _bool(str(value))
        else:
            value = float(value)
        return dataclasses.replace(cfg, rhc=dataclasses.replace(cfg.rhc, **{attr: value}))
    except (ParameterError, ValueError) as exc:
        raise ConfigError(f"{name} = {value!r}: {exc}") from None


# --------------------------------------------------------------------------
# setup


@dataclass
class Setup:
    """Everything a run needs that does not depend on the mode."""

    cfg: ScenarioConfig
    mesh: Mesh
    space: FeSpace
    disc: Discretization
    lift: np.ndarray
    actuators: ActuatorSet
    yhat: np.ndarray
    phat: np.ndarray
    v0: np.ndarray
    model: FomModel
    timings: dict


def _build_mesh(cfg: ScenarioConfig) -> Mesh:
    g = dict(cfg.geometry_args)
    try:
        if cfg.geometry == "disc_with_hole":
            return generate_disc_with_hole(g.get("radius", 1.0), g.get("half_width", 0.25), g["target_h"])
        if cfg.geometry == "channel_with_cylinder":
            return generate_channel_with_cylinder(
                g.get("length", 2.2),
                g.get("height", 0.41),
                (g.get("center_x", 0.2), g.get("center_y", 0.2)),
                g.get("cyl_radius", 0.05),
                g["target_h"],
                g.get("cyl_h"),
            )
        if cfg.geometry == "rectangle":
            return generate_rectangle(
                g.get("x0", 0.0), g.get("x1", 1.0), g.get("y0", 0.0), g.get("y1", 1.0),
                int(g.get("nx", 8)), int(g.get("ny", 8)),
            )
        return import_mesh(g["path"])
    except KeyError as exc:
        raise ConfigError(f"[geometry] {exc.args[0]}: required for geometry = {cfg.geometry}") from None


def _boundary_functions(cfg: ScenarioConfig, mesh: Mesh) -> dict:
    ys = mesh.vertices[:, 1]
    height = float(ys.max() - ys.min())
    y0 = float(ys.min())
    out = {}
    for tag, spec in cfg.boundary.items():
        parts = spec.split()
        if parts[0] == "rotation":
            out[tag] = lambda x, y: (y, -x)
        elif parts[0] == "parabolic":
            prof = inflow_profile(float(parts[1]), height)
            out[tag] = lambda x, y, prof=prof: prof(y - y0)
    return out


def prepare(cfg: ScenarioConfig) -> Setup:
    """Mesh, spaces, operators, stationary reference and initial state."""
    timings = {}
    t = time.perf_counter()
    mesh = _build_mesh(cfg)
    missing = set(cfg.boundary) ^ set(mesh.tags)
    if missing:
        raise ConfigError(
            f"[boundary] tags {sorted(set(cfg.boundary))} do not match the mesh tags {sorted(mesh.tags)}"
        )
    space = build_space(mesh, cfg.dirichlet_labels)
    disc = discretize(space)
    lift = boundary_values(space, _boundary_functions(cfg, mesh))
    acts = build_actuator_layout(space, [(r, d1, d2) for _, r, d1, d2 in cfg.actuators])
    timings["setup"] = time.perf_counter() - t
    t = time.perf_counter()
    yhat, phat = solve_stationary_reference(disc, lift, cfg.nu, cfg.reference_tol, cfg.reference_max_iter)
    timings["reference"] = time.perf_counter() - t
    saddle = SaddleSolver(disc, cfg.nu, 1.0 / cfg.dt)
    model = FomModel(disc, cfg.nu, cfg.dt, acts.B, yhat, saddle=saddle)
    t = time.perf_counter()
    v0 = _initial_state(cfg, disc, lift, acts, yhat, saddle)
    timings["initial"] = time.perf_counter() - t
    return Setup(cfg, mesh, space, disc, lift, acts, yhat, phat, v0, model, timings)


def _initial_state(cfg, disc, lift, acts, yhat, saddle) -> np.ndarray:
    kind = cfg.initial.get("kind", "zero_flow")
    if kind == "zero_flow":
        return -yhat
    if kind == "reference":
        return np.zeros_like(yhat)
    st = float(cfg.initial["spinup_time"])
    kt = float(cfg.initial["kick_time"])
    amp = float(cfg.initial["kick_amplitude"])
    rng = np.random.default_rng(cfg.seed)
    kick = acts.B @ (amp * rng.standard_normal(acts.n_controls))
    n_kick = steps_of(kt, cfg.dt, "kick_time")
    n = steps_of(st, cfg.dt, "spinup_time")
    zero = np.zeros_like(kick)
    traj = run_full_ns(
        disc, cfg.nu, lift, yhat, TimeGrid(0.0, st, n),
        forcing=lambda k: kick if k <= n_kick else zero, saddle=saddle, store=False,
    )
    return traj.velocity[-1] - yhat


# --------------------------------------------------------------------------
# runs


@dataclass
class Outcome:
    mode: str
    exit_code: int
    summary: str
    result: object = None
    files: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def run_scenario(cfg: ScenarioConfig, mode: str, out: str | Path | None = None, setup: Setup | None = None) -> Outcome:
    """Run one mode and write its files into ``out`` (default: the configured
    directory). Never raises for numerical failures; those give a nonzero
    exit code and a diagnostic summary."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose one of {', '.join(MODES)}")
    outdir = Path(out if out is not None else cfg.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        setup = setup or prepare(cfg)
    except ConfigError:
        raise
    except NsrhcError as exc:
        log.error("setup failed: %s", exc)
        return Outcome(mode, 2, f"{cfg.name} {mode}: setup failed: {exc}")
    (outdir / "config.cfg").write_text(dump_config(cfg))
    files = [outdir / "config.cfg"]
    if mode == "stationary_only":
        res, div = stationary_residual(setup.disc, setup.yhat, setup.phat, cfg.nu)
        np.save(outdir / "reference.npy", setup.yhat)
        files.append(outdir / "reference.npy")
        write_vtk(outdir / "reference.vtk", setup.space, setup.yhat, setup.phat, title=f"{cfg.name} reference")
        files.append(outdir / "reference.vtk")
        ok = res <= cfg.reference_tol
        summary = (
            f"{cfg.name} stationary_only: residual={res:.3e} (tol {cfg.reference_tol:.1e}) "
            f"divergence={div:.3e} |yhat|_H={np.sqrt(setup.yhat @ (setup.disc.M @ setup.yhat)):.6g} "
            f"wall={time.perf_counter() - t0:.2f}s"
        )
        return Outcome(mode, 0 if ok else 1, summary, None, files, {"residual": res, "divergence": div})
    model, r = setup.model, cfg.rhc
    try:
        if mode == "uncontrolled":
            result = run_uncontrolled(model, setup.v0, r.T_inf, r.beta)
        elif mode == "fom_rhc":
            result = run_rhc(model, setup.v0, r.rhc(), progress=_progress)
        else:
            result = run_mor_rhc(model, setup.v0, r, progress=_progress)
    except NsrhcError as exc:
        log.error("%s run failed: %s", mode, exc)
        return Outcome(mode, 1, f"{cfg.name} {mode}: failed: {exc}")
    result.timings.update({f"prepare_{k}": v for k, v in setup.timings.items()})
    result.write_csv(outdir)
    files += [outdir / f for f in ("state_norm.csv", "control.csv", "cost.csv", "timing.csv")]
    if mode == "mor_rhc":
        files += [outdir / "phases.csv", outdir / "basis_log.csv"]
    if cfg.vtk and result.states is not None:
        write_vtk(outdir / "reference.vtk", setup.space, setup.yhat, setup.phat, title=f"{cfg.name} reference")
        write_vtk(outdir / "final.vtk", setup.space, setup.yhat + result.states[-1], title=f"{cfg.name} {mode} final")
        files += [outdir / "reference.vtk", outdir / "final.vtk"]
    code = 0 if result.status == "ok" else 1
    summary = (
        f"{cfg.name} {mode}: J_total={result.J_total:.12g} final_norm={result.state_norms[-1]:.6e} "
        f"decay_rate={decay_rate(result):.4f} wall={time.perf_counter() - t0:.2f}s status={result.status}"
    )
    return Outcome(mode, code, summary, result, files)


def _progress(i, k, rep, norm):
    it = rep.iterations if rep is not None else 0
    log.info("horizon %d (step %d): %d iterations, |v|_H = %.4e", i, k, it, norm)


def run_sweep(cfg: ScenarioConfig, name: str, values, mode: str = "fom_rhc", out: str | Path | None = None,
              include_uncontrolled: bool = True) -> tuple[list, str]:
    """Run ``mode`` for each value of the parameter ``name``.

    Returns the rows ``(value, J_total, final_norm)`` and a text table in
    the layout ``<name>  J``, preceded by a ``no controls`` row when
    ``include_uncontrolled``. Writes ``sweep.csv`` and one subdirectory per
    value. The stationary reference is shared when the sweep does not change
    the physics (``T``, ``delta``, ``T_inf``, ``beta``, ``ell``).
    """
    # validate every value before any run starts
    cfgs = [with_override(cfg, name, v) for v in values]
    outdir = Path(out if out is not None else cfg.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    shared = name in ("T", "delta", "T_inf", "beta", "ell", "update_basis")
    base = prepare(cfg) if shared else None
    rows = []
    if include_uncontrolled:
        o = run_scenario(cfg, "uncontrolled", outdir / "uncontrolled", setup=base)
        if o.exit_code != 0:
            raise NsrhcError(o.summary)
        rows.append(("no controls", o.result.J_total, float(o.result.state_norms[-1])))
    for v, c in zip(values, cfgs):
        s = None
        if base is not None:
            s = dataclasses.replace(base, cfg=c)
        o = run_scenario(c, mode, outdir / f"{name}={v}", setup=s)
        if o.exit_code != 0:
            raise NsrhcError(o.summary)
        rows.append((v, o.result.J_total, float(o.result.state_norms[-1])))
    lines = [f"{name:>12}  {'J':>20}  {'final |v|_H':>14}"]
    lines += [f"{str(v):>12}  {J:20.12f}  {n:14.6e}" for v, J, n in rows]
    table = "\n".join(lines)
    with open(outdir / "sweep.csv", "w") as fh:
        fh.write(f"{name},J_total,final_norm\n")
        for v, J, n in rows:
            fh.write(f"{v},{J!r},{n!r}\n")
    return rows, table
