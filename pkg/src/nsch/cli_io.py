"""
Configuration files, time series, snapshots and the command-line driver.

Config files are flat ``section.key = value`` lines; ``#`` starts a comment.
Snapshots are one text header line followed by raw little-endian float64
arrays (u1, u2, phi, mu row-major Nx x Ny, then the bottom and top wall
traces).
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import re
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .grid import WALLS, ChannelGrid, GridError, VectorField, make_grid
from .physics import PhysParams
from .stepper import (
    Equilibrium,
    FlatInterface,
    ICKind,
    PerturbedInterface,
    ShearFlow,
    SimState,
    StepConfig,
    StepEvent,
    StepFailure,
    TiltedInterface,
    advance,
    build_initial,
    delta_continuation,
    make_state,
)

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = "NSCHSNAP"
SNAPSHOT_VERSION = 1

TIMESERIES_COLUMNS = (
    "t", "kinetic", "gradient", "doublewell", "wall", "total",
    "viscous_diss", "slip_diss", "chem_diss", "relax_diss", "damping_norm",
    "law_residual", "mass_mean", "picard_iters",
)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None) -> None:
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key


class SnapshotError(ValueError):
    pass


class VersionMismatch(SnapshotError):
    pass


class DimensionMismatch(SnapshotError):
    pass


class TruncatedPayload(SnapshotError):
    pass


# --- config -----------------------------------------------------------------

@dataclass
class OutputConfig:
    directory: str = "out"
    snapshot_stride: int = 0
    timeseries: bool = True
    checkpoint_stride: int = 0


@dataclass
class RunConfig:
    grid: ChannelGrid
    params: PhysParams
    step: StepConfig
    n_steps: int
    ic: ICKind
    output: OutputConfig = field(default_factory=OutputConfig)


_FLOAT, _INT, _BOOL, _STR = "float", "int", "bool", "str"

_SCHEMA: dict[str, dict[str, str]] = {
    "grid": {"Lx": _FLOAT, "Nx": _INT, "Ny": _INT},
    "physics": {k: _FLOAT for k in ("beta", "a", "delta", "nu", "mobility", "relax")},
    "stepping": {
        "dt": _FLOAT, "n_steps": _INT, "picard_tol": _FLOAT, "picard_max": _INT,
        "solve_flow": _BOOL, "norm_spec": _STR,
    },
    "ic": {
        "kind": _STR, "value": _FLOAT, "x0": _FLOAT, "width": _FLOAT,
        "angle": _FLOAT, "amplitude": _FLOAT, "mode": _INT,
    },
    "output": {
        "directory": _STR, "snapshot_stride": _INT, "timeseries": _BOOL, "checkpoint_stride": _INT,
    },
}

_IC_KINDS = {
    "equilibrium": (Equilibrium, ("value",)),
    "flat": (FlatInterface, ("x0", "width")),
    "tilted": (TiltedInterface, ("angle", "x0", "width")),
    "perturbed": (PerturbedInterface, ("amplitude", "mode", "x0", "width")),
    "shear": (ShearFlow, ("amplitude", "x0", "width")),
}

_PI_RE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?\s*\*?\s*pi$")


def _parse_float(text: str) -> float:
    m = _PI_RE.match(text)
    if m:
        return (float(m.group(1)) if m.group(1) else 1.0) * math.pi
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _convert(kind: str, text: str) -> Any:
    if kind == _FLOAT:
        return _parse_float(text)
    if kind == _INT:
        return int(text)
    if kind == _BOOL:
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError("expected a boolean")
    return text


def parse_config(text: str) -> RunConfig:
    values: dict[str, dict[str, Any]] = {s: {} for s in _SCHEMA}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'section.key = value'", line=lineno)
        lhs, rhs = (s.strip() for s in line.split("=", 1))
        if "." not in lhs:
            raise ConfigError(f"key '{lhs}' lacks a section", line=lineno, key=lhs)
        section, key = lhs.split(".", 1)
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key '{lhs}'", line=lineno, key=lhs)
        if key in values[section]:
            raise ConfigError(f"duplicate key '{lhs}'", line=lineno, key=lhs)
        if not rhs:
            raise ConfigError(f"missing value for '{lhs}'", line=lineno, key=lhs)
        try:
            values[section][key] = _convert(_SCHEMA[section][key], rhs)
        except ValueError:
            raise ConfigError(f"invalid value '{rhs}' for '{lhs}'", line=lineno, key=lhs) from None
    return _build_config(values)


def _build_config(v: dict[str, dict[str, Any]]) -> RunConfig:
    gv = v["grid"]
    try:
        grid = make_grid(gv.get("Lx", 2.0 * math.pi), gv.get("Nx", 64), gv.get("Ny", 33))
    except GridError as exc:
        raise ConfigError(str(exc), key="grid") from None
    try:
        params = PhysParams(**v["physics"])
    except ValueError as exc:
        raise ConfigError(str(exc), key="physics") from None
    sv = dict(v["stepping"])
    n_steps = sv.pop("n_steps", 100)
    if n_steps < 0:
        raise ConfigError("n_steps must be >= 0", key="stepping.n_steps")
    if "dt" not in sv:
        raise ConfigError("stepping.dt is required", key="stepping.dt")
    try:
        step = StepConfig(**sv)
    except ValueError as exc:
        raise ConfigError(str(exc), key="stepping") from None
    iv = dict(v["ic"])
    kind = iv.pop("kind", "flat")
    if kind not in _IC_KINDS:
        raise ConfigError(f"unknown ic.kind '{kind}' (choose from {sorted(_IC_KINDS)})", key="ic.kind")
    cls, allowed = _IC_KINDS[kind]
    extra = set(iv) - set(allowed)
    if extra:
        raise ConfigError(f"ic.{sorted(extra)[0]} does not apply to ic.kind = {kind}", key=f"ic.{sorted(extra)[0]}")
    ic = cls(**iv)
    try:
        build_initial(make_grid(grid.Lx, 4, 5), ic)
    except ValueError as exc:
        raise ConfigError(str(exc), key="ic") from None
    ov = v["output"]
    out = OutputConfig(**ov)
    for key in ("snapshot_stride", "checkpoint_stride"):
        if getattr(out, key) < 0:
            raise ConfigError(f"{key} must be >= 0", key=f"output.{key}")
    return RunConfig(grid, params, step, n_steps, ic, out)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# --- time series ------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def event_row(ev: StepEvent) -> list[str]:
    e = ev.energy
    vals = [ev.state.t] + e.as_row() + [ev.law_residual, ev.mass_mean]
    return [_fmt(x) for x in vals] + [str(ev.picard.iterations)]


class TimeseriesWriter:
    """Sink writing one CSV row per step; rows are flushed as they arrive."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh)
        self._w.writerow(TIMESERIES_COLUMNS)
        self._fh.flush()

    def __call__(self, ev: StepEvent) -> None:
        self._w.writerow(event_row(ev))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TimeseriesWriter":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


def write_timeseries(path: str | Path, events: Sequence[StepEvent]) -> None:
    with TimeseriesWriter(path) as w:
        for ev in events:
            w(ev)


def read_timeseries(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TIMESERIES_COLUMNS:
        raise ValueError(f"{path}: not a time-series file (bad header)")
    body = rows[1:]
    out = {}
    for i, name in enumerate(TIMESERIES_COLUMNS):
        dtype = np.int64 if name == "picard_iters" else np.float64
        out[name] = np.array([r[i] for r in body], dtype=dtype)
    return out


# --- snapshots --------------------------------------------------------------

_PARAM_KEYS = tuple(f.name for f in fields(PhysParams))


def write_snapshot(path: str | Path, state: SimState) -> None:
    g = state.grid
    head = [SNAPSHOT_MAGIC, f"v{SNAPSHOT_VERSION}", f"Nx={g.Nx}", f"Ny={g.Ny}",
            f"Lx={g.Lx!r}", f"t={state.t!r}", f"step={state.step}"]
    head += [f"{k}={getattr(state.params, k)!r}" for k in _PARAM_KEYS]
    arrays = [state.u.u1, state.u.u2, state.phi, state.mu, state.psi_bottom, state.psi_top]
    with open(path, "wb") as fh:
        fh.write((" ".join(head) + "\n").encode("ascii"))
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_snapshot(path: str | Path) -> SimState:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise SnapshotError(f"{path}: missing header line")
    tokens = data[:nl].decode("ascii", errors="replace").split()
    if len(tokens) < 2 or tokens[0] != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path}: not a snapshot file")
    if tokens[1] != f"v{SNAPSHOT_VERSION}":
        raise VersionMismatch(f"{path}: snapshot version {tokens[1]}, expected v{SNAPSHOT_VERSION}")
    meta = {}
    for tok in tokens[2:]:
        k, _, val = tok.partition("=")
        meta[k] = val
    try:
        Nx, Ny = int(meta["Nx"]), int(meta["Ny"])
        g = ChannelGrid(float(meta["Lx"]), Nx, Ny)
        params = PhysParams(**{k: float(meta[k]) for k in _PARAM_KEYS})
        t, step = float(meta["t"]), int(meta["step"])
    except (KeyError, ValueError) as exc:
        raise DimensionMismatch(f"{path}: bad header ({exc})") from None
    payload = data[nl + 1:]
    n = 4 * Nx * Ny + 2 * Nx
    if len(payload) < 8 * n:
        raise TruncatedPayload(f"{path}: payload has {len(payload)} bytes, expected {8 * n}")
    if len(payload) > 8 * n:
        raise DimensionMismatch(f"{path}: payload has {len(payload)} bytes, expected {8 * n} for {Nx}x{Ny}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    f = [flat[i * Nx * Ny:(i + 1) * Nx * Ny].reshape(Nx, Ny).copy() for i in range(4)]
    off = 4 * Nx * Ny
    psi_b = flat[off:off + Nx].copy()
    psi_t = flat[off + Nx:off + 2 * Nx].copy()
    return SimState(g, t, VectorField(f[0], f[1]), f[2], f[3], psi_b, psi_t, params, step)


# --- command line -----------------------------------------------------------

class _SnapshotSink:
    def __init__(self, directory: Path, stride: int, stem: str) -> None:
        self.directory, self.stride, self.stem = directory, stride, stem

    def __call__(self, ev: StepEvent) -> None:
        if self.stride > 0 and ev.step % self.stride == 0:
            write_snapshot(self.directory / f"{self.stem}_{ev.step:06d}.snap", ev.state)


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    out = Path(args.out if args.out is not None else cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        state = read_snapshot(args.resume)
        if (state.grid.Nx, state.grid.Ny) != (cfg.grid.Nx, cfg.grid.Ny):
            raise ConfigError("resume snapshot grid does not match the config grid", key="grid")
        n = args.steps if args.steps is not None else max(cfg.n_steps - state.step, 0)
    else:
        u0, phi0 = build_initial(cfg.grid, cfg.ic)
        state = make_state(cfg.grid, u0, phi0, cfg.params)
        n = args.steps if args.steps is not None else cfg.n_steps
    sinks: list[Any] = [
        _SnapshotSink(out, cfg.output.snapshot_stride, "snap"),
        _SnapshotSink(out, cfg.output.checkpoint_stride, "checkpoint"),
    ]
    writer = TimeseriesWriter(out / "timeseries.csv") if cfg.output.timeseries else None
    if writer is not None:
        sinks.insert(0, writer)
    try:
        final = advance(state, n, cfg.step, sinks)
    finally:
        if writer is not None:
            writer.close()
    write_snapshot(out / "final.snap", final)
    print(f"completed {n} steps, t = {final.t:.6g}, output in {out}")
    return 0


def _cmd_audit(args: argparse.Namespace) -> int:
    ts = read_timeseries(args.timeseries)
    n = ts["t"].size
    if n == 0:
        print("empty time series")
        return 0
    inc = np.diff(ts["total"])
    m0 = ts["mass_mean"][0]
    print(f"steps                {n}")
    print(f"max |law_residual|   {np.max(np.abs(ts['law_residual'])):.6e}")
    print(f"max energy increment {np.max(inc) if inc.size else 0.0:.6e}")
    print(f"mass drift           {np.max(np.abs(ts['mass_mean'] - m0)) / (1 + abs(m0)):.6e}")
    print(f"max picard_iters     {int(np.max(ts['picard_iters']))}")
    return 0


def _cmd_continuation(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    try:
        deltas = [float(s) for s in args.deltas.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"invalid --deltas '{args.deltas}'", key="deltas") from None
    horizon = args.horizon if args.horizon is not None else cfg.n_steps * cfg.step.dt
    u0, phi0 = build_initial(cfg.grid, cfg.ic)
    s0 = make_state(cfg.grid, u0, phi0, replace(cfg.params, delta=0.0))
    rep = delta_continuation(s0, cfg.step, deltas, horizon)
    print("delta,cauchy_phi,cauchy_u,vs_native_phi,vs_native_u")
    for i, d in enumerate(rep.deltas):
        cp = _fmt(rep.cauchy_phi[i - 1]) if i > 0 else ""
        cu = _fmt(rep.cauchy_u[i - 1]) if i > 0 else ""
        print(f"{_fmt(d)},{cp},{cu},{_fmt(rep.native_phi[i])},{_fmt(rep.native_u[i])}")
    return 0


def _cmd_mms(args: argparse.Namespace) -> int:
    from .diagnostics import MMSCase, mms_convergence

    try:
        case = MMSCase(args.case)
    except ValueError:
        raise ConfigError(f"unknown case '{args.case}' (choose from {[c.value for c in MMSCase]})") from None
    res = [float(s) for s in args.resolutions.split(",")] if args.resolutions else None
    tab = mms_convergence(case, res)
    cols = ["resolution", "error", "order"] + list(tab.extras)
    print(",".join(cols))
    for row in tab.rows():
        print(",".join("" if isinstance(v, float) and math.isnan(v) else _fmt(v) for v in row))
    return 0


def _cmd_angle(args: argparse.Namespace) -> int:
    from .diagnostics import contact_angle

    s = read_snapshot(args.snapshot)
    for w in WALLS:
        angles = contact_angle(s.grid, s.phi, w)
        print(f"{w.value}: " + " ".join(f"{a:.3f}" for a in angles))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nsch", description="Two-phase channel flow with moving contact lines.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="advance a configured run and write its outputs")
    p.add_argument("config")
    p.add_argument("--steps", type=int)
    p.add_argument("--out")
    p.add_argument("--resume", metavar="SNAPSHOT")
    p.set_defaults(func=_cmd_run)
    p = sub.add_parser("audit", help="summarize the energy law of a time series")
    p.add_argument("timeseries")
    p.set_defaults(func=_cmd_audit)
    p = sub.add_parser("continuation", help="delta ladder study")
    p.add_argument("config")
    p.add_argument("--deltas", required=True)
    p.add_argument("--horizon", type=float)
    p.set_defaults(func=_cmd_continuation)
    p = sub.add_parser("mms", help="manufactured-solution convergence table")
    p.add_argument("case")
    p.add_argument("--resolutions")
    p.set_defaults(func=_cmd_mms)
    p = sub.add_parser("angle", help="wall contact angles of a snapshot")
    p.add_argument("snapshot")
    p.set_defaults(func=_cmd_angle)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except StepFailure as exc:
        print(f"error: step {exc.step}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
