"""
File formats: model and run configuration (YAML, optional mode CSV), the
binary Choi-series container, and plot-ready CSV tables.

Series container layout (all little-endian)::

    8 bytes   magic b"CHOIMAP1"
    uint32    length H of the JSON header
    H bytes   UTF-8 JSON: {"d_s", "dt", "n", "beta", "model_hash", "format"}
    n x f8    snapshot times in fs
    n x d^4 x c16   Choi matrices, row-major, interleaved (re, im) float64
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .choi import ChoiSeries
from .vibronic_model import (
    BathMode,
    DisorderTerm,
    ModelError,
    VibronicModel,
    beta_from_temperature,
)

MAGIC = b"CHOIMAP1"
CONFIG_SCHEMA = "choimap-config/1"
MODEL_SCHEMA = "choimap-model/1"


class ConfigError(ValueError):
    """Invalid configuration or model file; carries a source location."""

    def __init__(self, message, path=None, line=None):
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if self.path:
            where = self.path + (f":{line}" if line else "") + ": "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)


class ContainerError(ValueError):
    pass


# --------------------------------------------------------------------------
# YAML with line numbers


def _construct(node, prefix, lines):
    lines[prefix] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for knode, vnode in node.value:
            key = knode.value
            lines[prefix + (key,)] = knode.start_mark.line + 1
            out[key] = _construct(vnode, prefix + (key,), lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v, prefix + (i,), lines) for i, v in enumerate(node.value)]
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


@dataclass
class Located:
    """Parsed YAML plus the source line of every key path."""

    data: Any
    lines: dict
    path: Optional[Path] = None

    def line(self, *keys) -> Optional[int]:
        keys = tuple(keys)
        while keys and keys not in self.lines:
            keys = keys[:-1]
        return self.lines.get(keys)

    def error(self, message, *keys) -> ConfigError:
        return ConfigError(message, self.path, self.line(*keys))


def load_yaml(path) -> Located:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read file: {exc.strerror}", path) from exc
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", path, line) from exc
    lines = {}
    data = {} if node is None else _construct(node, (), lines)
    return Located(data, lines, path)


# --------------------------------------------------------------------------
# typed field access


def _get(loc: Located, mapping, key, kind, keys, default=..., check=None):
    if key not in mapping:
        if default is ...:
            raise loc.error(f"missing required key '{key}'", *keys)
        return default
    value = mapping[key]
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        value = float(value)
    elif kind is int and isinstance(value, int) and not isinstance(value, bool):
        pass
    elif kind is bool and isinstance(value, bool):
        pass
    elif kind is str and isinstance(value, str):
        pass
    elif kind in (list, dict) and isinstance(value, kind):
        pass
    else:
        raise loc.error(f"'{key}' must be of type {kind.__name__}, got {type(value).__name__}", *keys, key)
    if check is not None:
        msg = check(value)
        if msg:
            raise loc.error(f"'{key}' {msg}", *keys, key)
    return value


def _positive(v):
    return None if v > 0 else "must be positive"


def _matrix(loc, value, d, keys):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise loc.error("matrix entries must be numbers", *keys) from None
    if arr.shape == (d * d,):
        arr = arr.reshape(d, d)
    if arr.shape == (d,):
        arr = np.diag(arr)
    if arr.shape != (d, d):
        raise loc.error(f"expected a {d}x{d} matrix, a row-major list of {d * d}, or a diagonal of {d}", *keys)
    return arr


# --------------------------------------------------------------------------
# model files


def read_modes_csv(path, d: int, fock_dim: int = 10) -> list:
    """Bath modes from CSV.

    Columns ``omega_cm`` plus either ``g_11 .. g_dd`` (full coupling
    matrix, 1-based row/column) or ``site`` and ``g`` (a single diagonal
    element, 1-based). An optional ``fock_dim`` column overrides the default.
    """
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise ConfigError(f"cannot read mode table: {exc.strerror}", path) from exc
    with handle:
        reader = csv.DictReader(handle)
        fields = reader.fieldnames or []
        if "omega_cm" not in fields:
            raise ConfigError("mode table needs an 'omega_cm' column", path, 1)
        full = [f"g_{i}{j}" for i in range(1, d + 1) for j in range(1, d + 1)]
        modes = []
        for row_no, row in enumerate(reader, start=2):
            try:
                omega = float(row["omega_cm"])
                if "site" in fields and "g" in fields:
                    site = int(row["site"])
                    if not 1 <= site <= d:
                        raise ConfigError(f"site {site} outside 1..{d}", path, row_no)
                    g = np.zeros((d, d))
                    g[site - 1, site - 1] = float(row["g"])
                elif all(f in fields for f in full):
                    g = np.array([float(row[f]) for f in full]).reshape(d, d)
                else:
                    raise ConfigError(
                        "mode table needs 'site' and 'g' columns or all of g_11..g_dd", path, 1
                    )
                fd = int(row["fock_dim"]) if row.get("fock_dim") else fock_dim
                modes.append(BathMode(omega, g, fd))
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"bad mode row: {exc}", path, row_no) from exc
    return modes


@dataclass
class ModelSpec:
    model: VibronicModel
    beta: Optional[float] = None
    t_c: Optional[float] = None
    source: Optional[Path] = None


def load_model(path) -> ModelSpec:
    """Read a model YAML (energies in cm^-1, indices 1-based)."""
    loc = load_yaml(path)
    top = loc.data
    if not isinstance(top, dict):
        raise loc.error("model file must be a mapping")
    base = loc.path.parent
    d = _get(loc, top, "d_s", int, (), check=_positive)
    eps = _matrix(loc, _get(loc, top, "epsilon", list, ()), d, ("epsilon",))
    if not np.allclose(eps, eps.T):
        raise loc.error("epsilon must be symmetric", "epsilon")
    default_fock = _get(loc, top, "fock_dim", int, (), default=10, check=_positive)
    modes = []
    for i, item in enumerate(_get(loc, top, "modes", list, (), default=[])):
        keys = ("modes", i)
        if not isinstance(item, dict):
            raise loc.error("each mode must be a mapping", *keys)
        omega = _get(loc, item, "omega_cm", float, keys, check=_positive)
        g = _matrix(loc, _get(loc, item, "coupling", list, keys), d, keys + ("coupling",))
        fd = _get(loc, item, "fock_dim", int, keys, default=default_fock, check=_positive)
        try:
            modes.append(BathMode(omega, g, fd))
        except ModelError as exc:
            raise loc.error(str(exc), *keys) from exc
    if "modes_csv" in top:
        csv_path = base / _get(loc, top, "modes_csv", str, ())
        modes += read_modes_csv(csv_path, d, default_fock)
    disorder = []
    for i, item in enumerate(_get(loc, top, "disorder", list, (), default=[])):
        keys = ("disorder", i)
        if not isinstance(item, dict):
            raise loc.error("each disorder term must be a mapping", *keys)
        n = _get(loc, item, "n", int, keys)
        m = _get(loc, item, "m", int, keys, default=n)
        if not (1 <= n <= d and 1 <= m <= d):
            raise loc.error(f"disorder indices must lie in 1..{d}", *keys)
        sigma = _get(loc, item, "sigma_cm", float, keys, check=_positive)
        dim = _get(loc, item, "basis_dim", int, keys, default=10, check=_positive)
        disorder.append(DisorderTerm(n - 1, m - 1, sigma, dim))
    try:
        model = VibronicModel(eps, modes, disorder)
    except ModelError as exc:
        raise loc.error(str(exc)) from exc
    beta = _beta_from(loc, top, ())
    t_c = _get(loc, top, "t_c_fs", float, (), default=None, check=_positive) if "t_c_fs" in top else None
    return ModelSpec(model, beta, t_c, loc.path)


def _beta_from(loc, mapping, keys):
    has_b = "beta_cm" in mapping
    has_t = "temperature_K" in mapping
    if has_b and has_t:
        raise loc.error("give either beta_cm or temperature_K, not both", *keys, "beta_cm")
    if has_b:
        return _get(loc, mapping, "beta_cm", float, keys, check=_positive)
    if has_t:
        return beta_from_temperature(_get(loc, mapping, "temperature_K", float, keys, check=_positive))
    return None


# --------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    model_path: Path
    dt: float
    t_max: float
    snapshot_stride: int = 1
    rank: Any = 16
    krylov_dim: int = 30
    krylov_tol: float = 1e-10
    output: Path = Path("out")
    beta: Optional[float] = None
    basis: Optional[np.ndarray] = None
    spectrum: bool = True
    kernel: bool = True
    ttm_memory: Optional[float] = None
    ttm_horizon: Optional[float] = None
    pauli_window: Optional[tuple] = None
    initial_site: int = 1
    oracle: bool = False
    plots: bool = True
    source: Optional[Path] = None
    extras: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


def _read_basis(path, base):
    p = (base / path) if not Path(path).is_absolute() else Path(path)
    if p.suffix == ".npy":
        return np.load(p)
    return np.loadtxt(p, delimiter=",", dtype=complex)


def load_config(path) -> RunConfig:
    loc = load_yaml(path)
    top = loc.data
    if not isinstance(top, dict):
        raise loc.error("config must be a mapping")
    schema = _get(loc, top, "schema", str, ())
    if schema != CONFIG_SCHEMA:
        raise loc.error(f"unsupported schema '{schema}', expected '{CONFIG_SCHEMA}'", "schema")
    known = {
        "schema", "model", "beta_cm", "temperature_K", "dt_fs", "t_max_fs", "snapshot_stride",
        "rank", "krylov", "output", "basis", "analysis", "oracle", "plots",
    }
    for key in top:
        if key not in known:
            raise loc.error(f"unknown key '{key}'", key)
    base = loc.path.parent
    model_path = base / _get(loc, top, "model", str, ())
    dt = _get(loc, top, "dt_fs", float, (), check=_positive)
    t_max = _get(loc, top, "t_max_fs", float, (), check=_positive)
    n = t_max / dt
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise loc.error("t_max_fs must be a whole number of steps", "t_max_fs")
    stride = _get(loc, top, "snapshot_stride", int, (), default=1, check=_positive)
    rank = top.get("rank", 16)
    if not (isinstance(rank, int) and rank > 0 or isinstance(rank, list) and all(isinstance(r, int) and r > 0 for r in rank)):
        raise loc.error("'rank' must be a positive integer or a list of them", "rank")
    kry = _get(loc, top, "krylov", dict, (), default={})
    kdim = _get(loc, kry, "dim", int, ("krylov",), default=30, check=lambda v: None if v >= 2 else "must be at least 2")
    ktol = _get(loc, kry, "tol", float, ("krylov",), default=1e-10, check=_positive)
    out = Path(_get(loc, top, "output", str, (), default="out"))
    out = out if out.is_absolute() else base / out
    basis = None
    if "basis" in top:
        b = _get(loc, top, "basis", str, ())
        if b != "site":
            try:
                basis = _read_basis(b, base)
            except (OSError, ValueError) as exc:
                raise loc.error(f"cannot read basis file: {exc}", "basis") from exc
    ana = _get(loc, top, "analysis", dict, (), default={})
    keys = ("analysis",)
    spectrum = _get(loc, ana, "spectrum", bool, keys, default=True)
    kernel = _get(loc, ana, "kernel", bool, keys, default=True)
    ttm = _get(loc, ana, "ttm", dict, keys, default={})
    ttm_memory = _get(loc, ttm, "memory_fs", float, keys + ("ttm",), default=None, check=_positive) if ttm else None
    ttm_horizon = _get(loc, ttm, "horizon_fs", float, keys + ("ttm",), default=None, check=_positive) if ttm else None
    pauli = _get(loc, ana, "pauli", dict, keys, default={})
    window = None
    if pauli:
        w = _get(loc, pauli, "window_fs", list, keys + ("pauli",))
        if len(w) != 2 or not all(isinstance(x, (int, float)) for x in w) or not 0 < w[0] < w[1]:
            raise loc.error("'window_fs' must be [start, end] with 0 < start < end", *keys, "pauli", "window_fs")
        window = (float(w[0]), float(w[1]))
    site = _get(loc, ana, "initial_site", int, keys, default=1, check=_positive)
    return RunConfig(
        model_path=model_path,
        dt=dt,
        t_max=t_max,
        snapshot_stride=stride,
        rank=rank,
        krylov_dim=kdim,
        krylov_tol=ktol,
        output=out,
        beta=_beta_from(loc, top, ()),
        basis=basis,
        spectrum=spectrum,
        kernel=kernel,
        ttm_memory=ttm_memory,
        ttm_horizon=ttm_horizon,
        pauli_window=window,
        initial_site=site,
        oracle=_get(loc, top, "oracle", bool, (), default=False),
        plots=_get(loc, top, "plots", bool, (), default=True),
        source=loc.path,
    )


# --------------------------------------------------------------------------
# series container


def write_series(series: ChoiSeries, path) -> None:
    header = {
        "format": 1,
        "d_s": int(series.d_s),
        "dt": float(series.dt),
        "n": int(len(series)),
        "beta": None if np.isinf(series.beta) else float(series.beta),
        "model_hash": series.model_hash,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.asarray(series.times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(series.mats, dtype="<c16").tobytes())


def read_series(path) -> ChoiSeries:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ContainerError(f"cannot read series: {exc.strerror}") from exc
    if raw[:8] != MAGIC or len(raw) < 12:
        raise ContainerError("not a Choi series container (bad magic)")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode())
        d, n, dt = int(header["d_s"]), int(header["n"]), float(header["dt"])
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise ContainerError(f"corrupt container header: {exc}") from exc
    off = 12 + hlen
    need = off + 8 * n + 16 * n * d**4
    if len(raw) != need:
        raise ContainerError(f"container size {len(raw)} does not match header (expected {need})")
    times = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
    mats = np.frombuffer(raw, dtype="<c16", count=n * d**4, offset=off + 8 * n).reshape(n, d * d, d * d)
    if not np.allclose(times, dt * np.arange(n), atol=1e-9 * max(1.0, dt * n)):
        raise ContainerError("container times are not the uniform grid n * dt")
    beta = header.get("beta")
    return ChoiSeries(d, dt, mats.astype(np.complex128), np.inf if beta is None else beta, header.get("model_hash", ""))


# --------------------------------------------------------------------------
# CSV tables


def _fmt(x) -> str:
    return repr(float(x))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def write_diagnostics_csv(path, diag: np.ndarray) -> None:
    write_csv(path, ["t_fs", "trace", "tp_residual", "min_eig"], diag)


def write_spectrum_csv(path, spec, k: Optional[int] = None) -> None:
    lam = spec.eigenvalues if k is None else spec.eigenvalues[:, :k]
    header = ["t_fs"] + [f"lambda_{i + 1}" for i in range(lam.shape[1])] + ["S", "r_eff"]
    rows = np.column_stack([spec.times, lam, spec.entropy, spec.effective_rank])
    write_csv(path, header, rows)


def write_populations_csv(path, times, pops) -> None:
    pops = np.asarray(pops)
    header = ["t_fs"] + [f"p_{i + 1}" for i in range(pops.shape[1])]
    write_csv(path, header, np.column_stack([times, pops]))


def write_kernel_norms_csv(path, rows: np.ndarray) -> None:
    header = ["lag_fs", "total"]
    if rows.shape[1] == 6:
        header += ["pop_pop", "pop_coh", "coh_pop", "coh_coh"]
    write_csv(path, header, rows)


def write_rates_csv(path, rate_mats: dict) -> None:
    """One block of rows per method: ``method, to_site, from_1 .. from_d``."""
    d = next(iter(rate_mats.values())).W.shape[0] if rate_mats else 0
    rows = []
    for name, rm in rate_mats.items():
        for i in range(d):
            rows.append([name, str(i + 1)] + [_fmt(x) for x in rm.W[i]])
    write_csv(path, ["method", "to_site"] + [f"from_{j + 1}" for j in range(d)], rows)


def read_csv(path) -> tuple:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
