"""Experiment configuration, result rows and the four experiment runners.

Column meaning per experiment (a column that does not apply is written as 0):

=========  ==========================  =========================================
column     compress / exp3d            solve / encode
=========  ==========================  =========================================
runtime_s  compression wall time       compression + solve / + encoding
nnz        nonzeros of ``A_sp``        nonzeros of ``A_sp`` / of the factors
s_r, s_c   row / column sparsity       row / column sparsity of ``A_sp``
cond_ratio 0                           kappa(A_sp) / kappa(A) (solve only)
alpha_A    0                           closed-form subnormalisation (encode)
residual   0                           dense vs extended solve (solve);
                                       payload extraction error (encode)
succ_prob  0                           ``||x||^2 / ||x'||^2`` (solve)
=========  ==========================  =========================================

A row whose computation failed numerically carries -1 in every measured
column; the reason is in the sidecar log.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blockenc import extraction_error, recursive_encode
from .errors import HBSError, InvalidInputError
from .geometry import build_tree, expected_depth
from .hbs import hbs_compress, reconstruct
from .io import read_points
from .kernels import (
    FAMILIES,
    KernelMatrix,
    KernelSpec,
    line_points,
    point_source_rhs,
    sphere_points,
    starfish_boundary,
    starfish_equispaced,
)
from .sparsify import (
    assemble_extended,
    cond2_estimate,
    solve_extended,
    sparsity_profile,
    tikhonov_solve,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ResultRow",
    "ExperimentResult",
    "RESULT_COLUMNS",
    "EXPERIMENTS",
    "parse_config",
    "load_config",
    "run_compress",
    "run_solve",
    "run_encode",
    "run_3d",
    "run_experiment",
    "format_csv",
]

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("N", "runtime_s", "nnz", "s_r", "s_c", "cond_ratio", "alpha_A",
                  "solve_residual", "success_prob")
EXPERIMENTS = ("compress", "solve", "encode", "exp3d")
GEOMETRIES = ("starfish_gauss", "starfish_equispaced", "sphere", "line", "file")
DENSE_REFERENCE_LIMIT = 4096


class ConfigError(InvalidInputError):
    """The experiment configuration is malformed."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    kernel: str = "log2d"
    kappa: float = 0.0
    p_list: tuple = (1.0,)
    geometry: str = "starfish_equispaced"
    n_list: tuple = (1024,)
    nodes_per_panel: int = 16
    tol: float = 1e-10
    f: float = 2.0
    t_list: tuple = (0.5,)
    alpha: float | None = None
    proxy: str = "on"
    leaf_size: int = 64
    proxy_m: int | None = None
    radius_factor: float = 1.5
    seed: int = 42
    points_file: str | None = None
    per_factor_eps: float = 0.0
    cond: bool = True
    name: str | None = None

    @property
    def stem(self) -> str:
        return self.name or self.experiment

    def kernel_spec(self, p: float | None = None) -> KernelSpec:
        return KernelSpec(self.kernel, kappa=self.kappa, p=self.p_list[0] if p is None else p)


_DEFAULTS = {
    "compress": dict(kernel="log2d", geometry="starfish_equispaced", leaf_size=32, tol=1e-10,
                     n_list=(1024, 2048, 4096, 8192, 16384)),
    "solve": dict(kernel="hankel2d", kappa=40.0, geometry="starfish_gauss", tol=1e-10,
                  n_list=(2048,), t_list=(1.0, 0.5, 0.25)),
    "encode": dict(kernel="powerlaw", geometry="line", leaf_size=16, tol=1e-10,
                   p_list=(1.0, 12.0), n_list=(128, 256, 512, 1024, 2048, 4096)),
    "exp3d": dict(kernel="helmholtz3d", kappa=1.0, geometry="sphere", leaf_size=64, tol=1e-3,
                  n_list=(1024, 2048, 4096, 8192)),
}

_FLOAT_KEYS = {"kappa", "tol", "f", "alpha", "radius_factor", "per_factor_eps"}
_INT_KEYS = {"nodes_per_panel", "leaf_size", "proxy_m", "seed"}
_LIST_FLOAT = {"p_list": "p", "t_list": "t"}


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def parse_config(text: str, experiment: str | None = None, base_dir: Path | None = None,
                 overrides: dict | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) into a validated config."""
    raw: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    exp = raw.pop("experiment", None) or experiment
    if experiment and exp != experiment:
        raise ConfigError(f"config is for experiment {exp!r}, not {experiment!r}")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}")
    values = dict(_DEFAULTS[exp])
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key, value in raw.items():
        try:
            if key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key in _INT_KEYS:
                values[key] = int(value)
            elif key in ("p", "t"):
                values[f"{key}_list"] = (float(value),)
            elif key in _LIST_FLOAT:
                values[key] = tuple(float(v) for v in value.split(","))
            elif key == "n_list":
                values[key] = tuple(int(v) for v in value.split(","))
            elif key == "cond":
                values[key] = _bool(value)
            elif key in names:
                values[key] = value
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    if values.get("points_file") and base_dir is not None:
        pf = Path(values["points_file"])
        values["points_file"] = str(pf if pf.is_absolute() else base_dir / pf)
    cfg = ExperimentConfig(experiment=exp, **values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.kernel not in FAMILIES:
        raise ConfigError(f"unknown kernel {cfg.kernel!r}")
    if cfg.geometry not in GEOMETRIES:
        raise ConfigError(f"unknown geometry {cfg.geometry!r}")
    if cfg.geometry == "file":
        if not cfg.points_file or not Path(cfg.points_file).is_file():
            raise ConfigError(f"points file {cfg.points_file!r} does not exist")
    if not cfg.n_list or any(n < 1 for n in cfg.n_list):
        raise ConfigError("n_list must hold positive sizes")
    if any(b <= a for a, b in zip(cfg.n_list, cfg.n_list[1:])):
        raise ConfigError("n_list must be strictly ascending")
    if cfg.geometry == "starfish_gauss" and any(n % cfg.nodes_per_panel for n in cfg.n_list):
        raise ConfigError("every N must be a multiple of nodes_per_panel")
    if not cfg.tol > 0 or not cfg.f >= 1 or cfg.leaf_size < 1:
        raise ConfigError("need tol > 0, f >= 1 and leaf_size >= 1")
    if any(not 0 < t <= 1 for t in cfg.t_list):
        raise ConfigError("t must lie in (0, 1]")
    if cfg.alpha is not None and not cfg.alpha > 0:
        raise ConfigError("alpha must be positive")
    if cfg.proxy not in ("on", "off", "both"):
        raise ConfigError("proxy must be on, off or both")
    if cfg.per_factor_eps < 0:
        raise ConfigError("per_factor_eps must be non-negative")
    if not cfg.radius_factor > 1:
        raise ConfigError("radius_factor must exceed 1")
    if cfg.experiment == "solve" and max(cfg.n_list) > DENSE_REFERENCE_LIMIT:
        raise ConfigError(f"solve needs N <= {DENSE_REFERENCE_LIMIT} for the dense reference")
    try:
        cfg.kernel_spec()
        for p in cfg.p_list:
            cfg.kernel_spec(p)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, experiment: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    return parse_config(path.read_text(), experiment, path.parent, overrides)


@dataclass(frozen=True)
class ResultRow:
    N: int
    runtime_s: float
    nnz: int
    s_r: int
    s_c: int
    cond_ratio: float = 0.0
    alpha_A: float = 0.0
    solve_residual: float = 0.0
    success_prob: float = 0.0

    def __post_init__(self):
        for name in RESULT_COLUMNS:
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvalidInputError(f"result column {name} is not finite: {v}")

    @classmethod
    def failed(cls, n: int) -> "ResultRow":
        """Sentinel row (every measured column -1) for a numerical failure."""
        return cls(N=n, runtime_s=-1.0, nnz=-1, s_r=-1, s_c=-1, cond_ratio=-1.0, alpha_A=-1.0,
                   solve_residual=-1.0, success_prob=-1.0)

    def values(self):
        return tuple(getattr(self, c) for c in RESULT_COLUMNS)


@dataclass
class ExperimentResult:
    """Rows per output table, sidecar log lines, and whether any row was flagged."""

    tables: dict = field(default_factory=dict)
    log: list = field(default_factory=list)
    numerical_failure: bool = False

    def add(self, table: str, row: ResultRow) -> None:
        self.tables.setdefault(table, []).append(row)

    def note(self, msg: str) -> None:
        self.log.append(msg)
        log.info(msg)

    def fail(self, table: str, n: int, msg: str) -> None:
        self.numerical_failure = True
        self.add(table, ResultRow.failed(n))
        self.log.append(msg)
        log.warning(msg)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def format_csv(rows) -> str:
    lines = [",".join(RESULT_COLUMNS)]
    for row in sorted(rows, key=lambda r: r.N):
        lines.append(",".join(_fmt(v) for v in row.values()))
    return "\n".join(lines) + "\n"


def _geometry(cfg: ExperimentConfig, n: int):
    g = cfg.geometry
    if g == "starfish_gauss":
        return starfish_boundary(n // cfg.nodes_per_panel, cfg.nodes_per_panel)
    if g == "starfish_equispaced":
        return starfish_equispaced(n)
    if g == "sphere":
        return sphere_points(n)
    if g == "line":
        return line_points(n)
    cloud = read_points(cfg.points_file)
    return cloud, np.full(cloud.n, 1.0 / cloud.n)


def _sizes(cfg: ExperimentConfig):
    if cfg.geometry == "file":
        return (read_points(cfg.points_file).n,)
    return cfg.n_list


def _compress(cfg, spec, cloud, w, use_proxy):
    km = KernelMatrix(spec, cloud, w)
    tree = build_tree(cloud, cfg.leaf_size)
    t0 = time.perf_counter()
    factors, stats = hbs_compress(km, tree=tree, f=cfg.f, tol=cfg.tol, use_proxy=use_proxy,
                                  proxy_m=cfg.proxy_m, radius_factor=cfg.radius_factor)
    return km, tree, factors, stats, time.perf_counter() - t0


def _flag_saturation(res, n, stats):
    if stats.saturated_blocks:
        res.note(f"N={n}: {stats.saturated_blocks} blocks kept full rank (tolerance not reached below block size)")


def _sparsify_row(cfg, spec, n, use_proxy, res):
    cloud, w = _geometry(cfg, n)
    _, tree, factors, stats, secs = _compress(cfg, spec, cloud, w, use_proxy)
    _flag_saturation(res, n, stats)
    A_sp = assemble_extended(factors, cfg.t_list[0])
    s_r, s_c, _ = sparsity_profile(A_sp)
    res.note(f"N={n} proxy={'on' if use_proxy else 'off'} depth={factors.depth} tree_levels={tree.depth} "
             f"expected_levels={expected_depth(n, cfg.leaf_size, cloud.d)} max_rank={stats.max_rank} "
             f"factor_nnz={stats.nnz_total}")
    return ResultRow(N=n, runtime_s=secs, nnz=A_sp.nnz, s_r=s_r, s_c=s_c)


def _proxy_modes(cfg):
    return {"on": (True,), "off": (False,), "both": (True, False)}[cfg.proxy]


def run_compress(cfg: ExperimentConfig) -> ExperimentResult:
    """Compression runtime and sparsified nonzeros versus N (one table per proxy mode)."""
    res = ExperimentResult()
    spec = cfg.kernel_spec()
    for use_proxy in _proxy_modes(cfg):
        table = f"{cfg.stem}_{'proxy' if use_proxy else 'noproxy'}"
        for n in _sizes(cfg):
            try:
                res.add(table, _sparsify_row(cfg, spec, n, use_proxy, res))
            except (HBSError, np.linalg.LinAlgError) as exc:
                res.fail(table, n, f"N={n}: FAILED {type(exc).__name__}: {exc}")
    return res


def run_3d(cfg: ExperimentConfig) -> ExperimentResult:
    """Sparsified nonzeros versus N on the sphere."""
    if cfg.geometry not in ("sphere", "file"):
        raise ConfigError("exp3d needs sphere geometry")
    return run_compress(cfg)


def run_solve(cfg: ExperimentConfig) -> ExperimentResult:
    """Dense direct solve against the extended sparse solve, one table per ``t``."""
    res = ExperimentResult()
    spec = cfg.kernel_spec()
    use_proxy = cfg.proxy != "off"
    for n in _sizes(cfg):
        if n > DENSE_REFERENCE_LIMIT:
            raise ConfigError(f"solve needs N <= {DENSE_REFERENCE_LIMIT}")
        cloud, w = _geometry(cfg, n)
        b = point_source_rhs(spec, cloud)
        try:
            km, _, factors, stats, secs = _compress(cfg, spec, cloud, w, use_proxy)
            A = km.dense()
            x_ref = np.linalg.solve(A, b)
            kappa_a = float(np.linalg.cond(A)) if cfg.cond else 0.0
        except (HBSError, np.linalg.LinAlgError) as exc:
            for t in cfg.t_list:
                res.fail(f"{cfg.stem}_t{t:g}", n, f"N={n}: FAILED compression or dense reference {type(exc).__name__}: {exc}")
            continue
        _flag_saturation(res, n, stats)
        for t in cfg.t_list:
            table = f"{cfg.stem}_t{t:g}"
            t0 = time.perf_counter()
            try:
                A_sp = assemble_extended(factors, t)
                sol = solve_extended(A_sp, b)
                secs_t = secs + time.perf_counter() - t0
                ratio = cond2_estimate(A_sp) / kappa_a if cfg.cond else 0.0
            except (HBSError, np.linalg.LinAlgError) as exc:
                res.fail(table, n, f"N={n} t={t:g}: FAILED {type(exc).__name__}: {exc}")
                continue
            s_r, s_c, _ = sparsity_profile(A_sp)
            resid = float(np.linalg.norm(sol.x - x_ref) / np.linalg.norm(x_ref))
            res.add(table, ResultRow(N=n, runtime_s=secs_t, nnz=A_sp.nnz, s_r=s_r, s_c=s_c,
                                     cond_ratio=ratio, solve_residual=resid,
                                     success_prob=sol.success_prob))
            res.note(f"N={n} t={t:g}: residual={resid:.3e} success_prob={sol.success_prob:.6f}")
            if cfg.alpha is not None:
                xt, bound = tikhonov_solve(A_sp, b, cfg.alpha)
                rt = float(np.linalg.norm(A_sp @ xt - np.concatenate(
                    [b, np.zeros(A_sp.n_rows - n)])) / np.linalg.norm(b))
                res.note(f"N={n} t={t:g}: tikhonov alpha={cfg.alpha:.3e} residual={rt:.3e} cond_bound={bound:.3e}")
    return res


def run_encode(cfg: ExperimentConfig) -> ExperimentResult:
    """Subnormalisation of the recursive encoding versus N, one table per exponent ``p``."""
    res = ExperimentResult()
    use_proxy = cfg.proxy != "off"
    for p in cfg.p_list:
        spec = cfg.kernel_spec(p)
        table = f"{cfg.stem}_p{p:g}"
        for n in _sizes(cfg):
            cloud, w = _geometry(cfg, n)
            try:
                _, _, factors, stats, secs = _compress(cfg, spec, cloud, w, use_proxy)
                t0 = time.perf_counter()
                eps = cfg.per_factor_eps or None
                desc = recursive_encode(factors, eps, seed=cfg.seed)
                secs += time.perf_counter() - t0
                err = extraction_error(reconstruct(factors), desc) if desc.payload is not None else 0.0
                A_sp = assemble_extended(factors, 1.0)
                s_r, s_c, _ = sparsity_profile(A_sp)
            except (HBSError, np.linalg.LinAlgError) as exc:
                res.fail(table, n, f"N={n} p={p:g}: FAILED {type(exc).__name__}: {exc}")
                continue
            _flag_saturation(res, n, stats)
            res.add(table, ResultRow(N=n, runtime_s=secs, nnz=stats.nnz_total, s_r=s_r, s_c=s_c,
                                     alpha_A=desc.alpha, solve_residual=err))
            res.note(f"N={n} p={p:g}: depth={factors.depth} max_rank={stats.max_rank} alpha_A={desc.alpha:.6e} "
                     f"eps_A={desc.eps:.3e} eps_recursion={desc.eps_recursion:.3e} ancillas={desc.ancillas}"
                     + (f" extraction_error={err:.3e}" if desc.payload is not None else ""))
    return res


_RUNNERS = {"compress": run_compress, "solve": run_solve, "encode": run_encode, "exp3d": run_3d}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return _RUNNERS[cfg.experiment](cfg)
