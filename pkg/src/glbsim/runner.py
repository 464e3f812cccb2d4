"""Experiment orchestration: configs, single runs, sweeps, CSV output."""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import DisLinUCB, NUcbGlm, OneUcbGlm
from .env import SyntheticEnv, load_dataset
from .errors import ConfigError, GlbSimError, RunAbort
from .fedglb import (
    INF,
    FedGlbUcb,
    FedGlbVariant1,
    FedGlbVariant2,
    FedGlbVariant3,
    NOnsGlm,
)
from .glm import LINKS, GlmFamily

ALGORITHMS = {
    "fedglb-ucb": FedGlbUcb,
    "fedglb-ucb-v1": FedGlbVariant1,
    "fedglb-ucb-v2": FedGlbVariant2,
    "fedglb-ucb-v3": FedGlbVariant3,
    "n-ons-glm": NOnsGlm,
    "n-ucb-glm": NUcbGlm,
    "one-ucb-glm": OneUcbGlm,
    "dislinucb": DisLinUCB,
}
TRIGGERED = {"fedglb-ucb", "dislinucb"}
SCHEDULED = {"fedglb-ucb-v1", "fedglb-ucb-v2", "fedglb-ucb-v3"}

SERIES_HEADER = "t,cum_regret,cum_reward,comm_events,comm_scalars,sync_count"
SCATTER_HEADER = "algo,param,value,seed,final_regret,final_comm_events,final_comm_scalars"


@dataclass
class RunConfig:
    algorithm: str = "fedglb-ucb"
    T: int = 1000
    N: int = 20
    d: int = 10
    K: int = 25
    S_radius: float = 1.0
    lam: float = 1.0
    delta: float = 0.1
    D: float | None = None
    B: int | None = None
    alpha_mode: str = "practical"
    alpha_scale: float = 0.25
    eps_rule: str = "inv_n2t2"
    J_max: int = 5000
    link: str = "logistic"
    noise_bound: float = 1.0
    dataset: str = ""
    seed: int = 0

    def validate(self) -> "RunConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm: unknown {self.algorithm!r}; choose from {sorted(ALGORITHMS)}")
        for name in ("T", "N", "d", "K", "J_max"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        for name in ("S_radius", "lam"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be positive")
        if not 0 < self.delta < 1:
            raise ConfigError("delta: must lie in (0, 1)")
        if self.alpha_mode not in ("practical", "theoretical"):
            raise ConfigError("alpha_mode: must be 'practical' or 'theoretical'")
        if not self.alpha_scale >= 0:
            raise ConfigError("alpha_scale: must be >= 0")
        if self.link not in LINKS:
            raise ConfigError(f"link: must be one of {LINKS}")
        if self.seed < 0:
            raise ConfigError("seed: must be >= 0")
        if self.eps_rule != "inv_n2t2":
            try:
                ok = float(self.eps_rule) > 0
            except ValueError:
                ok = False
            if not ok:
                raise ConfigError("eps_rule: 'inv_n2t2' or a positive number")
        if self.D is not None and not self.D >= 0:
            raise ConfigError("D: must be >= 0")
        if self.B is not None and self.B < 1:
            raise ConfigError("B: must be >= 1")
        if self.algorithm in TRIGGERED:
            if self.D is None:
                raise ConfigError(f"D: required by {self.algorithm}")
            if self.B is not None:
                raise ConfigError(f"B: not used by {self.algorithm}; set D only")
        elif self.algorithm in SCHEDULED:
            if self.B is None:
                raise ConfigError(f"B: required by {self.algorithm}")
            if self.D is not None:
                raise ConfigError(f"D: not used by {self.algorithm}; set B only")
        return self

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def coerce(key: str, raw: str):
    """Parse a config value for field ``key``."""
    if key not in FIELD_TYPES:
        raise ConfigError(f"{key}: unknown config key")
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "int | None":
            return None if raw.lower() in ("", "none") else int(raw)
        if kind == "float | None":
            if raw.lower() in ("", "none"):
                return None
            return INF if raw.lower() in ("inf", "infinity") else float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        out[key] = coerce(key, val)
    return out


def load_config(path=None, overrides=()) -> RunConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse_config_text(text, str(path)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, val = item.split("=", 1)
        values[key.strip()] = coerce(key.strip(), val)
    return RunConfig(**values).validate()


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_fmt_value(v)}\n" for k, v in cfg.to_dict().items())


def _fmt_value(v):
    if v is None:
        return "none"
    if isinstance(v, float):
        return "inf" if v == INF else format(v, ".12g")
    return str(v)


# ---------------------------------------------------------------- runs


@dataclass
class RunResult:
    config: RunConfig
    series: np.ndarray  # (T, 6) columns per SERIES_HEADER
    choices: np.ndarray  # (T, N) arm indices
    sync_points: list
    diagnostics: dict
    ledger: dict
    arm_checksum: str
    extra: dict = field(default_factory=dict)

    @property
    def final(self) -> dict:
        last = self.series[-1]
        return {
            "final_regret": float(last[1]),
            "final_reward": float(last[2]),
            "final_comm_events": int(last[3]),
            "final_comm_scalars": int(last[4]),
            "sync_count": int(last[5]),
        }


def make_env(cfg: RunConfig, fam: GlmFamily):
    if cfg.dataset:
        env = load_dataset(cfg.dataset, seed=cfg.seed)
        if env.dim != cfg.d:
            raise ConfigError(f"d: dataset arms have dimension {env.dim}, config says {cfg.d}")
        return env
    return SyntheticEnv(fam, cfg.d, cfg.K, cfg.seed)


def make_learner(cfg: RunConfig, fam: GlmFamily, **extra):
    cls = ALGORITHMS[cfg.algorithm]
    kw = dict(
        lam=cfg.lam,
        delta=cfg.delta,
        alpha_mode=cfg.alpha_mode,
        alpha_scale=cfg.alpha_scale,
        eps_rule=cfg.eps_rule,
        J_max=cfg.J_max,
    )
    if cfg.algorithm in TRIGGERED:
        kw["D"] = cfg.D
    if cfg.algorithm in SCHEDULED and "schedule" not in extra and "sync_points" not in extra:
        kw["B"] = cfg.B
    if cfg.algorithm in ("n-ucb-glm", "one-ucb-glm", "dislinucb"):
        for k in ("alpha_mode", "eps_rule", "J_max"):
            kw.pop(k)
    kw.update(extra)
    return cls(fam, cfg.N, cfg.d, cfg.T, **kw)


def run_single(cfg: RunConfig, learner=None, **learner_extra) -> RunResult:
    """Run T rounds of N clients in index order.

    ``learner_extra`` reaches the learner constructor (e.g. ``sync_points``
    for replaying a triggered run with the scheduled variant).
    """
    cfg.validate()
    fam = GlmFamily.make(cfg.link, cfg.S_radius, cfg.noise_bound)
    env = make_env(cfg, fam)
    if learner is None:
        learner = make_learner(cfg, fam, **learner_extra)
    T, N = cfg.T, cfg.N
    series = np.zeros((T, 6))
    choices = np.zeros((T, N), dtype=np.int64)
    digest = hashlib.sha256()
    regret = reward = 0.0
    t = i = None
    try:
        for t in range(1, T + 1):
            for i in range(N):
                obs = env.sample_arm_set(t, i)
                digest.update(obs.arms.tobytes())
                idx = learner.act(t, i, obs)
                y = env.reward(obs, idx)
                learner.observe(t, i, obs, idx, y)
                regret += env.regret(obs, idx)
                reward += y
                choices[t - 1, i] = idx
            i = None
            learner.end_round(t)
            led = learner.ledger
            series[t - 1] = (t, regret, reward, led.events, led.scalars, learner.sync_count)
    except RunAbort:
        raise
    except GlbSimError as exc:
        raise RunAbort(f"{type(exc).__name__}: {exc}", t, i) from exc
    extra = {}
    if hasattr(learner, "j_log"):
        extra["agd_iterations"] = list(learner.j_log)
    if hasattr(env, "checksum"):
        extra["dataset_checksum"] = env.checksum
    return RunResult(
        cfg,
        series,
        choices,
        list(learner.sync_points),
        learner.diag.as_dict(),
        learner.ledger.summary(),
        digest.hexdigest(),
        extra,
    )


# ---------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return format(v, ".12g")


def series_csv(result: RunResult) -> str:
    buf = io.StringIO()
    buf.write(SERIES_HEADER + "\n")
    for row in result.series:
        buf.write(",".join(_fmt(v) if k else str(int(v)) for k, v in enumerate(row)) + "\n")
    return buf.getvalue()


def scatter_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(SCATTER_HEADER + "\n")
    for r in rows:
        buf.write(
            ",".join(
                [
                    r["algo"],
                    r["param"],
                    _fmt(r["value"]),
                    str(r["seed"]),
                    _fmt(r["final_regret"]),
                    _fmt(r["final_comm_events"]),
                    _fmt(r["final_comm_scalars"]),
                ]
            )
            + "\n"
        )
    return buf.getvalue()


def parse_csv(text: str):
    lines = text.rstrip("\n").split("\n")
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def run_id(cfg: RunConfig) -> str:
    blob = format_config(cfg).encode()
    return f"{cfg.algorithm}_s{cfg.seed}_{hashlib.sha256(blob).hexdigest()[:10]}"


def manifest_for(result: RunResult) -> dict:
    return {
        "library_version": __version__,
        "config": {k: _fmt_value(v) for k, v in result.config.to_dict().items()},
        "final": result.final,
        "ledger": result.ledger,
        "iteration_events": result.ledger["iteration_events"],
        "diagnostics": result.diagnostics,
        "arm_checksum": result.arm_checksum,
        "sync_points": result.sync_points,
        **result.extra,
    }


def write_results(result: RunResult, out_dir) -> list:
    out = Path(out_dir)
    rid = run_id(result.config)
    p1 = atomic_write(out / f"series_{rid}.csv", series_csv(result))
    p2 = atomic_write(out / f"manifest_{rid}.json", json.dumps(manifest_for(result), indent=2, sort_keys=True) + "\n")
    return [p1, p2]


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepSpec:
    base: RunConfig
    param: str
    values: list
    seeds: list

    def validate(self) -> "SweepSpec":
        if self.param not in ("D", "B"):
            raise ConfigError("param: sweeps run over D or B")
        if not self.values:
            raise ConfigError("values: empty sweep grid")
        if len(set(self.values)) != len(self.values):
            raise ConfigError("values: duplicates in sweep grid")
        if any(not v > 0 for v in self.values):
            raise ConfigError("values: must be positive")
        if not self.seeds:
            raise ConfigError("seeds: empty seed list")
        for cfg in self.cells():
            cfg.validate()
        return self

    def cells(self):
        for v in self.values:
            val = int(v) if self.param == "B" else float(v)
            for s in self.seeds:
                yield self.base.replace(**{self.param: val, "seed": int(s)})


def _run_cell(cfg: RunConfig):
    try:
        res = run_single(cfg)
    except (GlbSimError, ArithmeticError, ValueError) as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}
    return res.final


def run_sweep(spec: SweepSpec, workers: int = 1):
    """Run every (value, seed) cell; returns (rows, failures).

    Rows hold one line per cell followed by one seed-mean line per value
    (``seed`` = ``mean``). Results are merged in (value, seed) order, so the
    output does not depend on ``workers``.
    """
    spec.validate()
    cells = list(spec.cells())
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_run_cell, cells))
    else:
        outs = [_run_cell(c) for c in cells]
    rows, failures = [], []
    by_value = {}
    for cfg, out in zip(cells, outs):
        val = getattr(cfg, spec.param)
        if "error" in out:
            failures.append({"value": val, "seed": cfg.seed, "error": out["error"]})
            continue
        row = {
            "algo": cfg.algorithm,
            "param": spec.param,
            "value": val,
            "seed": cfg.seed,
            "final_regret": out["final_regret"],
            "final_comm_events": out["final_comm_events"],
            "final_comm_scalars": out["final_comm_scalars"],
        }
        rows.append(row)
        by_value.setdefault(val, []).append(row)
    for val in sorted(by_value, key=lambda v: spec.values.index(v) if v in spec.values else 0):
        grp = by_value[val]
        rows.append(
            {
                "algo": grp[0]["algo"],
                "param": spec.param,
                "value": val,
                "seed": "mean",
                "final_regret": float(np.mean([r["final_regret"] for r in grp])),
                "final_comm_events": float(np.mean([r["final_comm_events"] for r in grp])),
                "final_comm_scalars": float(np.mean([r["final_comm_scalars"] for r in grp])),
            }
        )
    return rows, failures


def sweep_id(spec: SweepSpec) -> str:
    blob = (format_config(spec.base) + repr(spec.param) + repr(spec.values) + repr(spec.seeds)).encode()
    return f"{spec.base.algorithm}_{spec.param}_{hashlib.sha256(blob).hexdigest()[:10]}"


def write_sweep(spec: SweepSpec, rows, failures, out_dir) -> list:
    out = Path(out_dir)
    sid = sweep_id(spec)
    p1 = atomic_write(out / f"scatter_{sid}.csv", scatter_csv(rows))
    manifest = {
        "library_version": __version__,
        "config": {k: _fmt_value(v) for k, v in spec.base.to_dict().items()},
        "param": spec.param,
        "values": [_fmt_value(float(v)) for v in spec.values],
        "seeds": list(spec.seeds),
        "failures": failures,
    }
    p2 = atomic_write(out / f"manifest_{sid}.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return [p1, p2]


def logspace(a: float, b: float, n: int) -> list:
    if n < 1:
        raise ConfigError("logspace: need at least one point")
    return [float(v) for v in np.logspace(a, b, n)]


def default_D(T: int, N: int, d: int) -> float:
    """T / (N d log(N T))."""
    return T / (N * d * math.log(N * T))
