"""Monte-Carlo harness: configs, sharding, seeded replications and CSV output."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from dpca import coordinator, datagen
from dpca.errors import ConfigError, DataError, DPCAError, NumericError
from dpca.linalg import thin_orthonormalize
from dpca.machine import MODES, local_summary
from dpca.metrics import MetricsRecord, alignments, ar, rho

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

METHODS = ("debiased", "fan")
# Spawn-key slot for held-out data; machine ids never reach it.
TEST_STREAM = 2**32 - 1


@dataclass(frozen=True)
class Layout:
    """How samples are spread over machines.

    ``fixed_local``: one machine per entry of ``sizes``.
    ``groups``: ``m`` machines split evenly over the entries of ``sizes``
    (``sizes=(2400, 2700, 3000)`` gives the thirds layout).
    ``fixed_total``: ``N`` samples split evenly over ``m`` machines.
    """

    kind: str
    sizes: tuple = ()
    m: int | None = None
    N: int | None = None

    def local_sizes(self) -> list[int]:
        if self.kind == "fixed_local":
            if not self.sizes:
                raise ConfigError("fixed_local layout needs a nonempty sizes list")
            return [int(n) for n in self.sizes]
        if self.kind == "groups":
            g = len(self.sizes)
            if not g or not self.m or self.m % g:
                raise ConfigError(f"groups layout needs m divisible by {g or 'len(sizes)'}, got m={self.m}")
            return [int(n) for n in self.sizes for _ in range(self.m // g)]
        if self.kind == "fixed_total":
            if self.N is None or self.m is None:
                raise ConfigError("fixed_total layout needs N and m")
            return partition(self.N, self.m)
        raise ConfigError(f"unknown layout kind {self.kind!r}")

    @classmethod
    def parse(cls, raw) -> Layout:
        if isinstance(raw, Layout):
            return raw
        if isinstance(raw, (list, tuple)):
            return cls("fixed_local", tuple(int(n) for n in raw))
        if not isinstance(raw, dict) or "kind" not in raw:
            raise ConfigError(f"layout must be a list of sizes or a table with 'kind': {raw!r}")
        unknown = set(raw) - {"kind", "sizes", "m", "N"}
        if unknown:
            raise ConfigError(f"unknown layout keys {sorted(unknown)}")
        return cls(
            kind=raw["kind"],
            sizes=tuple(int(n) for n in raw.get("sizes", ())),
            m=None if raw.get("m") is None else int(raw["m"]),
            N=None if raw.get("N") is None else int(raw["N"]),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    p: int
    layout: Layout
    mode: str = "covariance"
    dist: str = "gaussian"
    K: int = 2
    t: float = 0.1
    methods: tuple = METHODS
    reps: int = 1
    seed: int = 0
    emit_alignment: bool = False
    emit_ar: bool = False
    n_test: int = 1000
    center: bool = False
    fail_fast: bool = False
    timing: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dist not in datagen.DISTRIBUTIONS:
            raise ConfigError(f"dist must be one of {datagen.DISTRIBUTIONS}, got {self.dist!r}")
        bad = [x for x in self.methods if x not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"methods must be a nonempty subset of {METHODS}, got {list(self.methods)}")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if not self.t > 0:
            raise ConfigError("threshold t must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not (self.model in ("sparse", "mixed") or self.model.startswith("file:")):
            raise ConfigError(f"unknown model {self.model!r}")
        object.__setattr__(self, "layout", Layout.parse(self.layout))
        self.layout.local_sizes()

    @property
    def m(self) -> int:
        return len(self.layout.local_sizes())

    @property
    def N(self) -> int:
        return sum(self.layout.local_sizes())

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        raw = dict(raw)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "layout" not in raw:
            raise ConfigError("config needs a layout")
        raw["layout"] = Layout.parse(raw["layout"])
        if "methods" in raw:
            raw["methods"] = tuple(raw["methods"])
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = list(self.methods)
        out["layout"] = {k: (list(v) if isinstance(v, tuple) else v)
                         for k, v in asdict(self.layout).items() if v not in (None, ())}
        return out


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


def partition(N: int, m: int) -> list[int]:
    """Split ``N`` samples over ``m`` machines; the first ``N mod m`` get one extra."""
    if not 1 <= m <= N:
        raise ConfigError(f"cannot split N={N} samples over m={m} machines")
    q, r = divmod(N, m)
    return [q + 1 if i < r else q for i in range(m)]


def machine_seed(seed: int, rep: int, machine: int) -> np.random.SeedSequence:
    """Independent stream for one machine in one replication."""
    return np.random.SeedSequence(seed, spawn_key=(rep, machine))


@dataclass
class RunResult:
    records: list
    config: ExperimentConfig
    stage_seconds: dict = field(default_factory=dict)

    def to_csv(self, timing: bool | None = None, header: bool = True) -> str:
        c = self.config
        return records_to_csv(self.records, K=c.K, mode=c.mode, model=c.model, p=c.p, m=c.m, N=c.N,
                              t=c.t, timing=c.timing if timing is None else timing, header=header)

    def mean(self, method: str, metric: str = "rho") -> float:
        vals = [getattr(r, metric) for r in self.records if r.method == method and getattr(r, metric) is not None]
        return float(np.mean(vals)) if vals else math.nan


def build_models(cfg: ExperimentConfig) -> tuple[datagen.SpikedModel, datagen.SpikedModel]:
    """Data-generating covariance model and the truth the estimate is scored against."""
    if cfg.model.startswith("file:"):
        sigma = load_matrix(cfg.model[5:])
        if sigma.shape[0] != cfg.p:
            raise ConfigError(f"matrix in {cfg.model} is {sigma.shape[0]}-dimensional, config says p={cfg.p}")
        model = datagen.from_matrix(sigma, cfg.K, name=cfg.model)
    else:
        model = datagen.build_model(cfg.model, cfg.p)
        if cfg.K != model.K:
            raise ConfigError(f"model {cfg.model!r} has K={model.K} spikes, config says K={cfg.K}")
    truth = datagen.to_correlation(model) if cfg.mode == "correlation" else model
    model.root()
    return model, truth


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    try:
        if path.suffix == ".npy":
            a = np.load(path)
        else:
            a = np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load matrix from {path}: {exc}") from exc
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"{path} does not hold a square matrix")
    return a


def _error_code(exc: BaseException) -> str:
    if isinstance(exc, NumericError) or isinstance(exc, np.linalg.LinAlgError):
        return "numeric"
    if isinstance(exc, DataError):
        return "data"
    if isinstance(exc, ConfigError):
        return "config"
    return type(exc).__name__


def run_method(method: str, summaries) -> coordinator.GlobalEstimate:
    if method == "debiased":
        return coordinator.estimate(summaries)
    if method == "fan":
        return coordinator.fan_baseline(summaries)
    raise ConfigError(f"unknown method {method!r}")


def score(est: coordinator.GlobalEstimate, truth, cfg: ExperimentConfig, y=None) -> dict:
    out = {"rho": rho(est.vectors, truth), "clamp_count": est.clamps, "fallback": est.fallback}
    if cfg.emit_alignment:
        out["alignments"] = alignments(est.vectors, truth)
    if y is not None:
        out["ar"] = ar(thin_orthonormalize(est.vectors), y)
    return out


def run_replication(cfg: ExperimentConfig, model, truth, rep: int) -> tuple[list, dict]:
    """One replication: shard, summarize, estimate with each method, score."""
    stages = {"local": 0.0, "coordinator": 0.0}
    try:
        t0 = time.perf_counter()
        summaries = []
        for ell, n in enumerate(cfg.layout.local_sizes()):
            x = datagen.sample(model, n, cfg.dist, machine_seed(cfg.seed, rep, ell))
            summaries.append(local_summary(x, cfg.K, cfg.t, cfg.mode, ell, center=cfg.center))
            del x
        y = None
        if cfg.emit_ar:
            y = datagen.sample(model, cfg.n_test, cfg.dist, machine_seed(cfg.seed, rep, TEST_STREAM))
        stages["local"] = time.perf_counter() - t0
    except Exception as exc:
        if cfg.fail_fast:
            raise
        code = _error_code(exc)
        log.warning("replication %d failed in local stage: %s", rep, exc)
        return [MetricsRecord(rep, meth, error=code) for meth in cfg.methods], stages
    records = []
    for meth in cfg.methods:
        t1 = time.perf_counter()
        try:
            est = run_method(meth, summaries)
            rec = MetricsRecord(rep, meth, **score(est, truth.true_vectors, cfg, y))
        except Exception as exc:
            if cfg.fail_fast:
                raise
            log.warning("replication %d, method %s failed: %s", rep, meth, exc)
            rec = MetricsRecord(rep, meth, error=_error_code(exc))
        rec.seconds = time.perf_counter() - t1
        stages["coordinator"] += rec.seconds
        records.append(rec)
    return records, stages


_WORKER: dict = {}


def _init_worker(cfg, model, truth):
    _WORKER.update(cfg=cfg, model=model, truth=truth)


def _worker_rep(rep: int):
    return run_replication(_WORKER["cfg"], _WORKER["model"], _WORKER["truth"], rep)


def run_experiment(cfg: ExperimentConfig, threads: int = 1, models=None) -> RunResult:
    """Run all replications of ``cfg``; records come back sorted by (rep, method)."""
    t0 = time.perf_counter()
    model, truth = models if models is not None else build_models(cfg)
    setup = time.perf_counter() - t0
    reps = range(cfg.reps)
    if threads > 1 and cfg.reps > 1:
        with ProcessPoolExecutor(threads, initializer=_init_worker, initargs=(cfg, model, truth)) as pool:
            results = list(pool.map(_worker_rep, reps))
    else:
        results = [run_replication(cfg, model, truth, r) for r in reps]
    order = {meth: i for i, meth in enumerate(METHODS)}
    records = sorted((rec for recs, _ in results for rec in recs),
                     key=lambda rec: (rec.replication, order[rec.method]))
    stages = {"setup": setup}
    for _, st in results:
        for k, v in st.items():
            stages[k] = stages.get(k, 0.0) + v
    return RunResult(records, cfg, stages)


def csv_header(K: int) -> list[str]:
    return (["rep", "method", "mode", "model", "p", "m", "N", "t", "rho", "ar"]
            + [f"align_{i + 1}" for i in range(K)]
            + ["clamps", "fallback", "seconds", "error"])


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    return str(x)


def records_to_csv(records, *, K: int, mode: str, model: str, p: int, m: int, N: int, t: float,
                   timing: bool = False, header: bool = True) -> str:
    """Serialize records in the fixed column order.

    ``seconds`` stays empty unless ``timing`` is set, so identical configs
    give identical bytes.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(csv_header(K))
    for r in records:
        ok = r.error is None
        al = list(r.alignments) if r.alignments is not None else [None] * K
        row = [r.replication, r.method, mode, model, p, m, N, t, r.rho, r.ar, *al,
               r.clamp_count if ok else None, r.fallback if ok else None,
               r.seconds if timing else None, r.error]
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def with_override(cfg: ExperimentConfig, key: str, value: str) -> ExperimentConfig:
    """Copy of ``cfg`` with one sweep parameter replaced."""
    if key == "m":
        if cfg.layout.kind == "fixed_local":
            raise ConfigError("cannot vary m for an explicit fixed_local size list")
        return replace(cfg, layout=replace(cfg.layout, m=int(value)))
    if key == "N":
        if cfg.layout.kind != "fixed_total":
            raise ConfigError("N can only be varied for a fixed_total layout")
        return replace(cfg, layout=replace(cfg.layout, N=int(value)))
    if key in ("p", "reps", "K"):
        return replace(cfg, **{key: int(value)})
    if key == "t":
        return replace(cfg, t=float(value))
    if key in ("mode", "dist", "model"):
        return replace(cfg, **{key: value})
    raise ConfigError(f"cannot vary {key!r}; expected one of m, N, p, t, K, reps, mode, dist, model")


def parse_vary(spec: str) -> tuple[str, list[str]]:
    if "=" not in spec:
        raise ConfigError(f"--vary expects key=v1,v2,... got {spec!r}")
    key, values = spec.split("=", 1)
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if not vals:
        raise ConfigError(f"--vary {key} has no values")
    return key.strip(), vals


# ---------------------------------------------------------------------------
# Real data


def _select_columns(header: list[str], features) -> list[int]:
    """Column indices for ``"all"``, a ``"first..last"`` range, or a list of names/indices."""
    if features is None or features == "all":
        return list(range(len(header)))
    if isinstance(features, str):
        if ".." in features and "," not in features:
            lo, hi = features.split("..", 1)
            if lo not in header or hi not in header:
                raise DataError(f"feature range {features!r} names unknown columns")
            idx = list(range(header.index(lo), header.index(hi) + 1))
            if not idx:
                raise DataError(f"feature range {features!r} is empty")
            return idx
        features = [f for f in features.split(",") if f]
    idx = []
    for f in features:
        if f in header:
            idx.append(header.index(f))
        elif str(f).isdigit() and int(f) < len(header):
            idx.append(int(f))
        else:
            raise DataError(f"unknown feature column {f!r}")
    if not idx:
        raise DataError("empty feature selection")
    return idx


def read_numeric_csv(path, features=None) -> tuple[list[str], np.ndarray]:
    """Rows of the selected columns as an (rows x features) array."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        cols = _select_columns(header, features)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[c]) for c in cols])
            except (ValueError, IndexError):
                bad = next((c for c in cols if c >= len(row) or not _is_float(row[c])), cols[0])
                raise DataError(f"{path}:{lineno}: non-numeric value in column {header[bad]!r}") from None
    if len(rows) < 2:
        raise DataError(f"{path} needs at least 2 data rows")
    data = np.asarray(rows)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path} contains non-finite values")
    return [header[c] for c in cols], data


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def ingest_csv(path, feature_columns=None, split_fraction: float = 0.7, seed: int = 0,
               machines: int = 1, standardize: bool = True):
    """Shuffle, split into train/test and shard the train rows round-robin.

    Returns ``(shards, test)`` with every block laid out p x n. With
    ``standardize`` each feature is centered and scaled using train-split
    statistics only.
    """
    if not 0 < split_fraction < 1:
        raise ConfigError(f"split fraction must lie in (0, 1), got {split_fraction}")
    _, data = read_numeric_csv(path, feature_columns)
    return split_rows(data, split_fraction, seed, machines, standardize)


def split_rows(data: np.ndarray, split_fraction: float, seed, machines: int, standardize: bool):
    rows = data.shape[0]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(rows)
    n_train = int(round(split_fraction * rows))
    if not 1 <= n_train < rows:
        raise DataError(f"split of {rows} rows leaves an empty side")
    train, test = data[perm[:n_train]], data[perm[n_train:]]
    if standardize:
        mu = train.mean(axis=0)
        sd = train.std(axis=0)
        sd[sd == 0] = 1.0
        train = (train - mu) / sd
        test = (test - mu) / sd
    if not 1 <= machines <= n_train:
        raise ConfigError(f"cannot shard {n_train} training rows over {machines} machines")
    shards = [np.ascontiguousarray(train[i::machines].T) for i in range(machines)]
    return shards, np.ascontiguousarray(test.T)


def run_ingest(data: np.ndarray, K: int, t: float, machines: int, reps: int = 1, seed: int = 0,
               split_fraction: float = 0.7, standardize: bool = True, center: bool = False,
               methods=METHODS, fail_fast: bool = False) -> list:
    """AR of each method on held-out rows, one record per (replication, method)."""
    records = []
    for rep in range(reps):
        shards, test = split_rows(data, split_fraction, machine_seed(seed, rep, TEST_STREAM),
                                  machines, standardize)
        try:
            summaries = [local_summary(x, K, t, "covariance", ell, center=center)
                         for ell, x in enumerate(shards)]
        except DPCAError as exc:
            if fail_fast:
                raise
            records.extend(MetricsRecord(rep, meth, error=_error_code(exc)) for meth in methods)
            continue
        for meth in methods:
            t1 = time.perf_counter()
            try:
                est = run_method(meth, summaries)
                rec = MetricsRecord(rep, meth, ar=ar(thin_orthonormalize(est.vectors), test),
                                    clamp_count=est.clamps, fallback=est.fallback)
            except DPCAError as exc:
                if fail_fast:
                    raise
                rec = MetricsRecord(rep, meth, error=_error_code(exc))
            rec.seconds = time.perf_counter() - t1
            records.append(rec)
    return records
