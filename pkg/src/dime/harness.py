"""Train-merge-evaluate loop, ablation ladder, sensitivity sweeps, result files."""
from __future__ import annotations

import dataclasses
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .adapter_model import AdapterParams, BackboneSpec, ClassifierHead, ModelState, predict
from .balanced_train import TrainConfig, format_trace, train_task
from .metrics import MetricsReport, StepRecord, format_metrics_csv, step_accuracy
from .spectral_merge import MergeConfig, average_adapters, merge_adapter
from .stream_gen import StreamProtocol, StreamSeeds, build_stream

log = logging.getLogger(__name__)

VARIANTS = ("base", "sm", "sm_ccw", "sm_ccw_rtm", "full")
SWEEP_PARAMS = ("head_ratio", "gamma_head", "gamma_tail", "rho")


@dataclass(frozen=True)
class RunConfig:
    # stream
    total_classes: int = 40
    num_steps: int = 10
    rho: float = 0.01
    class_rho: float = 0.01
    n_max: int = 100
    noise_scale: float = 1.0
    separation: float = 3.0
    # model
    input_dim: int = 24
    feature_dim: int = 48
    adapter_dim: int = 16
    scale: float = 1.0
    # training
    learning_rate: float = 0.07
    epochs: int = 20
    batch_size: int = 16
    weight_decay: float = 5e-4
    # merging
    head_ratio: float = 0.3
    gamma_head: float = 0.2
    gamma_tail: float = 0.9
    variant: str = "full"
    output_dir: str = "runs"
    seed_list: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.seed_list:
            raise ValueError("seed_list must not be empty")
        if self.total_classes < self.num_steps:
            raise ValueError("total_classes must be at least num_steps")
        if not self.adapter_dim < self.feature_dim:
            raise ValueError("adapter_dim must be smaller than feature_dim")
        # validate the merge hyperparameters eagerly
        MergeConfig(0, 1, self.head_ratio, self.gamma_head, self.gamma_tail)

    def with_updates(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.epochs, self.batch_size, self.weight_decay,
                           use_balanced_softmax=self.variant == "full", seed=seed)

    def merge_config(self, c_old: int, c_new: int) -> MergeConfig | None:
        """Merge settings for this variant; ``None`` means direct averaging."""
        if self.variant == "base":
            return None
        if self.variant == "sm":
            return MergeConfig(1, 1, 1.0, 1.0, 1.0)
        if self.variant == "sm_ccw":
            return MergeConfig(c_old, c_new, 1.0, 1.0, 1.0)
        return MergeConfig(c_old, c_new, self.head_ratio, self.gamma_head, self.gamma_tail)

    # -- plain-text key=value form --------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "seed_list":
                v = ",".join(map(str, v))
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_pairs(cls, pairs: dict[str, str], base: "RunConfig | None" = None) -> "RunConfig":
        base = base or cls()
        kinds = {f.name: type(getattr(base, f.name)) for f in dataclasses.fields(cls)}
        updates = {}
        for key, raw in pairs.items():
            if key not in kinds:
                raise ValueError(f"unknown config key {key!r}")
            updates[key] = _coerce(key, raw, kinds[key])
        return dataclasses.replace(base, **updates)

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        return cls.from_pairs(parse_key_values(text.splitlines()), base)


def _coerce(key: str, raw: str, kind: type):
    raw = raw.strip()
    try:
        if kind is tuple:
            return parse_seed_list(raw)
        if kind is bool:
            return raw.lower() in ("1", "true", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ValueError(f"bad value for {key}: {raw!r}") from None


def parse_seed_list(raw: str) -> tuple[int, ...]:
    seeds = tuple(int(s) for s in raw.replace(" ", "").split(",") if s)
    if not seeds:
        raise ValueError("empty seed list")
    return seeds


def parse_key_values(lines) -> dict[str, str]:
    pairs = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


@dataclass
class SeedRun:
    seed: int
    report: MetricsReport
    protocol: StreamProtocol
    trace: list
    duration: float
    adapter_counts: list[int]


@dataclass
class RunResult:
    config: RunConfig
    runs: list[SeedRun] = field(default_factory=list)

    @property
    def reports(self) -> list[MetricsReport]:
        return [r.report for r in self.runs]

    def aggregate(self) -> dict[str, tuple[float, float]]:
        """Mean and sample standard deviation of A_T, Abar, wAbar over seeds."""
        out = {}
        for key, attr in (("A_T", "a_final"), ("Abar", "a_bar"), ("wAbar", "wa_bar")):
            vals = np.array([getattr(r, attr) for r in self.reports])
            std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            out[key] = (float(vals.mean()), std)
        return out


def _seed_for(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1, dtype=np.uint64)[0])


def evaluate(state: ModelState, x: np.ndarray, y: np.ndarray) -> tuple[float, object]:
    preds = predict(state, x)
    return step_accuracy(zip(preds, y))


def run_seed(cfg: RunConfig, seed: int,
             observer: Callable[[int, ModelState], None] | None = None) -> SeedRun:
    """One full continual run for ``seed``; ``observer(t, state)`` sees each evaluation point."""
    start = time.perf_counter()
    protocol, data = build_stream(
        cfg.total_classes, cfg.num_steps, cfg.rho, cfg.class_rho, cfg.n_max,
        StreamSeeds.from_seed(seed), cfg.input_dim, cfg.noise_scale, cfg.separation)
    backbone = BackboneSpec.create(cfg.input_dim, cfg.feature_dim, _seed_for(seed, 1))
    # placeholder base for step 1: only its layer-norm terms are read (identity LN)
    placeholder = AdapterParams.init(cfg.feature_dim, cfg.adapter_dim,
                                     np.random.default_rng(_seed_for(seed, 2)), cfg.scale)
    state = ModelState(backbone, placeholder, ClassifierHead.empty(cfg.feature_dim))

    records: list[StepRecord] = []
    trace: list = []
    adapter_counts: list[int] = []
    seen: list[int] = []
    for step in protocol.steps:
        t = step.step_index
        classes = list(step.class_ids)
        state.head.grow(classes)
        train_cfg = cfg.train_config(_seed_for(seed, 3, t))
        step_trace: list = []
        try:
            theta = train_task(state, data.train_subset(classes), classes, train_cfg, trace=step_trace)
        except Exception as exc:
            raise RuntimeError(f"seed {seed} step {t}: training failed: {exc}") from exc
        trace += [(t, e, b, loss) for e, b, loss in step_trace]

        if t == 1:
            state.adapter = theta
        else:
            mcfg = cfg.merge_config(len(seen), len(classes))
            try:
                state.adapter = (average_adapters(state.adapter, theta) if mcfg is None
                                 else merge_adapter(state.adapter, theta, mcfg))
            except Exception as exc:
                raise RuntimeError(f"seed {seed} step {t}: merge failed: {exc}") from exc
        seen += classes

        n_adapters = len(state.adapters())
        if n_adapters != 1:
            raise AssertionError(f"step {t}: model holds {n_adapters} adapters")
        adapter_counts.append(n_adapters)
        if observer is not None:
            observer(t, state)
        x_test, y_test = data.test_subset(seen)
        acc, tally = evaluate(state, x_test, y_test)
        records.append(StepRecord(t, len(seen), acc, tally))
        log.debug("seed %d step %d: %d classes, acc %.4f", seed, t, len(seen), acc)

    report = MetricsReport.from_records(records, protocol)
    return SeedRun(seed, report, protocol, trace, time.perf_counter() - start, adapter_counts)


def run_continual(cfg: RunConfig, seed: int) -> MetricsReport:
    return run_seed(cfg, seed).report


def run_variant(cfg: RunConfig, jobs: int = 1) -> RunResult:
    seeds = list(cfg.seed_list)
    if jobs > 1 and len(seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(run_seed, [cfg] * len(seeds), seeds))
    else:
        runs = [run_seed(cfg, s) for s in seeds]
    return RunResult(cfg, runs)


def run_ablation(cfg: RunConfig, variants: Sequence[str] = VARIANTS, jobs: int = 1) -> dict[str, RunResult]:
    results = {}
    for v in variants:
        log.info("ablation: variant %s", v)
        results[v] = run_variant(cfg.with_updates(variant=v), jobs)
    return results


def run_sensitivity(cfg: RunConfig, sweep: str, values: Sequence[float], jobs: int = 1):
    """One multi-seed run per value of ``sweep``; returns ``[(value, RunResult)]``."""
    if sweep not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {sweep!r}; expected one of {SWEEP_PARAMS}")
    out = []
    for v in values:
        log.info("sweep %s=%s", sweep, v)
        out.append((v, run_variant(cfg.with_updates(**{sweep: float(v)}), jobs)))
    return out


# --- output -----------------------------------------------------------------------

def atomic_write(path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def loss_log(trace) -> str:
    """``# step t`` section headers, then one ``epoch batch loss`` line per batch."""
    chunks = []
    for t in dict.fromkeys(t for t, *_ in trace):
        chunks.append(f"# step {t}\n")
        chunks.append(format_trace([(e, b, loss) for s, e, b, loss in trace if s == t]))
    return "".join(chunks)


def summary_csv(result: RunResult) -> str:
    lines = ["seed,A_T,Abar,wAbar,large,middle,small"]
    for run in result.runs:
        lines.append(f"{run.seed}," + format_metrics_csv(run.report).splitlines()[-1])
    agg = result.aggregate()
    lines.append("stat,A_T,Abar,wAbar")
    lines.append("mean," + ",".join(f"{agg[k][0]:.6f}" for k in ("A_T", "Abar", "wAbar")))
    lines.append("std," + ",".join(f"{agg[k][1]:.6f}" for k in ("A_T", "Abar", "wAbar")))
    return "\n".join(lines) + "\n"


def emit_results(result: RunResult, output_dir) -> list[Path]:
    out = Path(output_dir)
    written = []

    def put(name, text):
        atomic_write(out / name, text)
        written.append(out / name)

    put("config.txt", result.config.to_text())
    for run in result.runs:
        put(f"metrics_seed{run.seed}.csv", format_metrics_csv(run.report))
        put(f"protocol_seed{run.seed}.txt", run.protocol.dump())
        put(f"losses_seed{run.seed}.log", loss_log(run.trace))
    put("summary.csv", summary_csv(result))
    put("timing.txt", "".join(f"{r.seed} {r.duration:.3f}\n" for r in result.runs))
    return written


def comparison_rows(results) -> list[tuple[str, dict]]:
    return [(str(k), r.aggregate()) for k, r in results]


def comparison_csv(label: str, results) -> str:
    keys = ("A_T", "Abar", "wAbar")
    lines = [label + "," + ",".join(f"{k}_mean,{k}_std" for k in keys)]
    for name, agg in comparison_rows(results):
        lines.append(name + "," + ",".join(f"{agg[k][0]:.6f},{agg[k][1]:.6f}" for k in keys))
    return "\n".join(lines) + "\n"


def emit_ablation(results: dict[str, RunResult], output_dir) -> Path:
    out = Path(output_dir)
    for v, res in results.items():
        emit_results(res, out / v)
    path = out / "ablation.csv"
    atomic_write(path, comparison_csv("variant", results.items()))
    return path


def emit_sweep(sweep: str, rows, output_dir) -> Path:
    out = Path(output_dir)
    for value, res in rows:
        emit_results(res, out / f"{sweep}={value}")
    path = out / f"sweep_{sweep}.csv"
    atomic_write(path, comparison_csv(sweep, rows))
    return path
