"""End-to-end orchestration: pretrain -> score search -> mask -> finetune,
plus sweeps and machine-readable reports."""

from __future__ import annotations

import csv
import hashlib
import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as datasets
from .attacks import AttackConfig
from .bounds import EpsilonSchedule
from .checkpoints import (
    Checkpoint,
    load_checkpoint,
    load_network_state,
    network_state,
    save_checkpoint,
)
from .errors import ConfigError, NumericsError
from .metrics import evaluate_metrics
from .models import ARCHITECTURES, build_architecture
from .objectives import OBJECTIVE_TAGS, make_objective
from .pruning import (
    ImportanceScores,
    PruneConfig,
    PruneMask,
    finalize_mask,
    finetune,
    prune_optimize,
    random_score_init,
    scaled_init,
    structured_scaled_init,
    train,
)
from .smoothing import SmoothingConfig

STAGES = ("pretrain", "prune", "finetune")

REPORT_COLUMNS = [
    "run_id", "architecture", "dataset", "p", "stage_objectives", "seed",
    "benign_acc", "era", "vra_t", "vra_s", "params_total", "params_kept",
    "wall_seconds",
]

SWEEP_AXES = ("prune_epochs", "data_fraction", "scaling_k", "ratio", "init_kind")


@dataclass
class PipelineConfig:
    architecture: str = "mlp-2x256"
    num_classes: int = 10
    dataset: dict = field(default_factory=lambda: {"kind": "digits", "image_size": 28})
    objectives: dict = field(default_factory=lambda: {
        "pretrain": "benign", "prune": "benign", "finetune": "benign"})
    epochs: dict = field(default_factory=lambda: {
        "pretrain": 10, "prune": 20, "finetune": 10})
    lrs: dict = field(default_factory=lambda: {
        "pretrain": 0.1, "prune": 0.1, "finetune": 0.01})
    batch_size: int = 128
    momentum: float = 0.9
    ratio: float = 99.0
    granularity: str = "weight"
    scaling_k: float = 6.0
    score_init: str = "scaled"
    data_fraction: float = 1.0
    train_attack: dict = field(default_factory=lambda: {
        "epsilon": 0.1, "steps": 7, "restarts": 1, "random_start": True})
    eval_attack: dict = field(default_factory=lambda: {
        "epsilon": 0.1, "steps": 50, "restarts": 10, "random_start": True})
    ibp: dict = field(default_factory=lambda: {"epsilon": 2.0 / 255.0, "ramp_epochs": 5})
    smoothing: dict = field(default_factory=lambda: {
        "sigma": 0.25, "n0": 100, "n": 10_000, "alpha": 1e-3,
        "l2_budget": 110.0 / 255.0})
    metrics: list = field(default_factory=lambda: ["benign", "era"])
    seeds: dict = field(default_factory=lambda: {"weights": 0, "data": 0, "attack": 0})
    output_dir: str = "runs/out"
    time_limit: float | None = None
    parallel_eval: bool = False
    eval_split: str = "val"
    start_checkpoint: str | None = None
    stop_after: str | None = None  # run only up to this stage

    def validate(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(
                f"unknown architecture {self.architecture!r}; valid: {ARCHITECTURES}")
        for stage in STAGES:
            tag = self.objectives.get(stage)
            if tag not in OBJECTIVE_TAGS:
                raise ConfigError(
                    f"objective for {stage} must be one of {OBJECTIVE_TAGS}, got {tag!r}")
            if self.epochs.get(stage) is None or self.epochs[stage] < 0:
                raise ConfigError(f"epochs for {stage} must be a non-negative integer")
        if not (0.0 <= self.ratio < 100.0):
            raise ConfigError("ratio must lie in [0, 100)")
        if self.score_init not in ("scaled", "xavier-normal", "xavier-uniform",
                                   "kaiming-normal", "kaiming-uniform"):
            raise ConfigError(f"unknown score init {self.score_init!r}")
        for m in self.metrics:
            if m not in ("benign", "era", "vra_t", "vra_s"):
                raise ConfigError(f"unknown metric {m!r}")
        if self.stop_after is not None and self.stop_after not in STAGES:
            raise ConfigError(f"stop_after must be one of {STAGES}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        base = cls()
        unknown = set(d) - set(asdict(base))
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in d.items():
            current = getattr(base, key)
            if isinstance(current, dict) and isinstance(value, dict):
                current.update(value)
            else:
                setattr(base, key, value)
        return base.validate()

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path) as f:
            try:
                return cls.from_dict(json.load(f))
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: not valid JSON: {e}") from None

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("output_dir", None)
        d.pop("parallel_eval", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @property
    def run_id(self) -> str:
        return (f"{self.architecture}-p{self.ratio:g}-"
                f"{'_'.join(self.objectives[s][:3] for s in STAGES)}-"
                f"{self.digest()[:8]}")


def load_dataset(spec: dict) -> datasets.Dataset:
    kind = spec.get("kind")
    if kind == "digits":
        return datasets.load_digits_dataset(spec.get("image_size", 8))
    if kind == "idx":
        return datasets.load_idx(spec["images"], spec["labels"])
    if kind == "cifar10":
        return datasets.load_cifar_binary(spec["batches"])
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _stage_objective(cfg: PipelineConfig, stage: str):
    tag = cfg.objectives[stage]
    attack = ibp_schedule = sigma = None
    if tag == "adversarial":
        attack = AttackConfig(**cfg.train_attack)
    elif tag == "ibp":
        ibp_schedule = EpsilonSchedule(cfg.ibp["epsilon"], cfg.ibp.get("ramp_epochs", 0))
    elif tag == "smoothing":
        sigma = cfg.smoothing["sigma"]
    return make_objective(tag, attack=attack, ibp_schedule=ibp_schedule, sigma=sigma)


@dataclass
class PipelineResult:
    row: dict
    traces: dict
    net: object
    mask: PruneMask | None
    checkpoint_paths: dict


class _Deadline:
    def __init__(self, limit):
        self.start = time.monotonic()
        self.limit = limit
        self.hit = False

    def ok(self) -> bool:
        if self.limit is not None and time.monotonic() - self.start > self.limit:
            self.hit = True
        return not self.hit

    def elapsed(self):
        return time.monotonic() - self.start


def run_pipeline(config: PipelineConfig, write_outputs: bool = True) -> PipelineResult:
    """Execute the five-step compression pipeline described by the config."""
    config.validate()
    deadline = _Deadline(config.time_limit)
    outdir = Path(config.output_dir)
    ckpt_dir = outdir / "checkpoints"
    if write_outputs:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    full = load_dataset(config.dataset)
    train_set, val_set = datasets.train_val_split(full, config.seeds["data"])
    eval_set = val_set if config.eval_split == "val" else train_set

    net = build_architecture(config.architecture, full.input_shape,
                             config.num_classes, seed=config.seeds["weights"])
    done = {stage: False for stage in STAGES}
    mask: PruneMask | None = None
    scores: ImportanceScores | None = None
    if config.start_checkpoint:
        ckpt = load_checkpoint(config.start_checkpoint, config.digest())
        load_network_state(net, ckpt.theta)
        for stage in STAGES:
            done[stage] = True
            if stage == ckpt.stage:
                break
        if done["prune"]:
            values = {int(k.replace("layer", "")): v for k, v in ckpt.scores.items()}
            scores = ImportanceScores(
                values, config.granularity,
                {i: net.layers[i].W.array.shape for i in values})
            mask = PruneMask(
                {int(k.replace("layer", "")): v for k, v in ckpt.mask.items()},
                config.ratio, config.granularity)

    traces: dict = {}
    ckpt_paths: dict = {}
    rng_attack = np.random.default_rng(config.seeds["attack"])

    def save_stage(stage, scores=None, mask=None):
        if not write_outputs:
            return
        ckpt = Checkpoint(
            architecture=config.architecture,
            stage=stage,
            theta=network_state(net),
            scores={f"layer{i:02d}": s for i, s in (scores.values.items() if scores else [])},
            mask={f"layer{i:02d}": m for i, m in (mask.masks.items() if mask else [])},
            seeds=config.seeds,
            config_digest=config.digest(),
        )
        path = ckpt_dir / f"{stage}.ckpt"
        save_checkpoint(ckpt, path)
        ckpt_paths[stage] = str(path)

    def run_stage(stage, fn):
        try:
            return fn()
        except NumericsError as e:
            raise NumericsError(f"stage {stage!r} diverged: {e}") from None

    # Step 1: pretrain
    if not done["pretrain"]:
        stream = datasets.split_batches(train_set, config.batch_size,
                                        config.seeds["data"])
        obj = _stage_objective(config, "pretrain")
        traces["pretrain"] = run_stage("pretrain", lambda: train(
            net, lambda n, x, y, rng=None, epoch=0: obj(
                n, x, y, rng=rng_attack, epoch=epoch),
            stream, config.epochs["pretrain"], config.lrs["pretrain"],
            config.momentum, on_epoch=lambda e: deadline.ok()))
        save_stage("pretrain")

    if not done["prune"] and config.stop_after != "pretrain" and deadline.ok():
        # Steps 2-4: score init, score optimization, mask
        if config.granularity == "filter":
            scores = structured_scaled_init(net, config.scaling_k)
        elif config.score_init == "scaled":
            scores = scaled_init(net, config.scaling_k)
        else:
            scores = random_score_init(
                net, config.score_init,
                np.random.default_rng(config.seeds["weights"]))

        prune_cfg = PruneConfig(
            ratio=config.ratio, granularity=config.granularity,
            scaling_k=config.scaling_k, epochs=config.epochs["prune"],
            lr=config.lrs["prune"], momentum=config.momentum,
            objective=config.objectives["prune"],
            data_fraction=config.data_fraction, seed=config.seeds["data"])
        stream = datasets.split_batches(train_set, config.batch_size,
                                        config.seeds["data"],
                                        fraction=config.data_fraction)
        obj = _stage_objective(config, "prune")
        scores, prune_log = run_stage("prune", lambda: prune_optimize(
            net, scores, prune_cfg, stream,
            objective=lambda n, x, y, weights=None, rng=None, epoch=0: obj(
                n, x, y, weights=weights, rng=rng_attack, epoch=epoch)))
        traces["prune"] = prune_log
        mask = finalize_mask(scores, config.ratio)
        save_stage("prune", scores=scores, mask=mask)

    if not done["finetune"] and config.stop_after not in ("pretrain", "prune") \
            and mask is not None and deadline.ok():
        # Step 5: finetune the kept connections
        stream = datasets.split_batches(train_set, config.batch_size,
                                        config.seeds["data"])
        obj = _stage_objective(config, "finetune")
        traces["finetune"] = run_stage("finetune", lambda: finetune(
            net, mask,
            lambda n, x, y, rng=None, epoch=0: obj(n, x, y, rng=rng_attack, epoch=epoch),
            stream, config.epochs["finetune"], config.lrs["finetune"],
            config.momentum, on_epoch=lambda e: deadline.ok()))
        save_stage("finetune", scores=scores, mask=mask)

    # metrics
    results = evaluate_metrics(
        net, eval_set, config.metrics,
        attack=AttackConfig(**config.eval_attack) if "era" in config.metrics else None,
        ibp_epsilon=config.ibp["epsilon"] if "vra_t" in config.metrics else None,
        smoothing=SmoothingConfig(**config.smoothing) if "vra_s" in config.metrics else None,
        seed=config.seeds["attack"], parallel=config.parallel_eval,
        batch_size=config.batch_size)

    params_total = net.param_count()
    params_kept = params_total
    if mask is not None:
        pruned_away = sum(int(m.size - m.sum()) for m in mask.masks.values())
        params_kept = params_total - pruned_away

    row = {
        "run_id": config.run_id,
        "architecture": config.architecture,
        "dataset": config.dataset.get("kind", "?"),
        "p": config.ratio,
        "stage_objectives": "+".join(config.objectives[s] for s in STAGES),
        "seed": config.seeds["weights"],
        "benign_acc": results.get("benign"),
        "era": results.get("era"),
        "vra_t": results.get("vra_t"),
        "vra_s": results.get("vra_s"),
        "params_total": params_total,
        "params_kept": params_kept,
        "wall_seconds": round(deadline.elapsed(), 3),
    }
    if deadline.hit:
        row["aborted"] = True

    if write_outputs:
        write_report([row], outdir, traces={config.run_id: traces})
    return PipelineResult(row, traces, net, mask, ckpt_paths)


def write_report(rows, outdir, traces=None):
    """Emit report.csv / report.json (and per-run trace files)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = sorted(rows, key=lambda r: (str(r.get("run_id")), r.get("seed", 0)))

    csv_path = outdir / "report.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(["" if row.get(c) is None else row.get(c)
                             for c in REPORT_COLUMNS])

    json_path = outdir / "report.json"
    payload = {"rows": rows}
    if traces:
        payload["traces"] = traces
        tdir = outdir / "traces"
        tdir.mkdir(exist_ok=True)
        for run_id, t in traces.items():
            with open(tdir / f"{run_id}.json", "w") as f:
                json.dump(t, f, indent=1)
    with open(json_path, "w") as f:
        json.dump(payload, f, indent=1)
    return csv_path, json_path


def _apply_axis(config: PipelineConfig, axis: str, value):
    d = config.to_dict()
    if axis == "prune_epochs":
        d["epochs"] = dict(d["epochs"], prune=int(value))
    elif axis == "data_fraction":
        d["data_fraction"] = float(value)
    elif axis == "scaling_k":
        d["scaling_k"] = float(value)
    elif axis == "ratio":
        d["ratio"] = float(value)
    elif axis == "init_kind":
        d["score_init"] = str(value)
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; valid: {SWEEP_AXES}")
    return PipelineConfig.from_dict(d)


def run_sweep(base: PipelineConfig, axis: str, values, seeds, outdir=None):
    """One full pipeline per (value, seed); pretraining is shared per seed.

    Returns the aggregated rows; also writes sweep.csv when outdir is set.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; valid: {SWEEP_AXES}")
    if not values:
        raise ConfigError("sweep values must be non-empty")
    outdir = Path(outdir if outdir is not None else base.output_dir)
    rows = []
    all_traces = {}
    for seed in seeds:
        seed_cfg = PipelineConfig.from_dict(dict(
            base.to_dict(), seeds={"weights": seed, "data": seed, "attack": seed}))

        # pretrain once per seed, reuse across axis values
        pre_cfg = PipelineConfig.from_dict(dict(
            seed_cfg.to_dict(), stop_after="pretrain",
            output_dir=str(outdir / f"pretrain_s{seed}")))
        pre = run_pipeline(pre_cfg)
        pre_ckpt = pre.checkpoint_paths["pretrain"]

        for value in values:
            cell = _apply_axis(seed_cfg, axis, value)
            cell = PipelineConfig.from_dict(dict(
                cell.to_dict(), start_checkpoint=pre_ckpt,
                output_dir=str(outdir / f"{axis}_{value}_s{seed}")))
            # sharing the pretrain checkpoint across cells is deliberate, so
            # the digest-mismatch advisory is suppressed here
            with warnings.catch_warnings():
                warnings.filterwarnings("ignore", message=".*config digest.*")
                result = run_pipeline(cell)
            row = dict(result.row)
            row["axis"] = axis
            row["value"] = value
            rows.append(row)
            all_traces[f"{row['run_id']}-s{seed}"] = result.traces

    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "sweep.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["axis", "value"] + REPORT_COLUMNS)
            for row in rows:
                writer.writerow([row["axis"], row["value"]] +
                                ["" if row.get(c) is None else row.get(c)
                                 for c in REPORT_COLUMNS])
        with open(outdir / "sweep.json", "w") as f:
            json.dump({"rows": rows, "traces": all_traces}, f, indent=1)
    return rows
