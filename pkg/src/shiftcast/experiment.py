"""Resolved run configurations, single runs, and the ablation/sweep grids."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .corpus import PoiDataset, Sample, filter_complete, split, windowize
from .evaluation import (EvalResult, baseline_lr, baseline_naive, evaluate_mob, evaluate_nl,
                         mean_std)
from .model import ModelConfig
from .training import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

SEED_ENV = "SHIFTCAST_SEED"

# model fields a user may set; vocab_size and obs are derived from the data
MODEL_KEYS = ("d", "n_layers", "n_heads", "ff_width", "dropout", "max_prompt_len", "max_target_len")

ABLATION_VARIANTS: dict[str, dict] = {
    "w/o NL": {"branches": "mob", "mode": "basic"},
    "w/o Mob": {"branches": "nl"},
    "basic": {"mode": "basic"},
    "siamese": {"mode": "siamese"},
    "momentum": {"mode": "momentum"},
}

SWEEP_DEFAULTS: dict[str, list] = {
    "alpha_loss": [0.001, 0.01, 0.1, 0.25, 0.5, 0.75],
    "alpha_m": [0.001, 0.01, 0.1, 0.25, 0.5, 0.75],
    "obs": [5, 10, 15, 20],
    "prompt_variant": ["A", "B"],
}


def default_seed() -> int:
    return int(os.environ.get(SEED_ENV, 0))


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one training run from a dataset."""

    obs: int = 7
    split_seed: int = 0
    split_by: str = "sample"
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    model: dict = field(default_factory=lambda: {k: getattr(ModelConfig(vocab_size=1), k) for k in MODEL_KEYS})
    train: dict = field(default_factory=lambda: asdict(TrainConfig()))

    @classmethod
    def resolve(cls, *layers: dict) -> "RunConfig":
        """Merge partial config dicts, later layers winning, over the built-in defaults."""
        base = cls().to_dict()
        base["train"]["seed"] = default_seed()
        for layer in layers:
            for key, value in (layer or {}).items():
                if value is None:
                    continue
                if key in ("model", "train"):
                    unknown = set(value) - set(base[key])
                    if unknown:
                        raise ValueError(f"unknown {key} settings: {sorted(unknown)}")
                    base[key].update({k: v for k, v in value.items() if v is not None})
                elif key in base:
                    base[key] = value
                else:
                    raise ValueError(f"unknown setting {key!r}")
        return cls.from_dict(base)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        cfg = cls(obs=int(raw["obs"]), split_seed=int(raw["split_seed"]), split_by=raw["split_by"],
                  ratios=tuple(float(r) for r in raw["ratios"]), model=dict(raw["model"]),
                  train=dict(raw["train"]))
        cfg.train_config()  # validate early
        cfg.model_config(1)
        return cfg

    def to_dict(self) -> dict:
        return {"obs": self.obs, "split_seed": self.split_seed, "split_by": self.split_by,
                "ratios": list(self.ratios), "model": dict(self.model), "train": dict(self.train)}

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, obs=self.obs, **self.model)

    def with_overrides(self, **overrides) -> "RunConfig":
        raw = self.to_dict()
        for key, value in overrides.items():
            if key in raw["train"]:
                raw["train"][key] = value
            elif key in raw["model"]:
                raw["model"][key] = value
            elif key in raw:
                raw[key] = value
            else:
                raise ValueError(f"unknown setting {key!r}")
        return RunConfig.from_dict(raw)


def prepare(ds: PoiDataset, cfg: RunConfig) -> tuple[list[Sample], list[Sample], list[Sample]]:
    samples = windowize(filter_complete(ds), cfg.obs)
    return split(samples, cfg.ratios, cfg.split_seed, by=cfg.split_by)


def evaluate_run(result: TrainResult, cfg: RunConfig, samples: Sequence[Sample]) -> EvalResult:
    tcfg = cfg.train_config()
    if tcfg.branches == "mob":
        return evaluate_mob(result.model, samples)
    return evaluate_nl(result.model, samples, result.vocab, tcfg.prompt_variant, tcfg.eval_batch_size)


def run_once(ds: PoiDataset, cfg: RunConfig) -> tuple[TrainResult, EvalResult]:
    tr, va, te = prepare(ds, cfg)
    result = train(tr, va, cfg.model_config(1), cfg.train_config())
    return result, evaluate_run(result, cfg, te)


def _grid_job(args) -> dict:
    ds, cfg, label = args
    result, test = run_once(ds, cfg)
    out = {"label": label, "seed": cfg.train["seed"], **test.summary(),
           "best_epoch": result.report.best_epoch}
    log.info("%s seed %s: rmse %.3f mae %.3f", label, cfg.train["seed"], test.rmse, test.mae)
    return out


def run_grid(jobs_spec: list[tuple[PoiDataset, RunConfig, str]], jobs: int = 1) -> list[dict]:
    """Run independent configurations, in worker processes when ``jobs > 1``."""
    if jobs <= 1:
        return [_grid_job(spec) for spec in jobs_spec]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_grid_job, jobs_spec))


def aggregate(rows: list[dict], labels: Sequence, seeds: Sequence[int]) -> dict:
    """Arrange grid rows as label x seed matrices plus mean/std per label."""
    index = {(r["label"], r["seed"]): r for r in rows}
    out = {"labels": [str(l) for l in labels], "seeds": list(seeds), "rmse": [], "mae": [],
           "parse_failure_rate": [], "summary": {}}
    for label in labels:
        rm = [index[(label, s)]["rmse"] for s in seeds]
        ma = [index[(label, s)]["mae"] for s in seeds]
        out["rmse"].append(rm)
        out["mae"].append(ma)
        out["parse_failure_rate"].append([index[(label, s)]["parse_failure_rate"] for s in seeds])
        r_mean, r_std = mean_std(rm)
        m_mean, m_std = mean_std(ma)
        out["summary"][str(label)] = {"rmse_mean": r_mean, "rmse_std": r_std,
                                      "mae_mean": m_mean, "mae_std": m_std}
    return out


def ablate(ds: PoiDataset, base: RunConfig, seeds: Sequence[int], jobs: int = 1,
           variants: Sequence[str] = tuple(ABLATION_VARIANTS)) -> dict:
    specs = [(ds, base.with_overrides(seed=s, **ABLATION_VARIANTS[v]), v)
             for v in variants for s in seeds]
    return aggregate(run_grid(specs, jobs), variants, seeds)


def sweep(ds: PoiDataset, base: RunConfig, param: str, values: Sequence, seeds: Sequence[int],
          jobs: int = 1) -> dict:
    specs = [(ds, base.with_overrides(seed=s, **{param: v}), v) for v in values for s in seeds]
    result = aggregate(run_grid(specs, jobs), values, seeds)
    result["param"] = param
    result["values"] = list(values)
    return result


def baselines(ds: PoiDataset, cfg: RunConfig) -> dict[str, EvalResult]:
    tr, _, te = prepare(ds, cfg)
    return {"naive": baseline_naive(te), "LR": baseline_lr(tr, te)}


def markdown_matrix(result: dict) -> str:
    """``label | RMSE mean (std) | MAE mean (std)`` rows."""
    lines = ["| Method | RMSE | MAE |", "|---|---|---|"]
    for label in result["labels"]:
        s = result["summary"][label]
        lines.append(f"| {label} | {s['rmse_mean']:.3f} ({s['rmse_std']:.3f}) | "
                     f"{s['mae_mean']:.3f} ({s['mae_std']:.3f}) |")
    return "\n".join(lines) + "\n"
