"""Metrics, sentence-level evaluation, baselines and attention export."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Sample
from .model import ShiftModel
from .template import MalformedPrediction, parse_prediction, render_prompt, render_target
from .tokenizer import Vocabulary, decode, encode

log = logging.getLogger(__name__)


class EmptyInput(ValueError):
    pass


class VocabMismatch(ValueError):
    pass


class SingularSystem(np.linalg.LinAlgError):
    pass


def _pair(preds, truths) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"{p.size} predictions for {t.size} truths")
    if p.size == 0:
        raise EmptyInput("no predictions to score")
    return p, t


def rmse(preds, truths) -> float:
    p, t = _pair(preds, truths)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mae(preds, truths) -> float:
    p, t = _pair(preds, truths)
    return float(np.mean(np.abs(p - t)))


@dataclass
class EvalResult:
    rmse: float
    mae: float
    parse_failure_rate: float
    n_samples: int
    records: list[dict] = field(default_factory=list)

    def __post_init__(self):
        # Cauchy-Schwarz; slack for rounding
        if not self.rmse + 1e-9 >= self.mae >= 0.0:
            raise ValueError(f"inconsistent metrics: rmse {self.rmse} < mae {self.mae}")

    @classmethod
    def from_records(cls, records: list[dict]) -> "EvalResult":
        if not records:
            raise EmptyInput("no samples evaluated")
        preds = [r["prediction"] for r in records]
        truths = [r["truth"] for r in records]
        failures = sum(1 for r in records if r.get("parsed") is None and "generated" in r)
        return cls(rmse(preds, truths), mae(preds, truths), failures / len(records),
                   len(records), records)

    def summary(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae,
                "parse_failure_rate": self.parse_failure_rate, "n_samples": self.n_samples}

    def to_json(self, with_records: bool = True) -> str:
        payload = self.summary()
        if with_records:
            payload["records"] = self.records
        return json.dumps(payload, sort_keys=True)


def _check_vocab(model: ShiftModel, vocab: Vocabulary) -> None:
    if model.vocab_hash is not None and model.vocab_hash != vocab.hash:
        raise VocabMismatch("vocabulary does not match the one the model was trained with")
    if len(vocab) != model.cfg.vocab_size:
        raise VocabMismatch(f"vocabulary has {len(vocab)} tokens, model expects {model.cfg.vocab_size}")


def evaluate_nl(model: ShiftModel, samples: Sequence[Sample], vocab: Vocabulary,
                variant: str = "A", batch_size: int = 256) -> EvalResult:
    """Generate a sentence per sample and score the count parsed out of it.

    Unparseable generations are imputed with the last observed value and
    counted in ``parse_failure_rate``.
    """
    _check_vocab(model, vocab)
    if not samples:
        raise EmptyInput("no samples to evaluate")
    prompts = [render_prompt(s, variant) for s in samples]
    ids = [encode(p, vocab) for p in prompts]
    records = []
    for start in range(0, len(samples), batch_size):
        outputs = model.generate_batch(ids[start:start + batch_size])
        for s, prompt, out in zip(samples[start:start + batch_size], prompts[start:start + batch_size], outputs):
            text = decode(out, vocab)
            try:
                parsed = parse_prediction(text)
            except MalformedPrediction:
                parsed = None
            records.append({
                "prompt": prompt,
                "generated": text,
                "parsed": parsed,
                "prediction": parsed if parsed is not None else s.obs_values[-1],
                "truth": s.target_value,
            })
    return EvalResult.from_records(records)


def evaluate_mob(model: ShiftModel, samples: Sequence[Sample], batch_size: int = 1024) -> EvalResult:
    """Score the Mob branch alone; predictions are rounded to non-negative integers."""
    if not samples:
        raise EmptyInput("no samples to evaluate")
    from . import numerics as nx

    windows = np.array([s.obs_values for s in samples], dtype=float)
    preds = []
    with nx.no_grad():
        for start in range(0, len(samples), batch_size):
            out = model.mob_batch(model.normalize(windows[start:start + batch_size]))
            preds.extend(model.denormalize(out.data))
    records = [{"raw": float(p), "prediction": int(max(0, round(p))), "truth": s.target_value}
               for p, s in zip(preds, samples)]
    return EvalResult.from_records(records)


def baseline_naive(samples: Sequence[Sample]) -> EvalResult:
    """Predict the last observed value."""
    return EvalResult.from_records(
        [{"prediction": s.obs_values[-1], "truth": s.target_value} for s in samples])


def fit_lr(train: Sequence[Sample]) -> np.ndarray:
    """Least-squares weights (intercept last) mapping the window to the next value."""
    if not train:
        raise EmptyInput("no training samples")
    obs = train[0].obs
    if len(train) < obs + 1:
        raise ValueError(f"need at least {obs + 1} training samples, got {len(train)}")
    X = np.hstack([np.array([s.obs_values for s in train], dtype=float), np.ones((len(train), 1))])
    y = np.array([s.target_value for s in train], dtype=float)
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise SingularSystem(f"design matrix has rank {rank} < {X.shape[1]}")
    return coef


def baseline_lr(train: Sequence[Sample], test: Sequence[Sample]) -> EvalResult:
    """One linear regression shared by all POIs; falls back to naive if singular."""
    try:
        coef = fit_lr(train)
    except SingularSystem as exc:
        log.warning("linear baseline fell back to last value: %s", exc)
        return baseline_naive(test)
    X = np.array([s.obs_values for s in test], dtype=float)
    preds = X @ coef[:-1] + coef[-1]
    return EvalResult.from_records(
        [{"prediction": float(p), "truth": s.target_value} for p, s in zip(preds, test)])


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def attention_payload(model: ShiftModel, sample: Sample, vocab: Vocabulary,
                      variant: str = "A") -> dict:
    """Cross-attention between the prompt and the generated sentence of one sample."""
    _check_vocab(model, vocab)
    prompt_ids = encode(render_prompt(sample, variant), vocab)
    output_ids = model.nl_generate(prompt_ids)
    maps = model.attention_maps(prompt_ids, output_ids)
    return {
        "prompt_tokens": [vocab.id_to_token[i] for i in prompt_ids],
        "output_tokens": [vocab.id_to_token[i] for i in output_ids],
        "generated": decode(output_ids, vocab),
        "target": render_target(sample),
        "layers": [m.tolist() for m in maps],
    }


def export_attention(model: ShiftModel, sample: Sample, vocab: Vocabulary, out_path,
                     variant: str = "A", svg: bool = False) -> dict:
    """Write the attention JSON to ``out_path`` (and a heatmap next to it with ``svg``)."""
    payload = attention_payload(model, sample, vocab, variant)
    out_path = Path(out_path)
    out_path.write_text(json.dumps(payload) + "\n", encoding="utf-8")
    if svg:
        from .plotting import plot_attention

        plot_attention(payload, out_path.with_suffix(".svg"))
    return payload


# ---------------------------------------------------------------------------
# summary tables
# ---------------------------------------------------------------------------


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def summary_table(results: dict[str, Sequence[EvalResult]]) -> str:
    """Markdown table of methods x RMSE/MAE, each cell ``mean (std)`` over runs."""
    lines = ["| Method | RMSE | MAE |", "|---|---|---|"]
    for method, runs in results.items():
        r_mean, r_std = mean_std([r.rmse for r in runs])
        m_mean, m_std = mean_std([r.mae for r in runs])
        if len(runs) > 1:
            lines.append(f"| {method} | {r_mean:.3f} ({r_std:.3f}) | {m_mean:.3f} ({m_std:.3f}) |")
        else:
            lines.append(f"| {method} | {r_mean:.3f} | {m_mean:.3f} |")
    return "\n".join(lines) + "\n"


def result_row(name: str, result: EvalResult) -> str:
    return f"| {name} | {result.rmse:.3f} | {result.mae:.3f} |"
