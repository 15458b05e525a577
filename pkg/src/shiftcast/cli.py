"""Command-line entry point: ``shiftcast <subcommand> ...``.

stdout carries only JSON (or CSV for ``synth`` without ``--out``); logs go to
stderr. Failures exit with code 1 and a JSON error object on stderr, usage
errors with code 2.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import experiment as ex
from .corpus import SynthProfile, load_visits, stats, synthesize
from .evaluation import baseline_lr, baseline_naive, export_attention, result_row
from .model import ShiftModel
from .template import MalformedPrediction, parse_prediction, render_prompt, render_target
from .tokenizer import Vocabulary, decode, encode
from .training import corpus_vocab

log = logging.getLogger("shiftcast")

MANIFEST = "manifest.json"


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def parse_seeds(text: str) -> list[int]:
    """``"0..4"`` (inclusive), ``"0,2,5"`` or a single integer."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def artifact_version() -> str:
    """Package version plus a short digest of the package sources."""
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def emit(payload) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    sys.stdout.flush()


def write_manifest(path, command: str, config: dict, inputs: dict[str, str], seeds: list[int]) -> dict:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {name: file_sha256(p) for name, p in inputs.items()},
        "version": artifact_version(),
        "seeds": seeds,
    }
    write_json(path, manifest)
    return manifest


def load_config_file(path) -> dict:
    """A config file is either a bare RunConfig dict or a manifest containing one."""
    raw = json.loads(Path(path).read_text())
    if "config" in raw and "command" in raw:
        raw = raw["config"]
    return raw


def cli_layer(args) -> dict:
    """Config values given explicitly on the command line."""
    train_keys = {"mode": "mode", "alpha_loss": "alpha_loss", "alpha_m": "alpha_m",
                  "batch_size": "batch_size", "epochs": "epochs", "lr": "lr", "seed": "seed",
                  "branches": "branches", "prompt_variant": "prompt_variant",
                  "grad_clip": "grad_clip"}
    model_keys = {"d": "d", "layers": "n_layers", "heads": "n_heads", "ff_width": "ff_width",
                  "dropout": "dropout", "max_prompt_len": "max_prompt_len"}
    layer = {
        "obs": args.obs, "split_seed": args.split_seed, "split_by": args.split_by,
        "train": {v: getattr(args, k) for k, v in train_keys.items()},
        "model": {v: getattr(args, k) for k, v in model_keys.items()},
    }
    if args.ratios is not None:
        layer["ratios"] = [float(r) for r in args.ratios.split(",")]
    return layer


def resolve_config(args) -> ex.RunConfig:
    file_layer = load_config_file(args.config) if args.config else {}
    return ex.RunConfig.resolve(file_layer, cli_layer(args))


def load_checkpoint(directory) -> tuple[ShiftModel, Vocabulary, ex.RunConfig]:
    directory = Path(directory)
    if not (directory / "model.bin").exists():
        raise CliError(f"{directory} is not a checkpoint directory")
    model = ShiftModel.load(directory)
    vocab = Vocabulary.load(directory / "vocab.json")
    manifest = directory / MANIFEST
    cfg = ex.RunConfig.from_dict(load_config_file(manifest)) if manifest.exists() else ex.RunConfig()
    return model, vocab, cfg


def pick_split(ds, cfg: ex.RunConfig, which: str):
    tr, va, te = ex.prepare(ds, cfg)
    return {"train": tr, "val": va, "test": te, "all": tr + va + te}[which]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> None:
    raw = json.loads(Path(args.profile).read_text()) if args.profile else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    elif "seed" not in raw:
        raw["seed"] = ex.default_seed()
    profile = SynthProfile.from_dict(raw)
    profile.validate()
    if args.out:
        out = Path(args.out)
        inputs = {"profile": args.profile} if args.profile else {}
        write_manifest(out.with_name(out.name + ".manifest.json"), "synth", profile.to_dict(),
                       inputs, [profile.seed])
    ds = synthesize(profile)
    if args.out:
        ds.save_csv(args.out)
        emit({"out": str(args.out), **json.loads(stats(ds).to_json())})
    else:
        sys.stdout.write(ds.to_csv())


def cmd_stats(args) -> None:
    emit(json.loads(stats(load_visits(args.data)).to_json()))


def cmd_build_vocab(args) -> None:
    cfg = resolve_config(args)
    tr, _, _ = ex.prepare(load_visits(args.data), cfg)
    vocab = corpus_vocab(tr, cfg.train["prompt_variant"])
    vocab.save(args.out)
    emit({"out": str(args.out), "size": len(vocab), "hash": vocab.hash})


def cmd_train(args) -> None:
    from .plotting import plot_training
    from .training import train

    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / MANIFEST, "train", cfg.to_dict(), {"data": args.data}, [cfg.train["seed"]])

    ds = load_visits(args.data)
    tr, va, te = ex.prepare(ds, cfg)
    log.info("samples: train %d, val %d, test %d", len(tr), len(va), len(te))
    result = train(tr, va, cfg.model_config(1), cfg.train_config())

    result.model.save(out)
    result.vocab.save(out / "vocab.json")
    (out / "report.jsonl").write_text(result.report.to_jsonl(), encoding="utf-8")
    if result.report.epochs:
        plot_training(result.report.epochs, out / "training.svg")
    best = (result.report.epochs[result.report.best_epoch - 1]
            if result.report.best_epoch else {})
    emit({"checkpoint": str(out), "best_epoch": result.report.best_epoch,
          "loss": best.get("loss"), "val_rmse": best.get("val_rmse"), "val_mae": best.get("val_mae"),
          "params": result.model.param_count()})


def cmd_eval(args) -> None:
    model, vocab, cfg = load_checkpoint(args.checkpoint)
    ds = load_visits(args.data)
    samples = pick_split(ds, cfg, args.split)
    tcfg = cfg.train_config()
    if tcfg.branches == "mob":
        from .evaluation import evaluate_mob

        result = evaluate_mob(model, samples)
    else:
        from .evaluation import evaluate_nl

        result = evaluate_nl(model, samples, vocab, tcfg.prompt_variant, tcfg.eval_batch_size)
    payload = {**result.summary(), "split": args.split, "row": result_row("SHIFT", result)}
    if args.baselines:
        tr, _, _ = ex.prepare(ds, cfg)
        payload["baselines"] = {
            name: {**r.summary(), "row": result_row(name, r)}
            for name, r in (("naive", baseline_naive(samples)), ("LR", baseline_lr(tr, samples)))
        }
    if args.records:
        write_json(args.records, result.records)
    emit(payload)


def _grid_output(args, command: str, cfg: ex.RunConfig, seeds: list[int], extra: dict) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / MANIFEST, command, {**cfg.to_dict(), **extra}, {"data": args.data}, seeds)
    return out


def cmd_ablate(args) -> None:
    from .plotting import plot_ablation

    cfg = resolve_config(args)
    seeds = args.seeds
    variants = args.variants.split(",") if args.variants else list(ex.ABLATION_VARIANTS)
    unknown = set(variants) - set(ex.ABLATION_VARIANTS)
    if unknown:
        raise CliError(f"unknown ablation variants {sorted(unknown)}")
    out = _grid_output(args, "ablate", cfg, seeds, {"variants": variants})
    result = ex.ablate(load_visits(args.data), cfg, seeds, args.jobs, variants)
    write_json(out / "ablation.json", result)
    (out / "ablation.md").write_text(ex.markdown_matrix(result), encoding="utf-8")
    plot_ablation(dict(zip(result["labels"], result["rmse"])), out / "ablation.svg")
    emit(result)


def _sweep_values(param: str, text: str | None) -> list:
    if text is None:
        return list(ex.SWEEP_DEFAULTS[param])
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if param == "obs":
        return [int(p) for p in parts]
    if param == "prompt_variant":
        return parts
    return [float(p) for p in parts]


def cmd_sweep(args) -> None:
    from .plotting import plot_sweep

    cfg = resolve_config(args)
    values = _sweep_values(args.param, args.values)
    out = _grid_output(args, "sweep", cfg, args.seeds, {"param": args.param, "values": values})
    result = ex.sweep(load_visits(args.data), cfg, args.param, values, args.seeds, args.jobs)
    write_json(out / "sweep.json", result)
    (out / "sweep.md").write_text(ex.markdown_matrix(result), encoding="utf-8")
    plot_sweep(args.param, values, result["rmse"], result["mae"], out / "sweep.svg")
    emit(result)


def cmd_attention(args) -> None:
    model, vocab, cfg = load_checkpoint(args.checkpoint)
    samples = pick_split(load_visits(args.data), cfg, args.split)
    if not 0 <= args.index < len(samples):
        raise CliError(f"sample index {args.index} out of range (0..{len(samples) - 1})")
    payload = export_attention(model, samples[args.index], vocab, args.out,
                               cfg.train["prompt_variant"], svg=args.svg)
    emit({"out": str(args.out), "prompt_tokens": len(payload["prompt_tokens"]),
          "output_tokens": len(payload["output_tokens"]), "generated": payload["generated"],
          "target": payload["target"]})


def cmd_predict(args) -> int:
    model, vocab, _ = load_checkpoint(args.checkpoint)
    prompt = sys.stdin.read().strip()
    if not prompt:
        raise CliError("empty prompt on stdin")
    text = decode(model.nl_generate(encode(prompt, vocab)), vocab)
    sys.stdout.write(text + "\n")
    try:
        value = parse_prediction(text)
    except MalformedPrediction as exc:
        sys.stdout.flush()
        raise CliError(f"no prediction in generated sentence: {exc}") from exc
    sys.stdout.write(f"{value}\n")
    return 0


def cmd_render(args) -> None:
    cfg = ex.RunConfig.resolve({"obs": args.obs})
    samples = pick_split(load_visits(args.data), cfg, args.split)
    if not 0 <= args.index < len(samples):
        raise CliError(f"sample index {args.index} out of range (0..{len(samples) - 1})")
    s = samples[args.index]
    emit({"prompt": render_prompt(s, args.prompt_variant or "A", verbatim_article=args.verbatim_article),
          "target": render_target(s)})


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", help="JSON run config or a manifest.json to replay")
    g.add_argument("--obs", type=int)
    g.add_argument("--split-seed", type=int)
    g.add_argument("--split-by", choices=("sample", "poi"))
    g.add_argument("--ratios", help="train,val,test fractions, e.g. 0.7,0.1,0.2")
    g.add_argument("--mode", choices=("basic", "siamese", "momentum"))
    g.add_argument("--branches", choices=("both", "nl", "mob"))
    g.add_argument("--alpha-loss", type=float)
    g.add_argument("--alpha-m", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--grad-clip", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--prompt-variant", choices=("A", "B"))
    g.add_argument("--d", type=int)
    g.add_argument("--layers", type=int)
    g.add_argument("--heads", type=int)
    g.add_argument("--ff-width", type=int)
    g.add_argument("--dropout", type=float)
    g.add_argument("--max-prompt-len", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shiftcast", description="Mobility forecasting as translation.")
    parser.add_argument("--version", action="version", version=f"shiftcast {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    parser.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic visits CSV")
    p.add_argument("--profile", help="SynthProfile JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="dataset statistics as JSON")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("build-vocab", help="build the vocabulary from the training split")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _config_flags(p)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    _config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--baselines", action="store_true", help="also score naive and LR baselines")
    p.add_argument("--records", help="write per-sample records to this JSON file")
    p.set_defaults(func=cmd_eval)

    for name, func, help_ in (("ablate", cmd_ablate, "coupling-mode and branch ablation grid"),
                              ("sweep", cmd_sweep, "hyper-parameter sweep")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seeds", type=parse_seeds, default=list(range(5)), help="e.g. 0..4 or 0,1,2")
        p.add_argument("--jobs", type=int, default=1)
        if name == "ablate":
            p.add_argument("--variants", help="comma list of " + ", ".join(ex.ABLATION_VARIANTS))
        else:
            p.add_argument("--param", required=True, choices=tuple(ex.SWEEP_DEFAULTS))
            p.add_argument("--values", help="comma list (default: built-in grid)")
        _config_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("attention", help="export cross-attention for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True, help="JSON path")
    p.add_argument("--svg", action="store_true", help="also write a heatmap next to the JSON")
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("predict", help="translate one prompt read from stdin")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("render", help="render the prompt and target of one sample")
    p.add_argument("--data", required=True)
    p.add_argument("--obs", type=int, default=7)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--prompt-variant", choices=("A", "B"))
    p.add_argument("--verbatim-article", action="store_true",
                   help='always use "a" before the category, even before a vowel')
    p.set_defaults(func=cmd_render)
    return parser


def _setup_logging(args) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("shiftcast")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    _setup_logging(args)
    try:
        return args.func(args) or 0
    except (CliError, ValueError, OSError, KeyError, FloatingPointError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        sys.stderr.write(json.dumps(err) + "\n")
        return 1


def main() -> None:
    sys.exit(run())
