"""Two-branch forecaster: a language encoder-decoder and a numeric regressor.

The NL branch embeds prompt tokens, encodes them with a transformer encoder
and decodes the target sentence token by token with a causal decoder that
cross-attends to the full encoder state sequence. The Mob branch maps each
normalised count to a d-dim vector, runs it through an encoder with exactly
the same topology and parameter names as the NL encoder, mean-pools over
time and regresses the next count with a two-layer MLP.

Parameter names are dotted paths: ``nl.embed``, ``nl.enc.layer0.attn.wq``,
``nl.dec.layer1.cross.wo``, ``mob.enc.layer0.ff.w1``, ``mob.head.w2`` ...
The decoder shares ``nl.embed`` for its input embedding and for the output
projection.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .numerics import Param, Tensor
from .tokenizer import BOS_ID, EOS_ID, PAD_ID

MODES = ("basic", "siamese", "momentum")
NEG_INF = -1e9


class SequenceTooLong(ValueError):
    pass


class WrongLength(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_width: int = 256
    dropout: float = 0.2
    max_prompt_len: int = 128
    max_target_len: int = 24
    obs: int = 7

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ValueError("d must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if min(self.vocab_size, self.n_layers, self.ff_width, self.max_prompt_len,
               self.max_target_len, self.obs) < 1:
            raise ValueError("sizes and lengths must be at least 1")


def sinusoidal_table(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _attn_names(prefix: str) -> list[str]:
    return [f"{prefix}.{w}" for w in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]


def _shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, ff = cfg.d, cfg.ff_width
    shapes: dict[str, tuple[int, ...]] = {"nl.embed": (cfg.vocab_size, d)}

    def attn(prefix):
        for name in _attn_names(prefix):
            shapes[name] = (d, d) if name.rsplit(".", 1)[1].startswith("w") else (d,)

    def norm(prefix):
        shapes[f"{prefix}.g"] = (d,)
        shapes[f"{prefix}.b"] = (d,)

    def ffn(prefix):
        shapes[f"{prefix}.w1"] = (d, ff)
        shapes[f"{prefix}.b1"] = (ff,)
        shapes[f"{prefix}.w2"] = (ff, d)
        shapes[f"{prefix}.b2"] = (d,)

    for i in range(cfg.n_layers):
        p = f"nl.enc.layer{i}"
        norm(f"{p}.ln1"), attn(f"{p}.attn"), norm(f"{p}.ln2"), ffn(f"{p}.ff")
    norm("nl.enc.ln_f")
    for i in range(cfg.n_layers):
        p = f"nl.dec.layer{i}"
        norm(f"{p}.ln1"), attn(f"{p}.self"), norm(f"{p}.ln2"), attn(f"{p}.cross")
        norm(f"{p}.ln3"), ffn(f"{p}.ff")
    norm("nl.dec.ln_f")
    shapes["nl.out.b"] = (cfg.vocab_size,)
    shapes["mob.embed.w"] = (1, d)
    shapes["mob.embed.b"] = (d,)
    for name in [n for n in shapes if n.startswith("nl.enc.")]:
        shapes["mob.enc." + name[len("nl.enc."):]] = shapes[name]
    shapes["mob.head.w1"] = (d, d)
    shapes["mob.head.b1"] = (d,)
    shapes["mob.head.w2"] = (d, 1)
    shapes["mob.head.b2"] = (1,)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Param]:
    """Glorot-uniform weights, zero biases, unit norm gains; Mob encoder copies NL encoder."""
    rng = np.random.default_rng(seed)
    params: dict[str, Param] = {}
    for name, shape in _shapes(cfg).items():
        if name.startswith("mob.enc."):
            params[name] = Param(params["nl.enc." + name[len("mob.enc."):]].data.copy(), name)
            continue
        leaf = name.rsplit(".", 1)[1]
        if len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            value = rng.uniform(-bound, bound, size=shape)
        elif leaf == "g":
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = Param(value, name)
    return params


class ShiftModel:
    """Parameters plus the forward passes of both branches.

    ``mode`` controls how the two encoders relate: ``basic`` keeps them
    independent, ``siamese`` makes every ``mob.enc.*`` entry the very same
    Param object as its ``nl.enc.*`` twin, ``momentum`` freezes the Mob
    encoder against gradients (it is moved by ``training.momentum_update``).
    """

    def __init__(self, cfg: ModelConfig, params: dict[str, Param] | None = None, *,
                 seed: int = 0, mode: str = "momentum", norm_mean: float = 0.0,
                 norm_std: float = 1.0, vocab_hash: str | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        self.norm_mean = float(norm_mean)
        self.norm_std = float(norm_std) if norm_std > 0 else 1.0
        self.vocab_hash = vocab_hash
        self.use_positions = True
        self.dropout_seed = seed
        self.step = 0
        self._pos = sinusoidal_table(max(cfg.max_prompt_len, cfg.max_target_len + 1, cfg.obs), cfg.d)
        self.mode = "basic"
        self.set_mode(mode)

    # -- parameter bookkeeping ---------------------------------------------

    def __getitem__(self, name: str) -> Param:
        return self.params[name]

    def encoder_suffixes(self) -> list[str]:
        return [n[len("nl.enc."):] for n in self.params if n.startswith("nl.enc.")]

    def set_mode(self, mode: str) -> None:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        for suffix in self.encoder_suffixes():
            nl, mob = self.params["nl.enc." + suffix], self.params["mob.enc." + suffix]
            if mode == "siamese":
                self.params["mob.enc." + suffix] = nl
            else:
                if mob is nl:
                    mob = Param(nl.data.copy(), "mob.enc." + suffix)
                    self.params["mob.enc." + suffix] = mob
                mob.requires_grad = mode == "basic"
        self.mode = mode

    def unique_params(self) -> list[Param]:
        seen: set[int] = set()
        out = []
        for p in self.params.values():
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        return out

    def trainable(self) -> list[Param]:
        return [p for p in self.unique_params() if p.requires_grad]

    def zero_grad(self) -> None:
        for p in self.unique_params():
            p.zero_grad()

    def param_count(self) -> dict[str, int]:
        """Scalar counts per group; ``trainable`` excludes a momentum-updated Mob encoder."""
        groups = {"nl_embed": 0, "nl_encoder": 0, "nl_decoder": 0, "mob_embed": 0,
                  "mob_encoder": 0, "mob_head": 0}
        prefix_group = (("nl.embed", "nl_embed"), ("nl.enc.", "nl_encoder"),
                        ("nl.dec.", "nl_decoder"), ("nl.out.", "nl_decoder"),
                        ("mob.embed.", "mob_embed"), ("mob.enc.", "mob_encoder"),
                        ("mob.head.", "mob_head"))
        for name, p in self.params.items():
            for prefix, group in prefix_group:
                if name.startswith(prefix):
                    groups[group] += p.data.size
                    break
        groups["total"] = sum(p.data.size for p in self.unique_params())
        groups["trainable"] = sum(p.data.size for p in self.trainable())
        return groups

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, value in snap.items():
            self.params[name].data[...] = value

    # -- building blocks ---------------------------------------------------

    def _drop(self, x: Tensor, name: str, train: bool) -> Tensor:
        if not train or self.cfg.dropout == 0.0:
            return x
        return nx.dropout(x, self.cfg.dropout, True, nx.rng_for(self.dropout_seed, self.step, name))

    def _norm(self, prefix: str, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"])

    def _linear(self, x: Tensor, w: str, b: str) -> Tensor:
        return nx.matmul(x, self.params[w]) + self.params[b]

    def _attention(self, prefix: str, xq: Tensor, xkv: Tensor, mask: np.ndarray | None,
                   keep_weights: list | None = None) -> Tensor:
        B, Tq, d = xq.shape
        Tk = xkv.shape[1]
        h = self.cfg.n_heads
        dh = d // h

        def heads(x, w, b, T):
            return nx.transpose(nx.reshape(self._linear(x, f"{prefix}.{w}", f"{prefix}.{b}"),
                                           (B, T, h, dh)), (0, 2, 1, 3))

        q = heads(xq, "wq", "bq", Tq)
        k = heads(xkv, "wk", "bk", Tk)
        v = heads(xkv, "wv", "bv", Tk)
        scores = nx.scale(nx.matmul(q, nx.swap_last(k)), 1.0 / math.sqrt(dh))
        if mask is not None:
            scores = scores + mask
        weights = nx.softmax(scores, axis=-1)
        if keep_weights is not None:
            keep_weights.append(weights.data)
        ctx = nx.reshape(nx.transpose(nx.matmul(weights, v), (0, 2, 1, 3)), (B, Tq, d))
        return self._linear(ctx, f"{prefix}.wo", f"{prefix}.bo")

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        return self._linear(nx.gelu(self._linear(x, f"{prefix}.w1", f"{prefix}.b1")),
                            f"{prefix}.w2", f"{prefix}.b2")

    def run_encoder(self, prefix: str, x: Tensor, key_mask: np.ndarray | None = None,
                    train: bool = False) -> Tensor:
        """Pre-norm transformer encoder stack under ``prefix`` (``nl.enc`` or ``mob.enc``)."""
        for i in range(self.cfg.n_layers):
            p = f"{prefix}.layer{i}"
            y = self._norm(f"{p}.ln1", x)
            x = x + self._drop(self._attention(f"{p}.attn", y, y, key_mask), f"{p}.attn.drop", train)
            x = x + self._drop(self._ffn(f"{p}.ff", self._norm(f"{p}.ln2", x)), f"{p}.ff.drop", train)
        return self._norm(f"{prefix}.ln_f", x)

    def _positions(self, T: int) -> np.ndarray:
        if not self.use_positions:
            return np.zeros((T, self.cfg.d))
        return self._pos[:T]

    def _embed(self, ids: np.ndarray) -> Tensor:
        emb = nx.scale(nx.embedding_lookup(self.params["nl.embed"], ids), math.sqrt(self.cfg.d))
        return emb + self._positions(ids.shape[1])

    # -- NL branch -----------------------------------------------------------

    @staticmethod
    def pad_mask(ids: np.ndarray) -> np.ndarray:
        """Additive key mask of shape (B, 1, 1, T)."""
        return np.where(ids == PAD_ID, NEG_INF, 0.0)[:, None, None, :]

    def encode_batch(self, src: np.ndarray, train: bool = False) -> Tensor:
        src = np.asarray(src, dtype=np.int64)
        if src.shape[1] > self.cfg.max_prompt_len:
            raise SequenceTooLong(f"prompt of {src.shape[1]} tokens exceeds {self.cfg.max_prompt_len}")
        x = self._drop(self._embed(src), "nl.enc.embed.drop", train)
        return self.run_encoder("nl.enc", x, self.pad_mask(src), train)

    def decode_batch(self, tgt_in: np.ndarray, memory: Tensor, src: np.ndarray,
                     train: bool = False, keep_cross: list | None = None) -> Tensor:
        """Logits of shape (B, K, V) for decoder inputs ``tgt_in`` (teacher forcing)."""
        tgt_in = np.asarray(tgt_in, dtype=np.int64)
        K = tgt_in.shape[1]
        if K > self.cfg.max_target_len + 1:
            raise SequenceTooLong(f"target prefix of {K} tokens exceeds {self.cfg.max_target_len + 1}")
        causal = np.triu(np.full((K, K), NEG_INF), k=1)[None, None]
        self_mask = causal + self.pad_mask(tgt_in)
        src_mask = self.pad_mask(np.asarray(src))
        x = self._drop(self._embed(tgt_in), "nl.dec.embed.drop", train)
        for i in range(self.cfg.n_layers):
            p = f"nl.dec.layer{i}"
            y = self._norm(f"{p}.ln1", x)
            x = x + self._drop(self._attention(f"{p}.self", y, y, self_mask), f"{p}.self.drop", train)
            x = x + self._drop(self._attention(f"{p}.cross", self._norm(f"{p}.ln2", x), memory,
                                               src_mask, keep_cross), f"{p}.cross.drop", train)
            x = x + self._drop(self._ffn(f"{p}.ff", self._norm(f"{p}.ln3", x)), f"{p}.ff.drop", train)
        x = self._norm("nl.dec.ln_f", x)
        return nx.matmul(x, nx.transpose(self.params["nl.embed"], (1, 0))) + self.params["nl.out.b"]

    def nl_encode(self, prompt_ids: Sequence[int]) -> Tensor:
        """Per-token encoder states of one prompt, shape (len, d)."""
        with nx.no_grad():
            h = self.encode_batch(np.asarray([list(prompt_ids)], dtype=np.int64))
        return Tensor(h.data[0])

    def nl_decode_step(self, prefix_ids: Sequence[int], h_n: Tensor) -> np.ndarray:
        """Next-token distribution given a BOS-led prefix and the prompt encoding."""
        prefix_ids = list(prefix_ids)
        if not prefix_ids or prefix_ids[0] != BOS_ID:
            raise ValueError("decoder prefix must start with BOS")
        memory = Tensor(np.asarray(h_n.data)[None])
        src = np.zeros((1, memory.shape[1]), dtype=np.int64)
        with nx.no_grad():
            logits = self.decode_batch(np.asarray([prefix_ids]), memory, src)
        return nx.softmax(Tensor(logits.data[0, -1])).data

    def generate_batch(self, prompts: Sequence[Sequence[int]], max_len: int | None = None) -> list[list[int]]:
        """Greedy decoding for several prompts at once; each result starts with BOS."""
        max_len = self.cfg.max_target_len if max_len is None else max_len
        src = pad_batch(prompts)
        out = np.full((len(prompts), 1), BOS_ID, dtype=np.int64)
        done = np.zeros(len(prompts), dtype=bool)
        with nx.no_grad():
            memory = self.encode_batch(src)
            for _ in range(max_len):
                logits = self.decode_batch(out, memory, src).data[:, -1]
                nxt = logits.argmax(axis=-1)
                nxt = np.where(done, PAD_ID, nxt)
                out = np.concatenate([out, nxt[:, None]], axis=1)
                done |= nxt == EOS_ID
                if done.all():
                    break
        return [[int(t) for t in row if t != PAD_ID] for row in out]

    def nl_generate(self, prompt_ids: Sequence[int], max_len: int | None = None) -> list[int]:
        return self.generate_batch([prompt_ids], max_len)[0]

    def attention_maps(self, prompt_ids: Sequence[int], output_ids: Sequence[int]) -> list[np.ndarray]:
        """Head-averaged cross-attention, one |output| x |prompt| matrix per decoder layer."""
        src = np.asarray([list(prompt_ids)], dtype=np.int64)
        kept: list[np.ndarray] = []
        with nx.no_grad():
            memory = self.encode_batch(src)
            self.decode_batch(np.asarray([list(output_ids)]), memory, src, keep_cross=kept)
        return [w[0].mean(axis=0) for w in kept]

    # -- Mob branch ----------------------------------------------------------

    def normalize(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.norm_mean) / self.norm_std

    def denormalize(self, values) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.norm_std + self.norm_mean

    def mob_batch(self, values_norm: np.ndarray, train: bool = False) -> Tensor:
        """Normalised predictions, shape (B,), for normalised windows of shape (B, obs)."""
        values_norm = np.asarray(values_norm, dtype=float)
        if values_norm.ndim != 2 or values_norm.shape[1] != self.cfg.obs:
            raise WrongLength(f"expected windows of length {self.cfg.obs}, got shape {values_norm.shape}")
        B, T = values_norm.shape
        x = nx.matmul(Tensor(values_norm[..., None]), self.params["mob.embed.w"]) + self.params["mob.embed.b"]
        x = self._drop(x + self._positions(T), "mob.enc.embed.drop", train)
        h = nx.mean(self.run_encoder("mob.enc", x, None, train), axis=1)
        hidden = nx.gelu(self._linear(h, "mob.head.w1", "mob.head.b1"))
        return nx.reshape(self._linear(hidden, "mob.head.w2", "mob.head.b2"), (B,))

    def mob_forward(self, obs_values: Sequence[float]) -> float:
        """Predicted next-day count (denormalised) for one window."""
        with nx.no_grad():
            pred = self.mob_batch(self.normalize(obs_values)[None])
        return float(self.denormalize(pred.data)[0])

    # -- persistence -----------------------------------------------------------

    def meta(self) -> dict:
        return {
            "config": asdict(self.cfg),
            "mode": self.mode,
            "norm": {"mean": self.norm_mean, "std": self.norm_std},
            "vocab_hash": self.vocab_hash,
        }

    def save(self, directory) -> None:
        """Write ``model.bin`` (parameters) and ``model.json`` (sidecar) into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        nx.save_params(directory / "model.bin", self.params)
        (directory / "model.json").write_text(json.dumps(self.meta(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "ShiftModel":
        directory = Path(directory)
        meta = json.loads((directory / "model.json").read_text())
        params = nx.load_params(directory / "model.bin")
        return cls(ModelConfig(**meta["config"]), params, mode=meta["mode"],
                   norm_mean=meta["norm"]["mean"], norm_std=meta["norm"]["std"],
                   vocab_hash=meta["vocab_hash"])


def pad_batch(seqs: Sequence[Sequence[int]], length: int | None = None) -> np.ndarray:
    length = max(len(s) for s in seqs) if length is None else length
    out = np.full((len(seqs), length), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out
