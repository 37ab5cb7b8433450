"""Recurrent subword language model for shallow fusion and perplexity.

The model reads sos-prefixed token sequences and emits a log-probability
distribution over the next token at every step. During beam search these
per-step scores are added to the recognizer scores with a weight gamma;
standalone, exp of the mean negative log-likelihood per token gives
perplexity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import tensor as tt
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import Embedding, Linear, LstmCell, Module
from .nn.optim import DivergedError, clip_gradients, make_optimizer
from .tokenizer import SOS_EOS_ID
from .util import make_rng


@dataclass(frozen=True)
class LmConfig:
    """Architecture and training switches for the subword LM."""

    layers: int = 2
    units: int = 64
    optimizer: str = "sgd"
    batch: int = 8
    epochs: int = 10

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.units < 1:
            raise ValueError("units must be >= 1")
        if self.optimizer not in ("sgd", "adam", "adadelta"):
            raise ValueError(f"unknown optimizer: {self.optimizer!r}")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


# published recipes: plain SGD for the English LM, Adam for the German one
LM_ENGLISH = LmConfig(layers=2, units=650, optimizer="sgd")
LM_GERMAN = LmConfig(layers=2, units=3000, optimizer="adam")


@dataclass(frozen=True)
class FusionConfig:
    """Weight on LM log-probabilities added during beam search."""

    gamma: float = 0.5

    def __post_init__(self):
        if self.gamma < 0.0:
            raise ValueError("gamma must be >= 0")


FUSION_ENGLISH = FusionConfig(gamma=0.5)
FUSION_GERMAN = FusionConfig(gamma=1.1)


class LstmLm(Module):
    """Embedding, a stack of LSTM cells, and a softmax output layer.

    The embedding width equals the hidden width. States are lists of
    (h, c) pairs, one per layer; they are plain values and may be shared
    between search branches without copying.
    """

    def __init__(
        self,
        vocab_size: int,
        layers: int,
        units: int,
        rng: np.random.Generator,
        dtype=np.float32,
        vocab_hash: str = "",
    ):
        if vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if layers < 1 or units < 1:
            raise ValueError("layers and units must be >= 1")
        self.vocab_size = vocab_size
        self.n_layers = layers
        self.units = units
        self.dtype = np.dtype(dtype).type
        self.vocab_hash = vocab_hash
        self.embed = Embedding(vocab_size, units, rng, dtype)
        self.cells = [LstmCell(units, units, rng, dtype) for _ in range(layers)]
        self.out = Linear(units, vocab_size, rng, dtype)

    def initial_state(self, batch: int = 1):
        return [cell.zero_state(batch, self.dtype) for cell in self.cells]

    def lm_step(self, state, token):
        """Advance one step: (log-probs over the vocabulary, new state).

        `token` may be a scalar id (returns shape (V,)) or an id array of
        shape (B,) matching the state's batch (returns (B, V)).
        """
        tok = np.asarray(token)
        scalar = tok.ndim == 0
        ids = np.atleast_1d(tok).astype(np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ValueError(f"token id out of range [0, {self.vocab_size})")
        x = self.embed(ids)
        new_state = []
        for (h, c), cell in zip(state, self.cells):
            h, c = cell(x, h, c)
            new_state.append((h, c))
            x = h
        logp = tt.log_softmax(self.out(x))
        if scalar:
            return tt.take(logp, 0), new_state
        return logp, new_state

    def config_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "layers": self.n_layers,
            "units": self.units,
            "vocab_hash": self.vocab_hash,
        }


def sequence_log_prob(lm, ids, include_eos: bool = True) -> float:
    """log p(Y) of one token sequence, summed over per-step scores."""
    tokens = list(ids) + ([SOS_EOS_ID] if include_eos else [])
    state = lm.initial_state(1)
    prev = SOS_EOS_ID
    total = 0.0
    for t in tokens:
        logp, state = lm.lm_step(state, np.array([prev], dtype=np.int64))
        total += float(logp.data[0, t])
        prev = t
    return total


def _batch_nll(model, lines):
    """Summed teacher-forced negative log-likelihood over padded lines.

    Returns (scalar Tensor, token count). Each line is scored on its
    tokens plus the closing eos; pad steps are masked out.
    """
    B = len(lines)
    u_max = max(len(y) for y in lines) + 1
    inputs = np.full((B, u_max), SOS_EOS_ID, dtype=np.int64)
    targets = np.full((B, u_max), SOS_EOS_ID, dtype=np.int64)
    mask = np.zeros((B, u_max), dtype=model.dtype)
    for b, y in enumerate(lines):
        inputs[b, 1 : len(y) + 1] = y
        targets[b, : len(y)] = y
        mask[b, : len(y) + 1] = 1.0

    rows = np.arange(B)
    state = model.initial_state(B)
    picked = []
    for u in range(u_max):
        logp, state = model.lm_step(state, inputs[:, u])
        step = tt.mul(tt.take(logp, (rows, targets[:, u])), tt.Tensor(mask[:, u]))
        picked.append(step)
    total = tt.neg(tt.sum_(tt.stack(picked)))
    return total, int(mask.sum())


def perplexity(corpus, lm, chunk: int = 64) -> float:
    """exp of the mean negative log-likelihood per token, eos included."""
    lines = list(corpus)
    if not lines:
        raise ValueError("empty corpus")
    total = 0.0
    count = 0
    for i in range(0, len(lines), chunk):
        nll, n = _batch_nll(lm, lines[i : i + chunk])
        total += float(nll.data)
        count += n
    return math.exp(total / count)


@dataclass
class LmTrainResult:
    model: LstmLm
    perplexities: list[float]


def train_lm(
    corpus,
    vocab_size: int,
    cfg: LmConfig | None = None,
    seed: int | None = None,
    dtype=np.float32,
    vocab_hash: str = "",
) -> LmTrainResult:
    """Cross-entropy training over sos-prefixed lines.

    Returns the final model together with the training-corpus perplexity
    measured after each epoch.
    """
    cfg = cfg or LmConfig()
    lines = [list(map(int, y)) for y in corpus]
    if not lines:
        raise ValueError("empty corpus")
    for y in lines:
        if any(t < 0 or t >= vocab_size for t in y):
            raise ValueError(f"token id out of range [0, {vocab_size})")

    rng = make_rng(seed)
    model = LstmLm(vocab_size, cfg.layers, cfg.units, rng, dtype, vocab_hash)
    opt = make_optimizer(cfg.optimizer, model.params())
    params = model.params()

    order = sorted(range(len(lines)), key=lambda i: (len(lines[i]), i))
    batches = [
        [lines[j] for j in order[i : i + cfg.batch]]
        for i in range(0, len(order), cfg.batch)
    ]

    history: list[float] = []
    for _ in range(cfg.epochs):
        for bi in rng.permutation(len(batches)):
            batch = batches[bi]
            nll, n_tokens = _batch_nll(model, batch)
            loss = tt.mul(nll, tt.Tensor(np.asarray(1.0 / n_tokens, dtype=model.dtype)))
            if not np.isfinite(loss.data):
                raise DivergedError("non-finite LM training loss")
            model.zero_grad()
            loss.backward()
            clip_gradients(params, 5.0)
            opt.step()
        history.append(perplexity(lines, model))
    return LmTrainResult(model, history)


def save_lm(path, lm: LstmLm, extra: dict | None = None) -> None:
    config = {"kind": "lm", **lm.config_dict(), **(extra or {})}
    save_checkpoint(path, config, lm.state_dict())


def load_lm(path, expected_hash: str | None = None) -> tuple[LstmLm, dict]:
    config, params = load_checkpoint(path)
    if config.get("kind") != "lm":
        raise ValueError(f"{path} is not a language model checkpoint")
    if expected_hash is not None and config.get("vocab_hash") != expected_hash:
        raise ValueError(
            f"vocabulary mismatch: checkpoint hash {config.get('vocab_hash')!r} "
            f"!= expected {expected_hash!r}"
        )
    lm = LstmLm(
        vocab_size=config["vocab_size"],
        layers=config["layers"],
        units=config["units"],
        rng=np.random.default_rng(0),
        vocab_hash=config.get("vocab_hash", ""),
    )
    lm.load_state_dict(params)
    return lm, config
