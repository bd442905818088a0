"""Tiny tied-embedding encoder-decoder that generates fixed-length identifiers.

The decoder is fed its own final hidden states instead of the embeddings of
the tokens it emitted, so the per-step distributions of an input do not
depend on which tokens get picked. ``token_decoder_input=True`` switches to
ordinary token feedback (ablation).

Everything runs in float64 on CPU.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .fileio import atomic_write_bytes

DTYPE = torch.float64
MAGIC = b"GLENCKP1"


class NonFiniteGradient(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n: int = 3
    m: int = 32
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_mult: int = 2
    seed: int = 0
    token_decoder_input: bool = False
    max_len: int = 256

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ValueError("need at least one encoder and one decoder layer")
        if self.vocab_size < 3:
            raise ValueError("vocabulary needs at least one content token plus two specials")

    # specials occupy the last two ids, matching corpus.Vocabulary
    @property
    def pad_id(self) -> int:
        return self.vocab_size - 2

    @property
    def start_id(self) -> int:
        return self.vocab_size - 1

    @property
    def content_size(self) -> int:
        return self.vocab_size - 2


def sinusoid_table(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=DTYPE)[:, None]
    i = torch.arange(dim, dtype=DTYPE)[None, :]
    angle = pos / torch.pow(10000.0, (2 * torch.div(i, 2, rounding_mode="floor")) / dim)
    return torch.where(i.long() % 2 == 0, torch.sin(angle), torch.cos(angle))


def _layer_norm(x: torch.Tensor) -> torch.Tensor:
    return F.layer_norm(x, (x.shape[-1],), eps=1e-6)


class Attention(nn.Module):
    def __init__(self, m: int):
        super().__init__()
        self.wq = nn.Parameter(torch.empty(m, m, dtype=DTYPE))
        self.wk = nn.Parameter(torch.empty(m, m, dtype=DTYPE))
        self.wv = nn.Parameter(torch.empty(m, m, dtype=DTYPE))
        self.wo = nn.Parameter(torch.empty(m, m, dtype=DTYPE))

    def forward(self, x, kv, key_mask):
        # key_mask: bool, broadcastable to [B, Lq, Lk], True where attending is allowed
        q, k, v = x @ self.wq, kv @ self.wk, kv @ self.wv
        scores = q @ k.transpose(-1, -2) / math.sqrt(x.shape[-1])
        scores = scores.masked_fill(~key_mask, float("-inf"))
        return torch.softmax(scores, dim=-1) @ v @ self.wo


class FeedForward(nn.Module):
    def __init__(self, m: int, hidden: int):
        super().__init__()
        self.w1 = nn.Parameter(torch.empty(m, hidden, dtype=DTYPE))
        self.b1 = nn.Parameter(torch.empty(hidden, dtype=DTYPE))
        self.w2 = nn.Parameter(torch.empty(hidden, m, dtype=DTYPE))
        self.b2 = nn.Parameter(torch.empty(m, dtype=DTYPE))

    def forward(self, x):
        # smooth activation keeps finite-difference checks meaningful
        return F.gelu(x @ self.w1 + self.b1) @ self.w2 + self.b2


class EncoderLayer(nn.Module):
    def __init__(self, m: int, hidden: int):
        super().__init__()
        self.attn = Attention(m)
        self.ff = FeedForward(m, hidden)

    def forward(self, x, mask):
        h = _layer_norm(x)
        x = x + self.attn(h, h, mask)
        return x + self.ff(_layer_norm(x))


class DecoderLayer(nn.Module):
    def __init__(self, m: int, hidden: int):
        super().__init__()
        self.self_attn = Attention(m)
        self.cross_attn = Attention(m)
        self.ff = FeedForward(m, hidden)

    def forward(self, x, memory, self_mask, mem_mask):
        h = _layer_norm(x)
        x = x + self.self_attn(h, h, self_mask)
        x = x + self.cross_attn(_layer_norm(x), memory, mem_mask)
        return x + self.ff(_layer_norm(x))


@dataclass
class DecodeState:
    """Single-sequence decoding state. ``history`` holds d_<t (or q_<t)."""

    memory: torch.Tensor
    history: list[torch.Tensor] = field(default_factory=list)
    emitted: list[int] = field(default_factory=list)

    @property
    def t(self) -> int:
        return len(self.history)


class GlenModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        m, hidden = config.m, config.m * config.ffn_mult
        self.E = nn.Parameter(torch.empty(config.vocab_size, m, dtype=DTYPE))
        self.encoder = nn.ModuleList(EncoderLayer(m, hidden) for _ in range(config.enc_layers))
        self.decoder = nn.ModuleList(DecoderLayer(m, hidden) for _ in range(config.dec_layers))
        self.register_buffer("pos", sinusoid_table(config.max_len, m), persistent=False)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        gen = torch.Generator().manual_seed(self.config.seed)
        bound = 1.0 / math.sqrt(self.config.m)
        with torch.no_grad():
            for _, p in self.named_parameters():
                p.uniform_(-bound, bound, generator=gen)

    # -- embeddings ---------------------------------------------------------

    def embed(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.E[tokens] * math.sqrt(self.config.m)

    # -- encoder ------------------------------------------------------------

    def encode_batch(self, tokens: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """tokens, mask: [B, L]. Returns memory [B, L, m]."""
        L = tokens.shape[1]
        if L > self.config.max_len:
            raise ValueError(f"sequence length {L} exceeds max_len {self.config.max_len}")
        x = self.embed(tokens) + self.pos[:L]
        key_mask = mask[:, None, :]
        for layer in self.encoder:
            x = layer(x, key_mask)
        return _layer_norm(x)

    def encode(self, tokens: Sequence[int]) -> torch.Tensor:
        """Memory [L, m] for one input sequence."""
        if len(tokens) == 0:
            raise ValueError("cannot encode an empty sequence")
        self._check_ids(tokens)
        t = torch.tensor([list(tokens)], dtype=torch.long)
        return self.encode_batch(t, torch.ones_like(t, dtype=torch.bool))[0]

    # -- decoder ------------------------------------------------------------

    def _decoder_stack(self, inputs: torch.Tensor, memory: torch.Tensor, mem_mask: torch.Tensor) -> torch.Tensor:
        """inputs [B, T, m] (already embedded, no positions). Returns last-position output [B, m]."""
        T = inputs.shape[1]
        x = inputs + self.pos[:T]
        causal = torch.ones(T, T, dtype=torch.bool).tril()[None]
        mem_key = mem_mask[:, None, :]
        for layer in self.decoder:
            x = layer(x, memory, causal, mem_key)
        return _layer_norm(x[:, -1])

    def decode_batch(
        self,
        memory: torch.Tensor,
        mem_mask: torch.Tensor,
        feed: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """All n decoder hidden states, [B, n, m].

        ``feed`` ([B, n] token ids) is only consulted in token-feedback mode,
        where it supplies the tokens emitted so far (teacher forcing). Without
        it, token mode feeds its own greedy choices.
        """
        B = memory.shape[0]
        start = self.embed(torch.full((B,), self.config.start_id, dtype=torch.long))
        inputs = [start]
        out = []
        for t in range(self.config.n):
            h = self._decoder_stack(torch.stack(inputs, dim=1), memory, mem_mask)
            out.append(h)
            if t + 1 == self.config.n:
                break
            if self.config.token_decoder_input:
                tok = feed[:, t] if feed is not None else self.content_argmax(h.detach())
                inputs.append(self.embed(tok))
            else:
                inputs.append(h)
        return torch.stack(out, dim=1)

    def decode_step(self, state: DecodeState) -> torch.Tensor:
        """Advance one step; appends to and returns the new hidden state [m]."""
        if state.t >= self.config.n:
            raise ValueError(f"decode step {state.t} is past identifier length {self.config.n}")
        start = self.embed(torch.tensor([self.config.start_id]))
        if self.config.token_decoder_input:
            if len(state.emitted) < state.t:
                raise ValueError("token feedback mode needs the emitted token of every previous step")
            prev = [self.embed(torch.tensor(state.emitted[: state.t], dtype=torch.long))] if state.t else []
        else:
            prev = [torch.stack(state.history)] if state.t else []
        inputs = torch.cat([start] + prev, dim=0)[None]
        mem = state.memory[None]
        h = self._decoder_stack(inputs, mem, torch.ones(mem.shape[:2], dtype=torch.bool))[0]
        state.history.append(h)
        return h

    # -- output head --------------------------------------------------------

    def logits(self, hidden: torch.Tensor) -> torch.Tensor:
        return hidden @ self.E.T

    def gen_prob(self, hidden: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(hidden), dim=-1)

    def log_prob(self, hidden: torch.Tensor) -> torch.Tensor:
        return torch.log_softmax(self.logits(hidden), dim=-1)

    def content_argmax(self, hidden: torch.Tensor) -> torch.Tensor:
        # torch.argmax returns the first maximal index -> ties go to the lowest id
        return self.logits(hidden)[..., : self.config.content_size].argmax(dim=-1)

    # -- convenience ----------------------------------------------------------

    def batch(self, seqs: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
        if any(len(s) == 0 for s in seqs):
            raise ValueError("cannot encode an empty sequence")
        L = max(len(s) for s in seqs)
        tokens = torch.full((len(seqs), L), self.config.pad_id, dtype=torch.long)
        mask = torch.zeros((len(seqs), L), dtype=torch.bool)
        for i, s in enumerate(seqs):
            tokens[i, : len(s)] = torch.tensor(list(s), dtype=torch.long)
            mask[i, : len(s)] = True
        return tokens, mask

    def hiddens(self, seqs: Sequence[Sequence[int]], feed: torch.Tensor | None = None) -> torch.Tensor:
        """Decoder hidden states [B, n, m] for a batch of raw token sequences."""
        tokens, mask = self.batch(seqs)
        return self.decode_batch(self.encode_batch(tokens, mask), mask, feed)

    def identifiers_from_hiddens(self, h: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Greedy identifier [.., n] and its logit weights w [.., n]."""
        z = self.content_argmax(h)
        w = (h * self.E[z]).sum(-1)
        return z, w

    def predict_batch(self, seqs: Sequence[Sequence[int]], chunk: int = 256) -> tuple[torch.Tensor, torch.Tensor]:
        zs, ws = [], []
        with torch.no_grad():
            for i in range(0, len(seqs), chunk):
                z, w = self.identifiers_from_hiddens(self.hiddens(seqs[i : i + chunk]))
                zs.append(z)
                ws.append(w)
        return torch.cat(zs), torch.cat(ws)

    def predict_identifier(self, tokens: Sequence[int]) -> tuple[tuple[int, ...], tuple[float, ...]]:
        self._check_ids(tokens)
        z, w = self.predict_batch([tokens])
        return tuple(z[0].tolist()), tuple(w[0].tolist())

    def _check_ids(self, tokens: Sequence[int]) -> None:
        bad = [t for t in tokens if not 0 <= t < self.config.vocab_size]
        if bad:
            raise ValueError(f"token ids out of range [0, {self.config.vocab_size}): {bad[:5]}")


def grad(loss_fn: Callable[[GlenModel], torch.Tensor], model: GlenModel) -> dict[str, torch.Tensor]:
    """Reverse-mode gradient of ``loss_fn(model)`` for every parameter block."""
    model.zero_grad(set_to_none=True)
    loss = loss_fn(model)
    if torch.is_tensor(loss) and loss.requires_grad:
        loss.backward()
    out = {}
    for name, p in model.named_parameters():
        g = torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient in parameter block {name!r}")
        out[name] = g
    model.zero_grad(set_to_none=True)
    return out


# -- checkpoints -------------------------------------------------------------
#
# Layout: b"GLENCKP1", one UTF-8 JSON line with the ModelConfig, then every
# parameter block in ``named_parameters()`` order (E, encoder.0.attn.wq, ...,
# decoder.{L-1}.ff.b2), each flattened row-major as little-endian float64.


def checkpoint_bytes(model: GlenModel) -> bytes:
    header = json.dumps(asdict(model.config), sort_keys=True).encode("utf-8") + b"\n"
    body = [p.detach().contiguous().numpy().astype("<f8").tobytes() for _, p in model.named_parameters()]
    return MAGIC + header + b"".join(body)


def save_checkpoint(path: str | Path, model: GlenModel) -> None:
    atomic_write_bytes(path, checkpoint_bytes(model))


def read_checkpoint_config(path: str | Path) -> ModelConfig:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        return ModelConfig(**json.loads(fh.readline().decode("utf-8")))


def load_checkpoint(path: str | Path, expect: ModelConfig | None = None) -> GlenModel:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    nl = data.index(b"\n", len(MAGIC))
    config = ModelConfig(**json.loads(data[len(MAGIC) : nl].decode("utf-8")))
    if expect is not None:
        for key in ("vocab_size", "n", "m", "enc_layers", "dec_layers", "ffn_mult"):
            if getattr(expect, key) != getattr(config, key):
                raise CheckpointError(
                    f"{path}: checkpoint {key}={getattr(config, key)} does not match expected {getattr(expect, key)}"
                )
    model = GlenModel(config)
    offset = nl + 1
    with torch.no_grad():
        for name, p in model.named_parameters():
            count = p.numel()
            raw = data[offset : offset + 8 * count]
            if len(raw) != 8 * count:
                raise CheckpointError(f"{path}: truncated at parameter block {name!r}")
            vals = struct.unpack(f"<{count}d", raw)
            p.copy_(torch.tensor(vals, dtype=DTYPE).reshape(p.shape))
            offset += 8 * count
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return model
