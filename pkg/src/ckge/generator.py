"""GRU sequence VAE that generates (head, relation, tail) triples.

A triple is read as three tokens.  The token vocabulary places entity ids
first (``[0, n_e)``) and relation ids after them (``[n_e, n_e + n_r)``).

* encoder: GRU over the token embeddings, final state -> (mu, logvar);
* decoder: initial state ``tanh(z W + b)``; each step is fed ``[z, e_prev]``
  where ``e_prev`` is the previous token's embedding (zeros at step 0,
  ground truth while training, own sample while generating);
* output softmax is restricted per step: entities at steps 0 and 2, relations
  at step 1, so every decoded sequence is a well-formed triple.

Training minimises ``recon + alpha(epoch) * KL`` per triple, averaged over a
batch, with a single reparameterised sample.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .autodiff import Tape, concat, range_softmax_xent, take_rows
from .utils import NumericalError

logger = logging.getLogger(__name__)

ENCODER_KEYS = ("enc_Wx", "enc_Uh", "enc_Uc", "enc_b")
DECODER_KEYS = ("dec_Wx", "dec_Uh", "dec_Uc", "dec_b")


@dataclass
class GeneratorConfig:
    token_dim: int = 64
    latent_dim: int = 32
    hidden: int = 64
    epochs: int = 500
    batch_size: int = 256
    lr: float = 0.05
    momentum: float = 0.9
    clip_norm: float = 5.0
    anneal_max: float = 1.0
    anneal_slope: float = 0.05
    anneal_pos: float | None = None  # None -> epochs / 4

    @property
    def anneal_position(self) -> float:
        return self.epochs / 4 if self.anneal_pos is None else self.anneal_pos


@dataclass
class GeneratorParams:
    num_entities: int
    num_relations: int
    arrays: dict[str, np.ndarray] = field(repr=False)

    @property
    def vocab_size(self) -> int:
        return self.num_entities + self.num_relations

    @property
    def hidden(self) -> int:
        return self.arrays["enc_Uc"].shape[0]

    @property
    def latent_dim(self) -> int:
        return self.arrays["mu_W"].shape[1]

    @property
    def token_dim(self) -> int:
        return self.arrays["token_emb"].shape[1]

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "GeneratorParams":
        return GeneratorParams(self.num_entities, self.num_relations,
                               {k: v.copy() for k, v in self.arrays.items()})


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_generator(num_entities: int, num_relations: int, cfg: GeneratorConfig,
                   rng: np.random.Generator) -> GeneratorParams:
    V, D, H, Z = num_entities + num_relations, cfg.token_dim, cfg.hidden, cfg.latent_dim
    a = {
        "token_emb": rng.normal(0.0, 0.1, size=(V, D)),
        "enc_Wx": _glorot(rng, D, 3 * H), "enc_Uh": _glorot(rng, H, 2 * H),
        "enc_Uc": _glorot(rng, H, H), "enc_b": np.zeros(3 * H),
        "mu_W": _glorot(rng, H, Z), "mu_b": np.zeros(Z),
        "lv_W": _glorot(rng, H, Z), "lv_b": np.zeros(Z),
        "dec_init_W": _glorot(rng, Z, H), "dec_init_b": np.zeros(H),
        "dec_Wx": _glorot(rng, Z + D, 3 * H), "dec_Uh": _glorot(rng, H, 2 * H),
        "dec_Uc": _glorot(rng, H, H), "dec_b": np.zeros(3 * H),
        "out_W": _glorot(rng, H, V), "out_b": np.zeros(V),
    }
    return GeneratorParams(num_entities, num_relations, a)


def zero_generator(num_entities: int, num_relations: int, cfg: GeneratorConfig) -> GeneratorParams:
    g = init_generator(num_entities, num_relations, cfg, np.random.default_rng(0))
    return GeneratorParams(num_entities, num_relations, {k: np.zeros_like(v) for k, v in g.arrays.items()})


def expand_generator(g: GeneratorParams, num_entities: int, num_relations: int,
                     rng: np.random.Generator) -> GeneratorParams:
    """Grow the token vocabulary, keeping trained rows/columns for known ids."""
    if num_entities < g.num_entities or num_relations < g.num_relations:
        raise ValueError("cannot shrink a generator vocabulary")
    add_e, add_r = num_entities - g.num_entities, num_relations - g.num_relations
    a = {k: v.copy() for k, v in g.arrays.items()}
    D, H = g.token_dim, g.hidden

    def grow(old, new_e, new_r, axis):
        ent, rel = np.split(old, [g.num_entities], axis=axis)
        return np.concatenate([ent, new_e, rel, new_r], axis=axis)

    a["token_emb"] = grow(a["token_emb"], rng.normal(0, 0.1, (add_e, D)), rng.normal(0, 0.1, (add_r, D)), 0)
    bound = np.sqrt(6.0 / (H + num_entities + num_relations))
    a["out_W"] = grow(a["out_W"], rng.uniform(-bound, bound, (H, add_e)), rng.uniform(-bound, bound, (H, add_r)), 1)
    a["out_b"] = grow(a["out_b"], np.zeros(add_e), np.zeros(add_r), 0)
    return GeneratorParams(num_entities, num_relations, a)


def anneal_alpha(epoch: float, max_value: float, slope: float, position: float) -> float:
    """Logistic KL weight ``max / (1 + exp(-slope * (epoch - position)))``."""
    if slope <= 0:
        raise ValueError("slope must be positive")
    x = -slope * (epoch - position)
    if x > 700:
        return 0.0
    return max_value / (1.0 + np.exp(x))


# --- forward pass ---------------------------------------------------------

def _gru(x, h, Wx, Uh, Uc, b, H):
    xw = x @ Wx + b
    hu = h @ Uh
    r = (xw.cols(0, H) + hu.cols(0, H)).sigmoid()
    u = (xw.cols(H, 2 * H) + hu.cols(H, 2 * H)).sigmoid()
    c = (xw.cols(2 * H, 3 * H) + (r * h) @ Uc).tanh()
    return h + u * (c - h)


def _tokens(g: GeneratorParams, triples: np.ndarray) -> np.ndarray:
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(t) and (t[:, [0, 2]].min() < 0 or t[:, [0, 2]].max() >= g.num_entities
                   or t[:, 1].min() < 0 or t[:, 1].max() >= g.num_relations):
        raise IndexError("triple id outside the generator vocabulary")
    tok = t.copy()
    tok[:, 1] += g.num_entities
    return tok


def _step_range(g: GeneratorParams, step: int) -> tuple[int, int]:
    return (g.num_entities, g.vocab_size) if step == 1 else (0, g.num_entities)


def _encode(tape, P, g, tok):
    H = g.hidden
    h = tape.const(np.zeros((len(tok), H)))
    for s in range(3):
        x = take_rows(P["token_emb"], tok[:, s])
        h = _gru(x, h, *(P[k] for k in ENCODER_KEYS), H)
    return h @ P["mu_W"] + P["mu_b"], h @ P["lv_W"] + P["lv_b"]


def _decoder_start(tape, P, z):
    return (z @ P["dec_init_W"] + P["dec_init_b"]).tanh()


def _decoder_step(tape, P, g, z, h, prev_emb):
    h = _gru(concat([z, prev_emb]), h, *(P[k] for k in DECODER_KEYS), g.hidden)
    return h, h @ P["out_W"] + P["out_b"]


def _leaves(tape, g, trainable=True):
    make = tape.leaf if trainable else tape.const
    return {k: make(v) for k, v in g.arrays.items()}


def encode(g: GeneratorParams, triples) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and log-variance for each triple; shapes (B, d_z)."""
    tape = Tape()
    mu, logvar = _encode(tape, _leaves(tape, g, False), g, _tokens(g, triples))
    return mu.value, logvar.value


def _masked(g, logits: np.ndarray, step: int) -> np.ndarray:
    start, stop = _step_range(g, step)
    out = np.full_like(logits, -np.inf)
    out[:, start:stop] = logits[:, start:stop]
    return out


def decode(g: GeneratorParams, z, rng: np.random.Generator | None = None,
           temperature: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Decode latents into triples.

    Returns ``(logits, triples)``: ``logits`` has shape (B, 3, V) with
    ``-inf`` outside each step's allowed range, ``triples`` are entity and
    relation ids.  Greedy (argmax) unless ``rng`` is given, in which case
    tokens are sampled from the softmax at ``temperature``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    tape = Tape()
    P = _leaves(tape, g, False)
    zv = tape.const(z)
    h = _decoder_start(tape, P, zv)
    prev = tape.const(np.zeros((len(z), g.token_dim)))
    logits = np.empty((len(z), 3, g.vocab_size))
    tokens = np.empty((len(z), 3), dtype=np.int64)
    for s in range(3):
        h, lg = _decoder_step(tape, P, g, zv, h, prev)
        masked = _masked(g, lg.value, s)
        logits[:, s] = masked
        if rng is None:
            tok = masked.argmax(axis=1)
        else:
            tok = _sample_rows(masked / temperature, rng)
        tokens[:, s] = tok
        prev = tape.const(g.arrays["token_emb"][tok])
    triples = tokens.copy()
    triples[:, 1] -= g.num_entities
    return logits, triples


def _sample_rows(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    cdf = np.cumsum(p, axis=1)
    u = rng.random(len(p)) * cdf[:, -1]
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, p.shape[1] - 1)


def reconstruct(g: GeneratorParams, triples) -> np.ndarray:
    """Greedy decode of each triple's posterior mean."""
    mu, _ = encode(g, triples)
    return decode(g, mu)[1]


def sample_triples(g: GeneratorParams, count: int, rng: np.random.Generator,
                   temperature: float = 1.0, chunk: int = 4096) -> np.ndarray:
    """Draw ``z ~ N(0, I)`` and decode by multinomial sampling; shape (count, 3)."""
    if count < 0:
        raise ValueError("count must be non-negative")
    out = []
    for start in range(0, count, chunk):
        n = min(chunk, count - start)
        z = rng.standard_normal((n, g.latent_dim))
        out.append(decode(g, z, rng=rng, temperature=temperature)[1])
    if not out:
        return np.zeros((0, 3), dtype=np.int32)
    return np.concatenate(out).astype(np.int32)


# --- objective ------------------------------------------------------------

def kl_standard_normal(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """Closed-form KL(N(mu, exp(logvar)) || N(0, I)) per row."""
    return 0.5 * (mu ** 2 + np.exp(logvar) - logvar - 1.0).sum(axis=-1)


def vae_loss(g: GeneratorParams, triples, alpha: float, eps: np.ndarray):
    """Mean over the batch of ``recon + alpha * KL``.

    ``eps`` is the standard-normal noise for the reparameterised sample, so
    the loss is a deterministic function of the parameters.  Returns
    ``(loss, grads, parts)`` with ``parts = {"recon": ..., "kl": ...}``.
    """
    tok = _tokens(g, triples)
    if len(tok) == 0:
        raise ValueError("empty batch")
    B = len(tok)
    tape = Tape()
    P = _leaves(tape, g)
    mu, logvar = _encode(tape, P, g, tok)
    z = mu + (logvar * 0.5).exp() * tape.const(eps)
    h = _decoder_start(tape, P, z)
    prev = tape.const(np.zeros((B, g.token_dim)))
    recon = None
    for s in range(3):
        h, logits = _decoder_step(tape, P, g, z, h, prev)
        start, stop = _step_range(g, s)
        term = range_softmax_xent(logits, tok[:, s], start, stop)
        recon = term if recon is None else recon + term
        prev = take_rows(P["token_emb"], tok[:, s])
    kl = ((mu * mu) + logvar.exp() - logvar - 1.0).sum() * 0.5
    loss = (recon + kl * alpha) * (1.0 / B)
    if not np.isfinite(loss.value):
        raise NumericalError("non-finite VAE loss")
    tape.backward(loss)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in P.items()}
    return float(loss.value), grads, {"recon": float(recon.value) / B, "kl": float(kl.value) / B}


def train_generator(g: GeneratorParams, triples, cfg: GeneratorConfig, rng: np.random.Generator,
                    epochs: int | None = None) -> tuple[GeneratorParams, list[dict]]:
    """Momentum SGD on the annealed objective; returns the trained copy and a per-epoch trace.

    On a non-finite loss the last parameters from a finished epoch are kept
    and :class:`NumericalError` is raised with them attached as ``.params``.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise ValueError("cannot train a generator on no triples")
    epochs = cfg.epochs if epochs is None else epochs
    g = g.copy()
    velocity = {k: np.zeros_like(v) for k, v in g.arrays.items()}
    trace = []
    last_good = g.copy()
    for epoch in range(epochs):
        alpha = anneal_alpha(epoch, cfg.anneal_max, cfg.anneal_slope, cfg.anneal_position)
        order = rng.permutation(len(triples))
        tot = rec = kl = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = triples[order[start:start + cfg.batch_size]]
            eps = rng.standard_normal((len(batch), g.latent_dim))
            try:
                loss, grads, parts = vae_loss(g, batch, alpha, eps)
            except NumericalError as exc:
                exc.params = last_good
                raise
            norm = np.sqrt(sum(float((v * v).sum()) for v in grads.values()))
            scale = min(1.0, cfg.clip_norm / norm) if norm > 0 else 1.0
            for k, v in grads.items():
                velocity[k] = cfg.momentum * velocity[k] - cfg.lr * scale * v
                g.arrays[k] += velocity[k]
            n = len(batch)
            tot += loss * n
            rec += parts["recon"] * n
            kl += parts["kl"] * n
        N = len(triples)
        trace.append({"epoch": epoch, "alpha": alpha, "loss": tot / N, "recon": rec / N, "kl": kl / N})
        last_good = g.copy()
    return g, trace


def save_generator(path, g: GeneratorParams, session: int | None = None) -> None:
    checkpoint.save(path, {"kind": "generator", "num_entities": g.num_entities,
                           "num_relations": g.num_relations, "session": session}, g.arrays)


def load_generator(path) -> GeneratorParams:
    header, arrays = checkpoint.load(path)
    return GeneratorParams(header["num_entities"], header["num_relations"], arrays)
