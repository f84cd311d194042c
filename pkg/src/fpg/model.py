"""The personalized headline generation network.

Three pieces sit on top of a standard pre-norm transformer encoder-decoder:

* a history encoder turning each clicked headline into one interest vector
  (GRU, CNN or self-attention sequence layer + additive attention pooling),
* a history-cross attention sub-layer inside every encoder block, where
  body tokens attend over the per-click interest vectors,
* a user embedding (the interest vectors weighted by the first block's
  history-cross attention) that replaces the BOS embedding at decoding.

Parameters are partitioned into the transformer core ("xi") and the
personalization add-ons ("theta"); the training schedule freezes one side
at a time.  With ``use_history=False`` the cross sub-layers are bypassed
and the true BOS embedding is used, which reduces the network to a plain
encoder-decoder.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .text import BOS, TokenSeq

_MAGIC = b"FPGT01\n"

HISTORY_ENCODER_KINDS = ("gru", "cnn", "sa")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_e: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    T: int = 16
    M: int = 64
    N: int = 8
    history_encoder: str = "gru"
    ffn_mult: int = 4

    def __post_init__(self):
        if self.d_e % self.n_heads != 0:
            raise ValueError("d_e must be divisible by n_heads")
        if min(self.T, self.M, self.N, self.n_blocks, self.vocab_size) < 1:
            raise ValueError("all model dimensions must be at least 1")
        if self.history_encoder not in HISTORY_ENCODER_KINDS:
            raise ValueError(f"unknown history encoder {self.history_encoder!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class EncodedState:
    """Everything the decoder needs for one (body, history) pair."""

    X_p_enc: Tensor  # [M, d_e] history-aware body representation
    u: Tensor  # [d_e] fact-aware user embedding
    alpha: Tensor  # [N] history weights from the first block's cross attention
    E_u: Tensor  # [N, d_e] per-click interest vectors
    body_keep: np.ndarray
    hist_keep: np.ndarray


def _attention_names(prefix: str) -> list[str]:
    return [f"{prefix}.{w}" for w in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")]


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Seeded parameter set; matrices ~ N(0, 0.02), biases zero, gains one."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def mat(name, *shape):
        params[name] = Tensor(rng.normal(0.0, 0.02, shape), requires_grad=True)

    def vec(name, size, value=0.0):
        params[name] = Tensor(np.full(size, value), requires_grad=True)

    def attention(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            mat(f"{prefix}.{w}", config.d_e, config.d_e)
        for b in ("bq", "bk", "bv", "bo"):
            vec(f"{prefix}.{b}", config.d_e)

    def lnorm(prefix):
        vec(f"{prefix}.g", config.d_e, 1.0)
        vec(f"{prefix}.b", config.d_e)

    def ffn(prefix):
        width = config.ffn_mult * config.d_e
        mat(f"{prefix}.w1", config.d_e, width)
        vec(f"{prefix}.b1", width)
        mat(f"{prefix}.w2", width, config.d_e)
        vec(f"{prefix}.b2", config.d_e)

    mat("tok_emb", config.vocab_size, config.d_e)
    mat("pos_enc", config.M, config.d_e)
    mat("pos_dec", config.T, config.d_e)
    for i in range(config.n_blocks):
        lnorm(f"enc{i}.ln1")
        attention(f"enc{i}.self")
        lnorm(f"enc{i}.ln_h")
        attention(f"enc{i}.hcross")
        lnorm(f"enc{i}.ln2")
        ffn(f"enc{i}.ffn")
    lnorm("enc.lnf")
    for i in range(config.n_blocks):
        lnorm(f"dec{i}.ln1")
        attention(f"dec{i}.self")
        lnorm(f"dec{i}.ln2")
        attention(f"dec{i}.cross")
        lnorm(f"dec{i}.ln3")
        ffn(f"dec{i}.ffn")
    lnorm("dec.lnf")
    mat("out.w", config.d_e, config.vocab_size)
    vec("out.b", config.vocab_size)

    if config.history_encoder == "gru":
        for g in ("z", "r", "h"):
            mat(f"hist.gru.w{g}", config.d_e, config.d_e)
            mat(f"hist.gru.u{g}", config.d_e, config.d_e)
            vec(f"hist.gru.b{g}", config.d_e)
    elif config.history_encoder == "cnn":
        mat("hist.cnn.w", 3 * config.d_e, config.d_e)
        vec("hist.cnn.b", config.d_e)
    else:
        attention("hist.sa")
    mat("hist.att.va", config.d_e, config.d_e)
    vec("hist.att.ba", config.d_e)
    return params


def is_theta(name: str) -> bool:
    """Personalization add-on parameters (frozen/trained separately)."""
    return name.startswith("hist.") or ".hcross." in name or ".ln_h." in name


class FpgModel:
    def __init__(self, config: ModelConfig, seed: int = 0, params=None):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    # -- parameter partition ------------------------------------------------

    @property
    def theta_names(self) -> list[str]:
        return sorted(n for n in self.params if is_theta(n))

    @property
    def xi_names(self) -> list[str]:
        return sorted(n for n in self.params if not is_theta(n))

    def subset(self, which: str) -> dict[str, Tensor]:
        if which == "xi":
            names = self.xi_names
        elif which == "theta":
            names = self.theta_names
        elif which == "both":
            names = sorted(self.params)
        else:
            raise ValueError(f"unknown parameter subset {which!r}")
        return {n: self.params[n] for n in names}

    # -- building blocks ----------------------------------------------------

    def _linear(self, x, w, b):
        return T.add(T.matmul(x, self.params[w]), self.params[b])

    def _ln(self, prefix, x):
        return T.layer_norm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"])

    def _ffn(self, prefix, x):
        h = T.relu(self._linear(x, f"{prefix}.w1", f"{prefix}.b1"))
        return self._linear(h, f"{prefix}.w2", f"{prefix}.b2")

    def _attention(self, prefix, q_in, kv_in, keep=None, causal=False, scale=None, trace=None):
        """Multi-head scaled dot-product attention.

        ``keep`` holds key keep-flags; ``causal`` restricts each query to
        earlier keys.  Returns (output [Lq, d_e], probs [H, Lq, Lk]).
        """
        cfg = self.config
        d_k = cfg.d_e // cfg.n_heads
        lq, lk = q_in.shape[0], kv_in.shape[0]
        if scale is None:
            scale = 1.0 / np.sqrt(d_k)

        def heads(x, length):
            return T.transpose(T.reshape(x, (length, cfg.n_heads, d_k)), (1, 0, 2))

        q = heads(self._linear(q_in, f"{prefix}.wq", f"{prefix}.bq"), lq)
        k = heads(self._linear(kv_in, f"{prefix}.wk", f"{prefix}.bk"), lk)
        v = heads(self._linear(kv_in, f"{prefix}.wv", f"{prefix}.bv"), lk)
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 2, 1))), scale)

        mask = None
        if causal:
            mask = np.tril(np.ones((lq, lk), dtype=bool))
        if keep is not None:
            key_mask = np.broadcast_to(np.asarray(keep, bool), (lq, lk))
            mask = key_mask if mask is None else (mask & key_mask)
        probs = T.softmax_masked(scores, mask)
        if trace is not None:
            trace.append((prefix, probs.data.copy(), mask))

        mixed = T.transpose(T.matmul(probs, v), (1, 0, 2))
        out = self._linear(T.reshape(mixed, (lq, cfg.d_e)), f"{prefix}.wo", f"{prefix}.bo")
        return out, probs

    # -- history encoder ----------------------------------------------------

    def _sequence_layer(self, emb, keep, trace=None) -> Tensor:
        """Per-token hidden states for one clicked headline ([T, d_e])."""
        cfg = self.config
        kind = cfg.history_encoder
        if kind == "gru":
            gru = {k.rsplit(".", 1)[1]: v for k, v in self.params.items() if k.startswith("hist.gru.")}
            h = Tensor(np.zeros(cfg.d_e))
            states = []
            for t in range(cfg.T):
                h = T.gru_cell(T.getitem(emb, t), h, gru)
                states.append(h)
            return T.stack(states)
        if kind == "cnn":
            zero = Tensor(np.zeros((1, cfg.d_e)))
            left = T.concat([zero, T.getitem(emb, slice(0, cfg.T - 1))], axis=0)
            right = T.concat([T.getitem(emb, slice(1, cfg.T)), zero], axis=0)
            window = T.concat([left, emb, right], axis=1)
            return T.tanh(self._linear(window, "hist.cnn.w", "hist.cnn.b"))
        out, _ = self._attention("hist.sa", emb, emb, keep=keep, trace=trace)
        return out

    def encode_history(self, history, trace=None) -> tuple[Tensor, np.ndarray]:
        """Interest vectors for up to N clicked headlines.

        Rows for absent history slots are zero and masked downstream.
        """
        cfg = self.config
        if not history:
            raise ValueError("history required (the no-history ablation bypasses this encoder)")
        if len(history) > cfg.N:
            raise ValueError(f"history longer than N={cfg.N}")
        rows = []
        for item in history:
            if len(item.ids) != cfg.T:
                raise ValueError("history headlines must be padded to T")
            emb = T.gather(self.params["tok_emb"], item.ids)
            states = self._sequence_layer(emb, item.keep_mask, trace=trace)
            scored = T.tanh(
                T.add(T.matmul(states, T.transpose(self.params["hist.att.va"])), self.params["hist.att.ba"])
            )
            logits = T.sum_(T.mul(states, scored), axis=1)
            weights = T.softmax_masked(logits, item.keep_mask)
            if trace is not None:
                trace.append(("hist.att", weights.data.copy(), item.keep_mask))
            rows.append(T.matmul(weights, states))
        for _ in range(cfg.N - len(history)):
            rows.append(Tensor(np.zeros(cfg.d_e)))
        hist_keep = np.arange(cfg.N) < len(history)
        return T.stack(rows), hist_keep

    # -- personalized news encoder -------------------------------------------

    def encode_news(self, body: TokenSeq, E_u, hist_keep, trace=None):
        """History-aware body representation plus the history weights taken
        from the first block's cross attention."""
        cfg = self.config
        if not hist_keep.any():
            raise ValueError("cannot cross-attend over an all-masked history")
        if len(body.ids) != cfg.M:
            raise ValueError("body must be padded to M")
        body_keep = body.keep_mask
        x = T.add(T.gather(self.params["tok_emb"], body.ids), self.params["pos_enc"])
        alpha = None
        for i in range(cfg.n_blocks):
            normed = self._ln(f"enc{i}.ln1", x)
            attn, _ = self._attention(f"enc{i}.self", normed, normed, keep=body_keep, trace=trace)
            x = T.add(x, attn)
            cross, probs = self._attention(
                f"enc{i}.hcross",
                self._ln(f"enc{i}.ln_h", x),
                E_u,
                keep=hist_keep,
                scale=1.0 / np.sqrt(cfg.d_e),
                trace=trace,
            )
            x = T.add(x, cross)
            if i == 0:
                head_mean = T.mean(probs, axis=0)  # [M, N]
                w = body_keep.astype(float) / body_keep.sum()
                alpha = T.reshape(T.matmul(Tensor(w[None, :]), head_mean), (cfg.N,))
            x = T.add(x, self._ffn(f"enc{i}.ffn", self._ln(f"enc{i}.ln2", x)))
        return self._ln("enc.lnf", x), alpha, body_keep

    @staticmethod
    def compute_user_embedding(E_u, alpha) -> Tensor:
        """u = sum_j alpha_j * e_j (exactly; no renormalization)."""
        n = alpha.shape[0]
        return T.reshape(T.matmul(T.reshape(alpha, (1, n)), E_u), (E_u.shape[1],))

    def encode(self, body: TokenSeq, history, trace=None) -> EncodedState:
        E_u, hist_keep = self.encode_history(history, trace=trace)
        X_p_enc, alpha, body_keep = self.encode_news(body, E_u, hist_keep, trace=trace)
        u = self.compute_user_embedding(E_u, alpha)
        return EncodedState(X_p_enc, u, alpha, E_u, body_keep, hist_keep)

    def encode_plain(self, body: TokenSeq, trace=None):
        """Encoder with the history-cross sub-layers bypassed."""
        cfg = self.config
        if len(body.ids) != cfg.M:
            raise ValueError("body must be padded to M")
        body_keep = body.keep_mask
        x = T.add(T.gather(self.params["tok_emb"], body.ids), self.params["pos_enc"])
        for i in range(cfg.n_blocks):
            normed = self._ln(f"enc{i}.ln1", x)
            attn, _ = self._attention(f"enc{i}.self", normed, normed, keep=body_keep, trace=trace)
            x = T.add(x, attn)
            x = T.add(x, self._ffn(f"enc{i}.ffn", self._ln(f"enc{i}.ln2", x)))
        return self._ln("enc.lnf", x), body_keep

    # -- user-guided decoder --------------------------------------------------

    def decoder_logits(self, prefix_ids, enc_out, body_keep, u=None, trace=None) -> Tensor:
        """Logits [t, vocab] for a BOS-led prefix of t ids.

        With ``u`` given, position 0's token embedding is replaced by the
        user embedding (the positional embedding is still added).
        """
        cfg = self.config
        t = len(prefix_ids)
        if t > cfg.T:
            raise ValueError(f"prefix longer than T={cfg.T}")
        if t == 0 or prefix_ids[0] != BOS:
            raise ValueError("prefix must begin with the BOS slot")
        emb = T.gather(self.params["tok_emb"], prefix_ids)
        if u is not None:
            u_row = T.reshape(u, (1, cfg.d_e))
            emb = T.concat([u_row, T.getitem(emb, slice(1, t))], axis=0) if t > 1 else u_row
        y = T.add(emb, T.getitem(self.params["pos_dec"], slice(0, t)))
        for i in range(cfg.n_blocks):
            normed = self._ln(f"dec{i}.ln1", y)
            attn, _ = self._attention(f"dec{i}.self", normed, normed, causal=True, trace=trace)
            y = T.add(y, attn)
            cross, _ = self._attention(f"dec{i}.cross", self._ln(f"dec{i}.ln2", y), enc_out, keep=body_keep, trace=trace)
            y = T.add(y, cross)
            y = T.add(y, self._ffn(f"dec{i}.ffn", self._ln(f"dec{i}.ln3", y)))
        y = self._ln("dec.lnf", y)
        return self._linear(y, "out.w", "out.b")

    def forward(self, body, history, prefix_ids, use_history: bool = True, trace=None) -> Tensor:
        """Next-token logits for every position of a teacher-forced prefix."""
        if use_history:
            state = self.encode(body, history, trace=trace)
            return self.decoder_logits(prefix_ids, state.X_p_enc, state.body_keep, state.u, trace=trace)
        enc_out, body_keep = self.encode_plain(body, trace=trace)
        return self.decoder_logits(prefix_ids, enc_out, body_keep, None, trace=trace)

    # -- losses ---------------------------------------------------------------

    @staticmethod
    def prefix_for(target: TokenSeq) -> tuple[int, ...]:
        if target.true_length == 0:
            raise ValueError("all-PAD target")
        return (BOS,) + target.ids[: target.true_length - 1]

    @staticmethod
    def loss_nll(logits: Tensor, target: TokenSeq) -> Tensor:
        """Mean negative log-likelihood over the target's real tokens."""
        t = target.true_length
        if t == 0:
            raise ValueError("all-PAD target")
        if logits.shape[0] != t:
            raise ValueError("logits rows must match the target's true length")
        return T.mean(T.cross_entropy_from_logits(logits, target.ids[:t]))

    @staticmethod
    def loss_contrastive(logits_pos, target_pos, logits_neg, target_neg, eps: float = 1e-12) -> Tensor:
        """Push positive-token probabilities up and negative-token ones down.

        Token-level and length-normalized:
        L = -mean_t log p(y+_t) - mean_t log(1 - p(y-_t)), p clamped away
        from {0, 1}.
        """
        pos = FpgModel.loss_nll(logits_pos, target_pos)
        tn = target_neg.true_length
        if tn == 0:
            raise ValueError("all-PAD target")
        if logits_neg.shape[0] != tn:
            raise ValueError("logits rows must match the target's true length")
        probs = T.softmax_masked(logits_neg)
        p_neg = T.clip(T.pick(probs, target_neg.ids[:tn]), eps, 1.0 - eps)
        return T.sub(pos, T.mean(T.log(T.sub(1.0, p_neg))))

    def nll_for(self, body, history, target, use_history=True) -> Tensor:
        logits = self.forward(body, history, self.prefix_for(target), use_history)
        return self.loss_nll(logits, target)

    def cll_for(self, body, history, positive, negative, use_history=True) -> Tensor:
        if use_history:
            state = self.encode(body, history)
            enc_out, keep, u = state.X_p_enc, state.body_keep, state.u
        else:
            enc_out, keep = self.encode_plain(body)
            u = None
        lp = self.decoder_logits(self.prefix_for(positive), enc_out, keep, u)
        ln = self.decoder_logits(self.prefix_for(negative), enc_out, keep, u)
        return self.loss_contrastive(lp, positive, ln, negative)

    # -- persistence ------------------------------------------------------------

    def save(self, path) -> None:
        names = sorted(self.params)
        arrays = {n: self.params[n].data for n in names}
        meta = {"partition": {n: ("theta" if is_theta(n) else "xi") for n in names}}
        write_container(path, self.config.to_dict(), arrays, meta)

    @classmethod
    def load(cls, path, config: ModelConfig | None = None) -> "FpgModel":
        stored, arrays, _ = read_container(path)
        loaded = ModelConfig.from_dict(stored)
        if config is not None and config != loaded:
            raise ValueError(f"config mismatch: file has {loaded}, expected {config}")
        params = {n: Tensor(a, requires_grad=True) for n, a in arrays.items()}
        return cls(loaded, params=params)


# ---------------------------------------------------------------------------
# self-describing parameter container (little-endian float64 payload)
# ---------------------------------------------------------------------------


def write_container(path, config_dict: dict, arrays: dict[str, np.ndarray], meta: dict) -> None:
    names = sorted(arrays)
    header = {
        "config": config_dict,
        "meta": meta,
        "tensors": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def read_container(path):
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a parameter container")
        (size,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(size).decode("utf-8"))
        arrays = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            buf = fh.read(int(np.prod(shape, dtype=np.int64)) * 8)
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return header["config"], arrays, header.get("meta", {})
