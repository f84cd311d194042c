"""Walk through one personalized forward pass, piece by piece.

A tiny model reads a two-entity article body for two different readers and
shows how the click history steers the attention weights, the user
embedding and finally the generated headline distribution.
"""

import numpy as np

from fpg.model import FpgModel, ModelConfig
from fpg.text import BOS, TokenSeq, Vocab, encode

words = (
    "barden korvel denfort posted 52 at and crowd of 120 watched the "
    "cup derby beats tops"
).split()
vocab = Vocab(words)
cfg = ModelConfig(vocab_size=len(vocab), d_e=16, n_heads=2, n_blocks=1, T=6, M=14, N=2)
model = FpgModel(cfg, seed=4)

body_text = "Barden and Korvel posted 52 at Denfort . crowd of 120 watched the cup ."
body = encode(body_text, vocab, cfg.M)
print("article body:", body_text)

golf_fan = [encode("Barden beats at Denfort", vocab, cfg.T)]
rally_fan = [encode("Korvel tops at Denfort", vocab, cfg.T)]

for label, history in (("reader who clicks Barden news", golf_fan), ("reader who clicks Korvel news", rally_fan)):
    print(f"\n== {label} ==")
    e_u, keep = model.encode_history(history)
    print("history interest vectors E_u: shape", e_u.shape, "mask", keep)
    x_p, alpha, body_keep = model.encode_news(body, e_u, keep)
    print("alpha (history weights from the first cross-attention block):", np.round(alpha.data, 3))
    u = model.compute_user_embedding(e_u, alpha)
    print("user embedding u = alpha^T E_u, first 4 dims:", np.round(u.data[:4], 3))
    logits = model.decoder_logits((BOS,), x_p, body_keep, u)
    probs = np.exp(logits.data[0] - logits.data[0].max())
    probs /= probs.sum()
    top = np.argsort(-probs)[:3]
    print("first-token distribution (untrained, so nearly uniform):")
    for tok in top:
        print(f"   p({vocab.token_of(int(tok))!r}) = {probs[tok]:.4f}")

print("\n== the same network with the history bypassed is a plain encoder-decoder ==")
plain_out, plain_keep = model.encode_plain(body)
logits = model.decoder_logits((BOS,), plain_out, plain_keep, None)
print("stage-1 configuration logits, first 5:", np.round(logits.data[0, :5], 4))

print("\n== parameters split into the transformer core and the personalization add-ons ==")
print(f"core (xi): {len(model.xi_names)} tensors, e.g. {model.xi_names[:3]}")
print(f"add-ons (theta): {len(model.theta_names)} tensors, e.g. {model.theta_names[:3]}")
