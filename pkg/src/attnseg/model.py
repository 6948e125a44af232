"""CNN sentence encoders, attention-BiLSTM context encoders and the softmax head.

The network reads a window of ``2K+1`` sentences laid out as
``[left context | mid-sentence | right context]`` (see ``text.window_rows``)
and outputs P(mid-sentence begins a segment).
"""

from __future__ import annotations

import numpy as np

from . import nn
from .config import TrainConfig
from .errors import ConfigError, DimensionError, NumericError
from .text import PAD, EncodedDocument, SampleSet, window_rows

# ---------------------------------------------------------------------------
# sentence encoders


def encode_sentence_cnn(emb, filters):
    """Max-pooled ReLU convolution features; ``filters`` is a list of ``(W, b)`` banks.

    ``emb`` is (..., L, d); the result is (..., sum of bank widths).
    """
    feats, caches = [], []
    for W, b in filters:
        fmap, c_conv = nn.conv_rows(emb, W, b, "relu")
        pooled, c_pool = nn.max_over_rows(fmap)
        feats.append(pooled)
        caches.append((c_conv, c_pool, W.shape[2]))
    return np.concatenate(feats, axis=-1), caches


def encode_sentence_cnn_backward(dout, caches):
    demb, grads, start = 0, [], 0
    for c_conv, c_pool, nf in caches:
        dfmap = nn.max_over_rows_backward(dout[..., start:start + nf], c_pool)
        dx, dW, db = nn.conv_rows_backward(dfmap, c_conv)
        demb = demb + dx
        grads.append((dW, db))
        start += nf
    return demb, grads


def encode_sentence_meanbow(emb, ids):
    """Mean of the non-PAD word vectors; an all-PAD sentence maps to zeros."""
    mask = (np.asarray(ids) != PAD).astype(emb.dtype)
    count = np.maximum(mask.sum(axis=-1, keepdims=True), 1)
    return (emb * mask[..., None]).sum(axis=-2) / count, (mask, count)


def encode_sentence_meanbow_backward(dout, cache):
    mask, count = cache
    return (dout / count)[..., None, :] * mask[..., None]


# ---------------------------------------------------------------------------
# attention


def attend(H, W, b, z):
    """Position-biased soft attention over the K rows of ``H`` (..., K, sz).

    score_j = tanh((h_j . W + b_j) * z); alpha = exp-normalised scores;
    v = sum_j alpha_j h_j. ``W`` is (sz, 1), ``b`` is (K, 1), ``z`` is (1,).
    """
    K = H.shape[-2]
    if b.shape != (K, 1):
        raise ConfigError(f"attention bias has {b.shape[0]} positions but the context has K={K}")
    e = (H @ W)[..., 0] + b[:, 0]
    s = np.tanh(e * z[0])
    alpha = nn.softmax(s)
    v = (alpha[..., None] * H).sum(axis=-2)
    return v, alpha, (H, W, z, e, s, alpha)


def attend_backward(dv, cache):
    H, W, z, e, s, alpha = cache
    dH = alpha[..., None] * dv[..., None, :]
    dalpha = (H * dv[..., None, :]).sum(axis=-1)
    ds = alpha * (dalpha - (alpha * dalpha).sum(axis=-1, keepdims=True))
    dpre = ds * (1 - s * s)
    de = dpre * z[0]
    dz = np.array([(dpre * e).sum()], dtype=z.dtype)
    dH += de[..., None] * W[:, 0]
    dW = (H * de[..., None]).reshape(-1, H.shape[-1]).sum(axis=0)[:, None]
    db = de.reshape(-1, de.shape[-1]).sum(axis=0)[:, None]
    return dH, dW, db, dz


# ---------------------------------------------------------------------------
# context encoder


def encode_context(X, layers, input_dropout=0.0, recurrent_dropout=0.0, train=False, rng=None):
    """Stacked BiLSTM over the K sentence vectors of one side; returns the top layer (..., K, 2H)."""
    caches = []
    h = X
    for fwd, bwd in layers:
        h, c = nn.bilstm_run(h, fwd, bwd, input_dropout, recurrent_dropout, train, rng)
        caches.append(c)
    return h, caches


def encode_context_backward(dH, caches):
    grads = []
    for c in reversed(caches):
        dH, gf, gb = nn.bilstm_run_backward(dH, c)
        grads.append((gf, gb))
    return dH, grads[::-1]


# ---------------------------------------------------------------------------
# parameters


def _is_bias(name):
    last = name.rsplit(".", 1)[-1]
    return last == "b" or (last[0] == "b" and last[1:].isdigit())


class ModelParams:
    """All trainable arrays keyed by name, plus the configuration that shaped them."""

    def __init__(self, cfg: TrainConfig, arrays):
        self.cfg = cfg
        self.arrays = arrays

    @property
    def vocab_size(self):
        return self.arrays["embedding"].shape[0]

    def __getitem__(self, name):
        return self.arrays[name]

    def names(self):
        return list(self.arrays)

    def trainable_names(self):
        return [n for n in self.arrays if n != "embedding" or self.cfg.train_embeddings]

    def copy(self):
        return ModelParams(self.cfg, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype):
        return ModelParams(self.cfg, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def with_arrays(self, arrays):
        return ModelParams(self.cfg, arrays)

    def context_prefixes(self):
        return ("ctx",) if self.cfg.tie_context else ("left", "right")

    def cnn_banks(self, prefix):
        return [(self.arrays[f"{prefix}.w{h}"], self.arrays[f"{prefix}.b{h}"]) for h in self.cfg.filter_sizes]

    def lstm_layers(self, prefix):
        layers = []
        for layer in (1, 2):
            cells = []
            for direction in ("fwd", "bwd"):
                p = f"{prefix}.l{layer}.{direction}"
                cells.append(nn.LstmCellParams(self.arrays[p + ".wx"], self.arrays[p + ".wh"], self.arrays[p + ".b"]))
            layers.append(tuple(cells))
        return layers

    @staticmethod
    def shapes(cfg: TrainConfig, vocab_size):
        """Expected name -> shape map for a configuration."""
        d, z, H, K = cfg.emb_dim, cfg.sentence_dim, cfg.hidden, cfg.k
        sz = 2 * H
        shapes = {"embedding": (vocab_size, d)}
        if cfg.encoder == "cnn":
            for enc in ("mid_cnn", "ctx_cnn"):
                for h in cfg.filter_sizes:
                    shapes[f"{enc}.w{h}"] = (h, d, cfg.n_filters)
                    shapes[f"{enc}.b{h}"] = (cfg.n_filters,)
        for prefix in ("ctx",) if cfg.tie_context else ("left", "right"):
            for layer, n_in in ((1, z), (2, sz)):
                for direction in ("fwd", "bwd"):
                    p = f"{prefix}.l{layer}.{direction}"
                    shapes[p + ".wx"] = (n_in, 4 * H)
                    shapes[p + ".wh"] = (H, 4 * H)
                    shapes[p + ".b"] = (4 * H,)
            if cfg.attention:
                shapes[f"{prefix}.attn.w"] = (sz, 1)
                shapes[f"{prefix}.attn.b"] = (K, 1)
                shapes[f"{prefix}.attn.z"] = (1,)
        shapes["head.w1"] = (2 * sz + z, cfg.dense_hidden)
        shapes["head.b1"] = (cfg.dense_hidden,)
        shapes["head.w2"] = (cfg.dense_hidden, 2)
        shapes["head.b2"] = (2,)
        return shapes

    @classmethod
    def init(cls, cfg: TrainConfig, embedding, rng):
        """Uniform(-s, s) weights, zero biases, forget-gate biases at 1."""
        E = embedding.E if hasattr(embedding, "E") else np.asarray(embedding)
        if E.shape[1] != cfg.emb_dim:
            raise ConfigError(f"embedding width {E.shape[1]} != configured emb_dim={cfg.emb_dim}")
        s = cfg.init_scale
        arrays = {}
        for name, shape in cls.shapes(cfg, E.shape[0]).items():
            if name == "embedding":
                arrays[name] = E.astype(np.float32, copy=True)
            elif _is_bias(name):
                arrays[name] = np.zeros(shape, dtype=np.float32)
                if ".l" in name:
                    arrays[name][cfg.hidden:2 * cfg.hidden] = 1.0  # forget gate
            else:
                arrays[name] = rng.uniform(-s, s, shape).astype(np.float32)
        return cls(cfg, arrays)


# ---------------------------------------------------------------------------
# forward / backward over a batch of windows


def _finite(x, stage):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite activation in {stage}")
    return x


def forward(theta: ModelParams, ids, train=False, rng=None):
    """Class probabilities (B, 2) for windows of token ids (B, 2K+1, L)."""
    cfg = theta.cfg
    K = cfg.k
    ids = np.asarray(ids)
    if ids.ndim != 3 or ids.shape[1] != 2 * K + 1:
        raise DimensionError(f"expected windows of shape (B, {2 * K + 1}, L), got {ids.shape}")
    B = ids.shape[0]
    E = theta["embedding"]
    emb = E[ids]  # (B, 2K+1, L, d)
    ctx_ids = np.concatenate([ids[:, :K], ids[:, K + 1:]], axis=1)
    ctx_emb = np.concatenate([emb[:, :K], emb[:, K + 1:]], axis=1)
    mid_emb = emb[:, K]
    cache = {"ids": ids, "emb_shape": emb.shape, "train": train}

    if cfg.encoder == "cnn":
        f_mid, cache["mid_enc"] = encode_sentence_cnn(mid_emb, theta.cnn_banks("mid_cnn"))
        f_ctx, cache["ctx_enc"] = encode_sentence_cnn(ctx_emb, theta.cnn_banks("ctx_cnn"))
    else:
        f_mid, cache["mid_enc"] = encode_sentence_meanbow(mid_emb, ids[:, K])
        f_ctx, cache["ctx_enc"] = encode_sentence_meanbow(ctx_emb, ctx_ids)
    _finite(f_mid, "mid-sentence encoder")
    _finite(f_ctx, "context sentence encoder")

    # sides: left in document order, right mirrored; both end next to the mid-sentence
    if cfg.tie_context:
        groups = [("ctx", np.concatenate([f_ctx[:, :K], f_ctx[:, K:]], axis=0))]
    else:
        groups = [("left", f_ctx[:, :K]), ("right", f_ctx[:, K:])]
    vs, side_caches = [], []
    for prefix, X in groups:
        Htop, c_ctx = encode_context(X, theta.lstm_layers(prefix), cfg.input_dropout,
                                     cfg.recurrent_dropout, train, rng)
        if cfg.attention:
            v, alpha, c_att = attend(Htop, theta[f"{prefix}.attn.w"], theta[f"{prefix}.attn.b"],
                                     theta[f"{prefix}.attn.z"])
        else:
            v, alpha, c_att = Htop[:, -1], None, Htop.shape
        vs.append(v)
        side_caches.append((prefix, c_ctx, c_att, alpha))
    v_all = _finite(np.concatenate(vs, axis=0), "context encoder")
    v_left, v_right = v_all[:B], v_all[B:]
    cache["sides"] = side_caches

    u = np.concatenate([v_left, f_mid, v_right], axis=-1)
    a1, cache["fc1"] = nn.affine(u, theta["head.w1"], theta["head.b1"])
    h1 = nn.activation("relu", a1)
    h1d, cache["drop"] = nn.dropout(h1, cfg.dense_dropout, train, rng)
    logits, cache["fc2"] = nn.affine(h1d, theta["head.w2"], theta["head.b2"])
    probs = _finite(nn.softmax(logits), "output layer")
    cache["h1"] = h1
    cache["sz"] = v_left.shape[-1]
    return probs, cache


def backward(theta: ModelParams, cache, dlogits):
    """Gradients for every trainable array given dLoss/dlogits (B, 2)."""
    cfg = theta.cfg
    K = cfg.k
    B = dlogits.shape[0]
    sz = cache["sz"]
    g = {}
    dh1d, g["head.w2"], g["head.b2"] = nn.affine_backward(dlogits, cache["fc2"])
    dh1 = nn.dropout_backward(dh1d, cache["drop"])
    da1 = nn.activation_backward("relu", cache["h1"], dh1)
    du, g["head.w1"], g["head.b1"] = nn.affine_backward(da1, cache["fc1"])
    dv_left, df_mid, dv_right = du[:, :sz], du[:, sz:-sz], du[:, -sz:]

    dv_all = np.concatenate([dv_left, dv_right], axis=0)
    dX_parts = []
    offset = 0
    for prefix, c_ctx, c_att, _ in cache["sides"]:
        n = B * 2 if prefix == "ctx" else B
        dv = dv_all[offset:offset + n]
        offset += n
        if cfg.attention:
            dH, dW, db, dz = attend_backward(dv, c_att)
            g[f"{prefix}.attn.w"], g[f"{prefix}.attn.b"], g[f"{prefix}.attn.z"] = dW, db, dz
        else:
            dH = np.zeros(c_att, dtype=dv.dtype)
            dH[:, -1] = dv
        dX, layer_grads = encode_context_backward(dH, c_ctx)
        for layer, (gf, gb) in enumerate(layer_grads, 1):
            for direction, grads in (("fwd", gf), ("bwd", gb)):
                p = f"{prefix}.l{layer}.{direction}"
                g[p + ".wx"], g[p + ".wh"], g[p + ".b"] = grads
        dX_parts.append(dX)
    if cfg.tie_context:
        df_ctx = np.concatenate([dX_parts[0][:B], dX_parts[0][B:]], axis=1)
    else:
        df_ctx = np.concatenate(dX_parts, axis=1)

    if cfg.encoder == "cnn":
        dmid, mid_grads = encode_sentence_cnn_backward(df_mid, cache["mid_enc"])
        dctx, ctx_grads = encode_sentence_cnn_backward(df_ctx, cache["ctx_enc"])
        for enc, grads in (("mid_cnn", mid_grads), ("ctx_cnn", ctx_grads)):
            for h, (dW, db) in zip(cfg.filter_sizes, grads):
                g[f"{enc}.w{h}"], g[f"{enc}.b{h}"] = dW, db
    else:
        dmid = encode_sentence_meanbow_backward(df_mid, cache["mid_enc"])
        dctx = encode_sentence_meanbow_backward(df_ctx, cache["ctx_enc"])

    if cfg.train_embeddings:
        ids = cache["ids"]
        demb = np.zeros(cache["emb_shape"], dtype=dlogits.dtype)
        demb[:, K] = dmid
        demb[:, :K] = dctx[:, :K]
        demb[:, K + 1:] = dctx[:, K:]
        dE = np.zeros_like(theta["embedding"])
        np.add.at(dE, ids.reshape(-1), demb.reshape(-1, demb.shape[-1]))
        g["embedding"] = dE  # the PAD row is masked by the optimizer step
    return g


def activation_pattern(cache):
    """Flattened ReLU on/off states and max-pool winners of one forward pass.

    Two parameter settings with equal patterns lie in the same smooth piece
    of the loss, which is what finite differences need.
    """
    parts = [(cache["h1"] > 0).ravel()]
    if isinstance(cache["mid_enc"], list):  # cnn encoder
        for key in ("mid_enc", "ctx_enc"):
            for c_conv, c_pool, _ in cache[key]:
                parts.append((c_conv[2] > 0).ravel())
                parts.append(c_pool[0].ravel())
    return np.concatenate([p.astype(np.int64) for p in parts])


def attention_weights(theta: ModelParams, ids):
    """Inference-mode attention weights ``(alpha_left, alpha_right)``, each (B, K)."""
    if not theta.cfg.attention:
        raise ConfigError("model was built without attention")
    _, cache = forward(theta, ids, train=False)
    B = np.asarray(ids).shape[0]
    alphas = [a for _, _, _, a in cache["sides"]]
    if theta.cfg.tie_context:
        return alphas[0][:B], alphas[0][B:]
    return alphas[0], alphas[1]


# ---------------------------------------------------------------------------
# prediction


def predict_proba(theta: ModelParams, samples: SampleSet, batch_size=256):
    out = np.empty((len(samples), 2), dtype=np.float32)
    for start in range(0, len(samples), batch_size):
        ids, _ = samples.gather(np.arange(start, min(start + batch_size, len(samples))))
        out[start:start + len(ids)], _ = forward(theta, ids, train=False)
    return out


def predict_documents(theta: ModelParams, docs, batch_size=256):
    """Boundary vectors for each encoded document; position 0 is always 1."""
    docs = list(docs)
    samples = SampleSet(docs, theta.cfg.k)
    probs = predict_proba(theta, samples, batch_size) if len(samples) else np.zeros((0, 2))
    labels = probs.argmax(axis=1)
    out, pos = [], 0
    for doc in docs:
        seg = np.zeros(len(doc), dtype=np.int8)
        seg[0] = 1
        seg[1:] = labels[pos:pos + len(doc) - 1]
        pos += len(doc) - 1
        out.append(seg)
    return out


def predict_document(doc: EncodedDocument, theta: ModelParams):
    return predict_documents(theta, [doc])[0]


def window_ids(doc: EncodedDocument, i, K):
    """Token ids (2K+1, L) of one window, in the layout ``forward`` expects."""
    padded = np.vstack([doc.ids, np.zeros((1, doc.ids.shape[1]), dtype=doc.ids.dtype)])
    return padded[window_rows(len(doc), i, K)]
