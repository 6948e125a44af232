"""Finite-difference gradient checks for every layer and for the full model.

Everything runs in float64 at a tiny configuration. Backward functions are
looked up through their modules at call time, so a patched backward is what
gets checked.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import model, nn, training
from .config import TrainConfig

THRESHOLD = 5e-3

# built-in toy configuration for the check
TOY = TrainConfig(emb_dim=8, max_len=5, k=2, filter_sizes=(2, 3), n_filters=4, hidden=6, dense_hidden=8,
                  train_embeddings=True, init_scale=0.5)
TOY_VOCAB = 12
TOY_BATCH = 3


@dataclass
class CheckRow:
    name: str
    error: float
    skipped: int = 0

    def passed(self, threshold=THRESHOLD):
        return bool(np.isfinite(self.error)) and self.error < threshold


@dataclass
class GradcheckReport:
    rows: list = field(default_factory=list)
    threshold: float = THRESHOLD
    seconds: float = 0.0

    @property
    def passed(self):
        return all(r.passed(self.threshold) for r in self.rows)

    def failures(self):
        return [r.name for r in self.rows if not r.passed(self.threshold)]

    @property
    def max_error(self):
        return max((r.error for r in self.rows), default=0.0)

    def to_tsv(self):
        lines = ["check\tmax_rel_err\tskipped\tstatus"]
        for r in self.rows:
            lines.append(f"{r.name}\t{r.error:.3e}\t{r.skipped}\t{'ok' if r.passed(self.threshold) else 'FAIL'}")
        return "\n".join(lines) + "\n"


def _check(name, loss_and_grad, params, rng, pattern=None, max_coords=20):
    stats = {}
    errs = nn.grad_check_params(loss_and_grad, params, delta=1e-3, max_coords=max_coords, rng=rng,
                                pattern=pattern, stats=stats)
    return CheckRow(name, max(errs.values()), stats.get("skipped", 0))


def _projection(rng, shape):
    # a fixed random readout turns any layer output into a scalar loss
    return rng.normal(size=shape)


# ---------------------------------------------------------------------------
# individual layers


def check_conv(rng):
    p = {"x": rng.normal(size=(2, 5, 3)), "w": rng.normal(size=(3, 3, 4)), "b": rng.normal(size=4)}
    R = _projection(rng, (2, 5, 4))

    def run(q):
        return nn.conv_rows(q["x"], q["w"], q["b"], "relu")

    def lg(q):
        y, c = run(q)
        dx, dw, db = nn.conv_rows_backward(R, c)
        return float((y * R).sum()), {"x": dx, "w": dw, "b": db}

    return _check("conv", lg, p, rng, pattern=lambda q: run(q)[0] > 0)


def check_pooling(rng):
    p = {"f": rng.normal(size=(2, 5, 4))}
    R = _projection(rng, (2, 4))

    def lg(q):
        y, c = nn.max_over_rows(q["f"])
        return float((y * R).sum()), {"f": nn.max_over_rows_backward(R, c)}

    return _check("pooling", lg, p, rng, pattern=lambda q: nn.max_over_rows(q["f"])[1][0])


def check_lstm_cell(rng):
    H, n_in = 6, 4
    p = {"x": rng.normal(size=(3, n_in)), "h": rng.normal(size=(3, H)), "c": rng.normal(size=(3, H)),
         "wx": rng.uniform(-0.5, 0.5, (n_in, 4 * H)), "wh": rng.uniform(-0.5, 0.5, (H, 4 * H)),
         "b": rng.uniform(-0.5, 0.5, 4 * H)}
    Rh, Rc = _projection(rng, (3, H)), _projection(rng, (3, H))

    def lg(q):
        h, c, cache = nn.lstm_step(q["x"], q["h"], q["c"], nn.LstmCellParams(q["wx"], q["wh"], q["b"]))
        dx, dh, dc, (dwx, dwh, db) = nn.lstm_step_backward(Rh, Rc, cache)
        return float((h * Rh).sum() + (c * Rc).sum()), {"x": dx, "h": dh, "c": dc, "wx": dwx, "wh": dwh, "b": db}

    return _check("lstm_cell", lg, p, rng)


def check_bilstm(rng):
    H, n_in, K = 6, 4, 3
    p = {"x": rng.normal(size=(2, K, n_in))}
    for layer, width in ((1, n_in), (2, 2 * H)):
        for d in ("fwd", "bwd"):
            p[f"l{layer}.{d}.wx"] = rng.uniform(-0.5, 0.5, (width, 4 * H))
            p[f"l{layer}.{d}.wh"] = rng.uniform(-0.5, 0.5, (H, 4 * H))
            p[f"l{layer}.{d}.b"] = rng.uniform(-0.5, 0.5, 4 * H)
    R = _projection(rng, (2, K, 2 * H))

    def lg(q):
        layers = [tuple(nn.LstmCellParams(q[f"l{i}.{d}.wx"], q[f"l{i}.{d}.wh"], q[f"l{i}.{d}.b"])
                        for d in ("fwd", "bwd")) for i in (1, 2)]
        out, caches = model.encode_context(q["x"], layers)
        dx, grads = model.encode_context_backward(R, caches)
        g = {"x": dx}
        for i, (gf, gb) in enumerate(grads, 1):
            for d, gd in (("fwd", gf), ("bwd", gb)):
                g[f"l{i}.{d}.wx"], g[f"l{i}.{d}.wh"], g[f"l{i}.{d}.b"] = gd
        return float((out * R).sum()), g

    return _check("bilstm", lg, p, rng)


def check_attention(rng):
    K, sz = 3, 5
    p = {"H": rng.normal(size=(2, K, sz)), "w": rng.normal(size=(sz, 1)), "b": rng.normal(size=(K, 1)),
         "z": rng.normal(size=1)}
    R = _projection(rng, (2, sz))

    def lg(q):
        v, _, c = model.attend(q["H"], q["w"], q["b"], q["z"])
        dH, dw, db, dz = model.attend_backward(R, c)
        return float((v * R).sum()), {"H": dH, "w": dw, "b": db, "z": dz}

    return _check("attention", lg, p, rng)


def check_dense_head(rng):
    # moderate weights keep o away from the log clamp, where the loss is flat
    p = {"u": rng.normal(size=(4, 6)), "w1": rng.uniform(-0.5, 0.5, (6, 8)), "b1": rng.uniform(-0.5, 0.5, 8),
         "w2": rng.uniform(-0.5, 0.5, (8, 2)), "b2": rng.uniform(-0.5, 0.5, 2)}
    t = np.array([1, 0, 1, 0])

    def run(q):
        a1, c1 = nn.affine(q["u"], q["w1"], q["b1"])
        h1 = nn.activation("relu", a1)
        logits, c2 = nn.affine(h1, q["w2"], q["b2"])
        return nn.softmax(logits), h1, c1, c2

    def lg(q):
        P, h1, c1, c2 = run(q)
        loss, dlogits = training.weighted_bce(P, t, 0.5)
        dh1, dw2, db2 = nn.affine_backward(dlogits, c2)
        da1 = nn.activation_backward("relu", h1, dh1)
        du, dw1, db1 = nn.affine_backward(da1, c1)
        return loss, {"u": du, "w1": dw1, "b1": db1, "w2": dw2, "b2": db2}

    return _check("dense_head", lg, p, rng, pattern=lambda q: run(q)[1] > 0)


def check_weighted_loss(rng):
    p = {"logits": rng.normal(size=(6, 2))}
    t = np.array([1, 0, 0, 1, 0, 0])

    def lg(q):
        loss, dlogits = training.weighted_bce(nn.softmax(q["logits"]), t, 0.3)
        return loss, {"logits": dlogits}

    return _check("weighted_loss", lg, p, rng)


LAYER_CHECKS = (check_conv, check_pooling, check_lstm_cell, check_bilstm, check_attention, check_dense_head,
                check_weighted_loss)


# ---------------------------------------------------------------------------
# full model


def toy_problem(cfg: TrainConfig = TOY, seed=0):
    """Random float64 parameters, windows and labels at ``cfg``'s shapes."""
    rng = np.random.default_rng(seed)
    E = rng.uniform(-1, 1, (TOY_VOCAB, cfg.emb_dim))
    E[0] = 0.0
    theta = model.ModelParams.init(cfg, E, rng).astype(np.float64)
    for name in theta.names():
        if model._is_bias(name):
            # nonzero biases so every gradient path carries signal
            theta.arrays[name] += rng.uniform(-0.3, 0.3, theta[name].shape)
    ids = rng.integers(0, TOY_VOCAB, (TOY_BATCH, 2 * cfg.k + 1, cfg.max_len))
    ids[:, :, -1] = 0  # some padding
    labels = np.array([1, 0, 0][:TOY_BATCH])
    return theta, ids, labels


def check_model(rng, cfg: TrainConfig = TOY, max_coords=20):
    """One row per parameter array of the full model under the weighted loss."""
    theta, ids, labels = toy_problem(cfg)

    def lg(arrays):
        th = theta.with_arrays(arrays)
        P, cache = model.forward(th, ids, train=False)
        loss, dlogits = training.weighted_bce(P, labels, 0.5)
        return loss, model.backward(th, cache, dlogits)

    def pattern(arrays):
        return model.activation_pattern(model.forward(theta.with_arrays(arrays), ids, train=False)[1])

    rows = []
    for name in theta.names():
        row = _check(f"model:{name}", lambda q, n=name: _restrict(lg, theta.arrays, n, q),
                     {name: theta[name]}, rng, pattern=lambda q, n=name: pattern({**theta.arrays, **q}),
                     max_coords=max_coords)
        rows.append(row)
    return rows


def _restrict(lg, base, name, q):
    loss, grads = lg({**base, **q})
    return loss, {name: grads[name]}


def run_gradcheck(threshold=THRESHOLD, seed=0, max_coords=20):
    """All layer checks followed by the full-model check; returns a report."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    report = GradcheckReport(threshold=threshold)
    for check in LAYER_CHECKS:
        report.rows.append(check(rng))
    report.rows.extend(check_model(rng, max_coords=max_coords))
    report.seconds = time.perf_counter() - t0
    return report
