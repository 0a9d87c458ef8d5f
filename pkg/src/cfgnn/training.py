"""SINR-space loss, Adam, and the deterministic training loop.

The network is trained to minimise the mean square error of the per-user
SINR, not of the powers: predictions are denormalized (eta = 2^(x*std+mean),
no projection by default) and pushed through the exact SINR expression, and
the gradient is propagated back through that whole chain by hand.  The
derivative of the SINR numerator would blow up as eta -> 0 if written
naively; fusing it with the 2^x factor gives the stable form

    dL/dx[m,k] = ln(2) * (0.5 * dN_k * sqrt(alpha*eta)[m,k]
                          + eta[m,k] * rho_d * (beta @ dD)[m])

where dN and dD are the loss gradients with respect to the beamforming sum
and the denominator.

Everything is reproducible: batch composition depends only on (seed, epoch),
so training can resume from any epoch checkpoint bit-identically, and all
arithmetic runs in fixed order.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .channel import RadioDefaults
from .data import NormStats, Sample, compute_norm_stats, normalize_input
from .engine import backward, forward
from .graph import build_graph
from .model import GnnModel, LayerPlan, init_model, load_checkpoint, save_checkpoint

LN2 = math.log(2.0)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 7e-4
    batch_size: int = 64
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.1
    loss_on_projected: bool = False
    weight_decay: float = 0.0
    grad_clip: float | None = None
    keep_epoch_checkpoints: bool = True

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")

    def fingerprint(self) -> dict:
        return asdict(self)


def sinr_mse_loss(sinr_opt: np.ndarray, sinr_pred: np.ndarray) -> float:
    """(1/K) sum_k (SINR_k - SINR'_k)^2, averaged over any batch axis."""
    sinr_opt = np.asarray(sinr_opt, dtype=float)
    sinr_pred = np.asarray(sinr_pred, dtype=float)
    if sinr_opt.shape != sinr_pred.shape:
        raise ValueError(f"shape mismatch {sinr_opt.shape} vs {sinr_pred.shape}")
    per_sample = np.mean((sinr_opt - sinr_pred) ** 2, axis=-1)
    return float(np.mean(per_sample))


def _sinr_batch(beta: np.ndarray, alpha: np.ndarray, eta: np.ndarray,
                rho_d: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched SINR plus the intermediates needed by the backward pass."""
    gain = np.sqrt(alpha * eta).sum(axis=1)                    # (S, K)
    load = eta.sum(axis=2)                                     # (S, M)
    den = 1.0 + rho_d * np.einsum("smk,sm->sk", beta, load)    # (S, K)
    sinr = rho_d * gain * gain / den
    return sinr, gain, den


def loss_and_grads(model: GnnModel, batch_x: np.ndarray, batch_beta: np.ndarray,
                   batch_alpha: np.ndarray, batch_sinr_opt: np.ndarray,
                   rho_d: float, loss_on_projected: bool = False
                   ) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Loss, parameter gradients and predicted SINRs for one batch.

    batch_x: normalized inputs (S, M, K); batch_beta/alpha: (S, M, K);
    batch_sinr_opt: (S, K).
    """
    s, m, k = batch_x.shape
    graph = build_graph(m, k)
    y, tape = forward(graph, batch_x, model, want_tape=True)
    norm = model.norm
    xhat = y * norm.out_std + norm.out_mean
    eta = np.exp2(xhat)

    if loss_on_projected:
        sums = eta.sum(axis=-1)                                # (S, M)
        over = sums > 1.0
        scale = np.where(over, 1.0 / np.maximum(sums, 1e-300), 1.0)
        eta_used = eta * scale[..., None]
    else:
        eta_used = eta

    sinr, gain, den = _sinr_batch(batch_beta, batch_alpha, eta_used, rho_d)
    loss = sinr_mse_loss(batch_sinr_opt, sinr)

    dpred = 2.0 * (sinr - batch_sinr_opt) / (s * k)            # (S, K)
    dgain = dpred * 2.0 * rho_d * gain / den                   # (S, K)
    dden = -dpred * rho_d * gain * gain / (den * den)          # (S, K)
    # d eta (stable: fused with the 2^x factor only at the end)
    root = np.sqrt(batch_alpha * eta_used)                     # (S, M, K)
    deta = (0.5 * dgain[:, None, :] * root / np.maximum(eta_used, 1e-300)
            + rho_d * np.einsum("smk,sk->sm", batch_beta, dden)[:, :, None])
    if loss_on_projected:
        # eta_used = eta * scale(sum(eta)); backward through the row scaling.
        dscale = (deta * eta).sum(axis=-1)                     # (S, M)
        dsums = np.where(over, -dscale / (sums * sums), 0.0)
        deta = deta * scale[..., None] + dsums[..., None]
    dxhat = LN2 * eta * deta
    dy = dxhat * norm.out_std
    grads = backward(model, tape, dy)
    return loss, grads, sinr


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_adam(model: GnnModel) -> AdamState:
    return AdamState(m={n: np.zeros_like(p) for n, p in model.params.items()},
                     v={n: np.zeros_like(p) for n, p in model.params.items()},
                     t=0)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, cfg: TrainConfig
              ) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update with bias correction; mutates params/state in place."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    if cfg.grad_clip is not None:
        norm2 = 0.0
        for g in grads.values():
            norm2 += float(np.sum(g * g))
        scale = min(1.0, cfg.grad_clip / max(math.sqrt(norm2), 1e-300))
    else:
        scale = 1.0
    for name, p in params.items():
        g = grads[name] * scale
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params, state


def split_train_val(samples: list[Sample], cfg: TrainConfig
                    ) -> tuple[list[Sample], list[Sample]]:
    """Seeded 90/10 split, stratified per (M, K, morphology) scenario."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 500)))
    groups: dict[tuple, list[int]] = {}
    for i, sample in enumerate(samples):
        groups.setdefault((sample.num_aps, sample.num_ues,
                           sample.morphology), []).append(i)
    train_idx, val_idx = [], []
    for key in sorted(groups):
        idx = np.array(groups[key])
        perm = rng.permutation(len(idx))
        n_val = max(1, int(round(len(idx) * cfg.val_fraction))) \
            if len(idx) > 1 and cfg.val_fraction > 0 else 0
        val_idx.extend(idx[perm[:n_val]].tolist())
        train_idx.extend(idx[perm[n_val:]].tolist())
    train_idx.sort()
    val_idx.sort()
    return [samples[i] for i in train_idx], [samples[i] for i in val_idx]


@dataclass
class _Bucket:
    num_aps: int
    num_ues: int
    x: np.ndarray          # (n, M, K) normalized inputs
    beta: np.ndarray
    alpha: np.ndarray
    sinr_opt: np.ndarray   # (n, K)


def _make_buckets(samples: list[Sample], stats: NormStats,
                  radio: RadioDefaults) -> list[_Bucket]:
    from .sinr import compute_alpha
    rho_u = radio.rho_u()
    order: list[tuple[int, int]] = []
    grouped: dict[tuple[int, int], list[Sample]] = {}
    for sample in samples:
        key = (sample.num_aps, sample.num_ues)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(sample)
    buckets = []
    for key in order:
        members = grouped[key]
        beta = np.stack([s.beta for s in members])
        alpha = np.stack([compute_alpha(s.beta, rho_u, s.num_ues)
                          for s in members])
        x = np.stack([normalize_input(s.beta, stats) for s in members])
        sinr = np.stack([s.sinr_opt for s in members])
        buckets.append(_Bucket(num_aps=key[0], num_ues=key[1], x=x,
                               beta=beta, alpha=alpha, sinr_opt=sinr))
    return buckets


def _epoch_batches(buckets: list[_Bucket], batch_size: int,
                   rng: np.random.Generator) -> list[tuple[int, np.ndarray]]:
    """Seeded shuffled list of (bucket index, sample indices) batches."""
    batches = []
    for b, bucket in enumerate(buckets):
        perm = rng.permutation(bucket.x.shape[0])
        for start in range(0, len(perm), batch_size):
            batches.append((b, perm[start:start + batch_size]))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _validation_loss(model: GnnModel, buckets: list[_Bucket], rho_d: float,
                     loss_on_projected: bool) -> float:
    total, count = 0.0, 0
    for bucket in buckets:
        graph = build_graph(bucket.num_aps, bucket.num_ues)
        y = forward(graph, bucket.x, model)
        xhat = y * model.norm.out_std + model.norm.out_mean
        eta = np.exp2(xhat)
        if loss_on_projected:
            sums = eta.sum(axis=-1)
            scale = np.where(sums > 1.0, 1.0 / np.maximum(sums, 1e-300), 1.0)
            eta = eta * scale[..., None]
        sinr, _, _ = _sinr_batch(bucket.beta, bucket.alpha, eta, rho_d)
        per_sample = np.mean((bucket.sinr_opt - sinr) ** 2, axis=-1)
        total += float(per_sample.sum())
        count += per_sample.size
    return total / max(count, 1)


def train(train_set: list[Sample], val_set: list[Sample], cfg: TrainConfig,
          out_dir: str, radio: RadioDefaults | None = None,
          plan: LayerPlan | None = None, resume_from: str | None = None
          ) -> tuple[GnnModel, list[dict]]:
    """Fixed-epoch training with per-epoch checkpoints and best-val tracking.

    Normalisation statistics come from train_set only and are frozen into
    every checkpoint.  Writes metrics.csv (epoch,train_loss,val_loss,wall_ms),
    checkpoints/epoch_NNN.json and best.json under out_dir.  Resuming from an
    epoch checkpoint continues bit-identically because batch shuffling is a
    pure function of (seed, epoch) and the optimizer state rides along in the
    checkpoint.
    """
    if not train_set:
        raise ValueError("empty training set")
    if not all(s.labeled for s in train_set + val_set):
        raise ValueError("training requires labeled samples")
    radio = radio if radio is not None else RadioDefaults()
    rho_d = radio.rho_d()
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        model, rest = load_checkpoint(resume_from)
        stats = model.norm
        opt = AdamState(m={}, v={}, t=int(rest["extra"]["adam_t"]))
        arrays = rest["extra_arrays"]
        for name in model.params:
            opt.m[name] = arrays[f"adam_m.{name}"]
            opt.v[name] = arrays[f"adam_v.{name}"]
        start_epoch = int(rest["extra"]["epoch"])
    else:
        stats = compute_norm_stats(train_set)
        model = init_model(plan, seed=cfg.seed, norm=stats)
        opt = init_adam(model)
        start_epoch = 0

    train_buckets = _make_buckets(train_set, stats, radio)
    val_buckets = _make_buckets(val_set, stats, radio) if val_set else []

    history: list[dict] = []
    best_val = math.inf
    metrics_path = out / "metrics.csv"
    write_header = not metrics_path.exists() or resume_from is None
    metrics_fh = open(metrics_path, "w" if resume_from is None else "a",
                      newline="", encoding="utf-8")
    writer = csv.writer(metrics_fh)
    if write_header:
        writer.writerow(["epoch", "train_loss", "val_loss", "wall_ms"])

    try:
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            t0 = time.perf_counter()
            rng = np.random.default_rng(
                np.random.SeedSequence((cfg.seed, 1000 + epoch)))
            loss_sum, n_seen = 0.0, 0
            for b, idx in _epoch_batches(train_buckets, cfg.batch_size, rng):
                bucket = train_buckets[b]
                loss, grads, _ = loss_and_grads(
                    model, bucket.x[idx], bucket.beta[idx], bucket.alpha[idx],
                    bucket.sinr_opt[idx], rho_d, cfg.loss_on_projected)
                if not math.isfinite(loss):
                    dump = out / "diagnostic_dump.json"
                    save_checkpoint(model, str(dump),
                                    fingerprint=cfg.fingerprint(),
                                    extra={"epoch": epoch, "batch_bucket": b,
                                           "batch_indices": idx.tolist(),
                                           "loss": repr(loss)})
                    raise RuntimeError(f"non-finite loss {loss} at epoch "
                                       f"{epoch}; state saved to {dump}")
                adam_step(model.params, grads, opt, cfg)
                loss_sum += loss * len(idx)
                n_seen += len(idx)
            train_loss = loss_sum / max(n_seen, 1)
            val_loss = (_validation_loss(model, val_buckets, rho_d,
                                         cfg.loss_on_projected)
                        if val_buckets else math.nan)
            wall_ms = (time.perf_counter() - t0) * 1e3

            extra = {"epoch": epoch, "adam_t": opt.t}
            extra_arrays = {}
            for name in model.params:
                extra_arrays[f"adam_m.{name}"] = opt.m[name]
                extra_arrays[f"adam_v.{name}"] = opt.v[name]
            ckpt_path = out / "checkpoints" / f"epoch_{epoch:03d}.json"
            if cfg.keep_epoch_checkpoints or epoch == cfg.epochs:
                save_checkpoint(model, str(ckpt_path),
                                fingerprint=cfg.fingerprint(),
                                extra_arrays=extra_arrays, extra=extra)
            if val_buckets and val_loss < best_val:
                best_val = val_loss
                save_checkpoint(model, str(out / "best.json"),
                                fingerprint=cfg.fingerprint(), extra=extra)
            writer.writerow([epoch, repr(train_loss), repr(val_loss),
                             f"{wall_ms:.1f}"])
            metrics_fh.flush()
            history.append({"epoch": epoch, "train_loss": train_loss,
                            "val_loss": val_loss, "wall_ms": wall_ms})
    finally:
        metrics_fh.close()
    return model, history
