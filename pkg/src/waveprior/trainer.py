"""The deep-prior fitting loop.

A randomly initialised generator is fed Gaussian noise and fitted by Adam to
a single corrupted waveform under (optionally masked) L1 loss. By default the
input noise is drawn once; ``resample_noise_each_epoch`` draws a fresh input
every epoch, or with ``perturbation_std`` keeps the first draw and adds a
small fresh jitter each epoch. When a clean
reference is supplied, SI-SNR and PSNR of the output are traced so the
epoch where the output was cleanest can be reported.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .architectures import NetworkVariant, build_network, get_preset
from .corruption import MaskInterval, as_waveform
from .metrics import MetricReport, psnr, si_snr
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 3000
    lr: float = 1e-4
    input_noise_std: float = 0.1
    resample_noise_each_epoch: bool = False
    perturbation_std: Optional[float] = None
    metric_every: int = 10
    checkpoint_epochs: Sequence[int] = (500, 1000)
    seed: int = 0
    early_stop: bool = False
    early_stop_window: int = 200
    early_stop_tol: float = 1e-6
    log_every: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.input_noise_std <= 0:
            raise ValueError(f"input_noise_std must be positive, got {self.input_noise_std}")
        if self.perturbation_std is not None and self.perturbation_std <= 0:
            raise ValueError(f"perturbation_std must be positive, got {self.perturbation_std}")
        if self.metric_every < 1:
            raise ValueError(f"metric_every must be >= 1, got {self.metric_every}")
        self.checkpoint_epochs = tuple(sorted(set(int(e) for e in self.checkpoint_epochs)))


@dataclass
class FitTrace:
    epochs: list[int] = field(default_factory=list)
    l1_loss: list[float] = field(default_factory=list)
    si_snr_db: list[float] = field(default_factory=list)
    psnr_db: list[float] = field(default_factory=list)
    checkpoints: dict[int, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def has_reference(self) -> bool:
        return bool(self.si_snr_db) and not np.isnan(self.si_snr_db[0])

    def append(self, epoch: int, loss: float, sisnr: float = np.nan, psnr_db: float = np.nan) -> None:
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValueError(f"trace epochs must increase: {epoch} after {self.epochs[-1]}")
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        self.epochs.append(epoch)
        self.l1_loss.append(loss)
        self.si_snr_db.append(sisnr)
        self.psnr_db.append(psnr_db)

    def to_csv(self) -> str:
        lines = ["epoch,l1_loss,si_snr_db,psnr_db"]
        for e, l, s, p in zip(self.epochs, self.l1_loss, self.si_snr_db, self.psnr_db):
            lines.append(f"{e},{l!r},{_fmt(s)},{_fmt(p)}")
        return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


@dataclass
class FitResult:
    final_output: np.ndarray
    trace: FitTrace
    best_output: Optional[np.ndarray] = None
    best_epoch: Optional[int] = None
    baseline: Optional[MetricReport] = None
    losses: list[float] = field(default_factory=list)


def sample_input_noise(length: int, std: float = 0.1, seed: int = 0, epoch: int = 0) -> T.Tensor:
    """(1 × length) Gaussian input, reproducible from (seed, epoch)."""
    if length < 1:
        raise ValueError(f"noise length must be >= 1, got {length}")
    rng = np.random.default_rng([seed, epoch])
    return T.Tensor(rng.standard_normal((1, length)) * std)


def fit_prior(
    variant: NetworkVariant | str,
    target,
    cfg: TrainConfig | None = None,
    reference=None,
    mask: MaskInterval | None = None,
    callback: Callable[[int, T.Tensor, T.Tensor], None] | None = None,
) -> FitResult:
    """Fit a fresh generator to ``target`` and trace its output.

    ``callback(epoch, output, loss)`` runs after each backward pass, while
    gradients on the output are still available. Epochs are numbered from 1;
    the trace entry for epoch e describes the output the e-th update was
    computed from.
    """
    cfg = cfg or TrainConfig()
    if isinstance(variant, str):
        variant = get_preset(variant)
    target = as_waveform(target).samples
    n = target.size
    ref = None
    if reference is not None:
        ref = as_waveform(reference).samples
        if ref.size != n:
            raise ValueError(f"reference length {ref.size} differs from target length {n}")
    loss_mask = None
    if mask is not None:
        if cfg.resample_noise_each_epoch:
            raise ValueError("inpainting requires a fixed input noise (resample_noise_each_epoch=False)")
        loss_mask = mask.boolean(n)

    net = build_network(variant, cfg.seed)
    if n < net.min_length:
        raise ValueError(f"target of {n} samples is shorter than the network minimum {net.min_length}")
    params = net.parameters()
    state = AdamState.for_params(params, lr=cfg.lr)
    tgt = target.reshape(1, n)
    trace = FitTrace()
    losses: list[float] = []
    best_sisnr, best_out, best_epoch = -np.inf, None, None
    checkpoints = set(cfg.checkpoint_epochs)

    base = sample_input_noise(n, cfg.input_noise_std, cfg.seed, 0)

    def noise_for(epoch: int) -> T.Tensor:
        if not cfg.resample_noise_each_epoch:
            return base
        if cfg.perturbation_std is None:
            return sample_input_noise(n, cfg.input_noise_std, cfg.seed, epoch)
        jitter = sample_input_noise(n, cfg.perturbation_std, cfg.seed, epoch)
        return T.Tensor(base.data + jitter.data)

    for epoch in range(1, cfg.epochs + 1):
        try:
            out = net(noise_for(epoch))
            loss = T.l1_loss(out, tgt, loss_mask)
            T.backward(loss)
        except FloatingPointError as exc:
            raise FloatingPointError(f"training diverged at epoch {epoch}: {exc}") from exc
        value = loss.item()
        if not np.isfinite(value):
            raise FloatingPointError(f"training diverged at epoch {epoch}: loss {value}")
        losses.append(value)
        if callback is not None:
            callback(epoch, out, loss)
        record = epoch % cfg.metric_every == 0 or epoch in checkpoints or epoch == cfg.epochs
        if record:
            y = out.data[0]
            if ref is not None:
                s, p = si_snr(ref, y), psnr(ref, y)
                trace.append(epoch, value, s, p)
                if s > best_sisnr:
                    best_sisnr, best_out, best_epoch = s, y.copy(), epoch
            else:
                trace.append(epoch, value)
            if epoch in checkpoints:
                trace.checkpoints[epoch] = y.copy()
        if cfg.log_every and epoch % cfg.log_every == 0:
            extra = f" si_snr={trace.si_snr_db[-1]:.2f}dB" if record and ref is not None else ""
            log.info("epoch %d loss=%.6f%s", epoch, value, extra)
        adam_step(params, state)
        T.zero_grads(params)
        if cfg.early_stop and _converged(losses, cfg.early_stop_window, cfg.early_stop_tol):
            log.info("early stop at epoch %d", epoch)
            if not record:
                y = out.data[0]
                if ref is not None:
                    trace.append(epoch, value, si_snr(ref, y), psnr(ref, y))
                else:
                    trace.append(epoch, value)
            break

    final = net(noise_for(cfg.epochs + 1 if cfg.epochs else 0)).data[0].copy()
    baseline = None
    if ref is not None:
        baseline = MetricReport(si_snr(ref, target), psnr(ref, target))
    return FitResult(final, trace, best_out, best_epoch, baseline, losses)


def _converged(losses: list[float], window: int, tol: float) -> bool:
    if len(losses) <= window:
        return False
    return min(losses[:-window]) - min(losses[-window:]) < tol


def trace_summary(trace: FitTrace, baseline: MetricReport) -> dict:
    """Max SI-SNR (with its epoch), max PSNR, SI-SNRi at the best epoch, final-epoch SI-SNR."""
    if not len(trace) or not trace.has_reference:
        raise ValueError("trace_summary: trace has no reference metrics")
    i = int(np.argmax(trace.si_snr_db))
    return {
        "baseline_sisnr": baseline.si_snr_db,
        "max_sisnr": trace.si_snr_db[i],
        "epoch_of_max": trace.epochs[i],
        "max_psnr": float(np.max(trace.psnr_db)),
        "sisnri": trace.si_snr_db[i] - baseline.si_snr_db,
        "final_sisnr": trace.si_snr_db[-1],
    }
