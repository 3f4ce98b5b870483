"""Training loops for the point network g and the distance network f.

g regresses square-root Monte Carlo CDS quotes on (rho, beta, x0) rows from
a dataset file.  f learns the inverse map: for a fixed, descending market
quote vector it outputs one initial distance per quote such that pushing
those distances back through a frozen, pre-trained g reproduces the quotes.
Both use Adam and export weights in the shared file format next to a
per-epoch loss-curve CSV.

Determinism: runs are seeded (model init, shuffling, input draws) and CPU
kernels here are deterministic, so retraining with the same seed reproduces
the same losses to the last bit; the tests pin that contract.  No claim is
made across torch versions or hardware.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigError, TrainerError, WeightFormatError
from .formats import (
    read_dataset,
    read_quotes_csv,
    read_weight_file,
    write_loss_csv,
    write_weight_file,
)
from .models import make_distance_net, make_point_net, normalize


@dataclass(frozen=True)
class TrainSpecG:
    """Schedule for the point network: 30 epochs of batch-128 Adam.

    ``lr_step`` halves the learning rate every that-many epochs (0 keeps it
    constant); without it the late epochs bounce on a gradient-noise plateau
    instead of settling.
    """

    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    lr_step: int = 8
    val_rows: int = 4096  # held out from the dataset for the MAE series

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not (0 < self.learning_rate < 1):
            raise ConfigError(f"implausible learning rate {self.learning_rate}")
        if self.lr_step < 0:
            raise ConfigError("lr_step cannot be negative")
        if self.val_rows < 1:
            raise ConfigError("val_rows must be positive")


@dataclass(frozen=True)
class TrainSpecF:
    """Schedule for the distance network: 40 epochs x 100 batches of 128.

    ``monotonicity_penalty`` adds lambda * mean(relu(x0_k - x0_{k+1})) to the
    loss — a soft nudge toward nondecreasing outputs.  It is off by default:
    monotonicity is reported, not enforced, and in practice is learned anyway.
    """

    epochs: int = 40
    batches_per_epoch: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-3
    lr_step: int = 12
    monotonicity_penalty: float = 0.0
    val_points: int = 256  # fixed (rho, beta) grid for the monotonicity series

    def __post_init__(self):
        if self.epochs < 1 or self.batches_per_epoch < 1 or self.batch_size < 1:
            raise ConfigError("epochs, batches_per_epoch and batch_size must be positive")
        if not (0 < self.learning_rate < 1):
            raise ConfigError(f"implausible learning rate {self.learning_rate}")
        if self.lr_step < 0:
            raise ConfigError("lr_step cannot be negative")
        if self.monotonicity_penalty < 0:
            raise ConfigError("monotonicity_penalty cannot be negative")


@dataclass
class GTrainReport:
    epoch_loss: list[float] = field(default_factory=list)   # mean (sqrt-space) MSE
    epoch_val_mae_bps: list[float] = field(default_factory=list)
    weights_path: str = ""
    curve_path: str = ""


@dataclass
class FTrainReport:
    epoch_loss: list[float] = field(default_factory=list)   # mean percentage loss
    epoch_monotone_fraction: list[float] = field(default_factory=list)
    weights_path: str = ""
    curve_path: str = ""
    quotes: np.ndarray | None = None


def _abort_if_not_finite(loss: torch.Tensor, epoch: int, batch: int, history) -> None:
    if torch.isfinite(loss):
        return
    tail = ", ".join(f"{v:.6g}" for v in history[-5:]) or "none"
    raise TrainerError(
        f"non-finite loss at epoch {epoch}, batch {batch}; "
        f"last finite batch losses: {tail}. Lower the learning rate or "
        f"check the dataset for degenerate rows."
    )


def train_g(dataset_path: str, weights_out: str, curve_out: str,
            spec: TrainSpecG | None = None, seed: int = 0) -> GTrainReport:
    """Fit the point network to a dataset file and export its weights."""
    spec = spec or TrainSpecG()
    rows, meta = read_dataset(dataset_path)
    n = rows.shape[0]
    if n < 2 * spec.val_rows:
        # tiny datasets (unit tests): hold out a quarter instead
        n_val = max(1, n // 4)
    else:
        n_val = spec.val_rows
    ranges = {k: tuple(meta["ranges"][k]) for k in ("rho", "beta", "x0")}

    torch.manual_seed(seed)
    model = make_point_net()
    opt = torch.optim.Adam(model.parameters(), lr=spec.learning_rate)

    shuffle = np.random.default_rng(seed)
    order = shuffle.permutation(n)
    train_idx, val_idx = order[:-n_val], order[-n_val:]

    inputs = np.stack(
        [np.asarray(normalize(rows[:, i], ranges[k])) for i, k in
         enumerate(("rho", "beta", "x0"))],
        axis=1,
    )
    x_all = torch.from_numpy(inputs.astype(np.float32))
    y_sqrt = torch.from_numpy(np.sqrt(rows[:, 3]).astype(np.float32))
    x_val = x_all[val_idx]
    q_val = torch.from_numpy(rows[val_idx, 3].astype(np.float32))

    report = GTrainReport()
    history: list[float] = []
    for epoch in range(1, spec.epochs + 1):
        if spec.lr_step:
            lr = spec.learning_rate * 0.5 ** ((epoch - 1) // spec.lr_step)
            for group in opt.param_groups:
                group["lr"] = lr
        perm = train_idx[shuffle.permutation(train_idx.size)]
        epoch_losses = []
        for start in range(0, perm.size, spec.batch_size):
            idx = perm[start : start + spec.batch_size]
            pred = model(x_all[idx]).mean(dim=1)
            loss = torch.mean((y_sqrt[idx] - pred) ** 2)
            _abort_if_not_finite(loss, epoch, start // spec.batch_size, history)
            opt.zero_grad()
            loss.backward()
            opt.step()
            val = float(loss.detach())
            epoch_losses.append(val)
            history.append(val)
        with torch.no_grad():
            sq = torch.clamp(model(x_val).mean(dim=1), min=0.0)
            mae_bps = float(torch.mean(torch.abs(sq * sq - q_val))) * 1e4
        report.epoch_loss.append(float(np.mean(epoch_losses)))
        report.epoch_val_mae_bps.append(mae_bps)

    write_weight_file(weights_out, "g", model.export_arrays(), ranges)
    write_loss_csv(
        curve_out,
        ("epoch", "train_loss", "val_mae_bps"),
        [(e + 1, report.epoch_loss[e], report.epoch_val_mae_bps[e])
         for e in range(spec.epochs)],
    )
    report.weights_path = weights_out
    report.curve_path = curve_out
    return report


def train_f(quotes_path: str, g_weights_path: str, weights_out: str,
            curve_out: str, spec: TrainSpecF | None = None,
            seed: int = 0) -> FTrainReport:
    """Fit the distance network against a frozen g and export its weights."""
    spec = spec or TrainSpecF()
    quotes = np.sort(read_quotes_csv(quotes_path))[::-1]
    if not np.all(np.diff(quotes) < 0):
        raise ConfigError("quote file contains duplicate spreads")
    k = quotes.size

    gfile = read_weight_file(g_weights_path)
    if gfile.tag != "g":
        raise WeightFormatError(f"{g_weights_path}: need a point ('g') network")
    g_net = make_point_net()
    g_net.load_arrays(gfile.arrays)
    g_net.eval()
    for p in g_net.parameters():
        p.requires_grad_(False)
    r_rho = gfile.input_ranges["rho"]
    r_beta = gfile.input_ranges["beta"]
    r_x0 = gfile.input_ranges["x0"]

    torch.manual_seed(seed)
    f_net = make_distance_net(k)
    opt = torch.optim.Adam(f_net.parameters(), lr=spec.learning_rate)
    draws = torch.Generator().manual_seed(seed + 1)

    c_sqrt = torch.from_numpy(np.sqrt(quotes).astype(np.float32))  # (k,)

    # fixed validation grid for the per-epoch monotonicity statistic
    val_u = torch.rand((spec.val_points, 2), generator=draws)

    def sample_inputs(n: int) -> torch.Tensor:
        u = torch.rand((n, 2), generator=draws)
        return u  # already the normalized (rho, beta) in [0, 1)^2

    def distances(norm_inputs: torch.Tensor) -> torch.Tensor:
        raw = f_net(norm_inputs)
        return raw * raw

    def sqrt_quotes_through_g(norm_inputs: torch.Tensor, x0: torch.Tensor) -> torch.Tensor:
        b = norm_inputs.shape[0]
        x0n = normalize(x0, r_x0)
        trip = torch.stack(
            [
                norm_inputs[:, 0:1].expand(b, k),
                norm_inputs[:, 1:2].expand(b, k),
                x0n,
            ],
            dim=2,
        ).reshape(b * k, 3)
        head = g_net(trip).mean(dim=1).reshape(b, k)
        return torch.relu(head)  # sqrt of the clamped-square quote

    report = FTrainReport(quotes=quotes.copy())
    history: list[float] = []
    for epoch in range(1, spec.epochs + 1):
        if spec.lr_step:
            lr = spec.learning_rate * 0.5 ** ((epoch - 1) // spec.lr_step)
            for group in opt.param_groups:
                group["lr"] = lr
        epoch_losses = []
        for batch in range(spec.batches_per_epoch):
            xin = sample_inputs(spec.batch_size)
            x0 = distances(xin)
            s = sqrt_quotes_through_g(xin, x0)
            loss = torch.mean(100.0 * torch.abs(c_sqrt - s) / c_sqrt)
            if spec.monotonicity_penalty > 0:
                loss = loss + spec.monotonicity_penalty * torch.mean(
                    torch.relu(x0[:, :-1] - x0[:, 1:])
                )
            _abort_if_not_finite(loss, epoch, batch, history)
            opt.zero_grad()
            loss.backward()
            opt.step()
            val = float(loss.detach())
            epoch_losses.append(val)
            history.append(val)
        with torch.no_grad():
            xv = distances(val_u)
            mono = float(torch.mean(torch.all(xv[:, 1:] >= xv[:, :-1], dim=1).float()))
        report.epoch_loss.append(float(np.mean(epoch_losses)))
        report.epoch_monotone_fraction.append(mono)

    write_weight_file(
        weights_out, "f", f_net.export_arrays(),
        {"rho": r_rho, "beta": r_beta}, quotes=quotes,
    )
    write_loss_csv(
        curve_out,
        ("epoch", "train_loss", "monotone_fraction"),
        [(e + 1, report.epoch_loss[e], report.epoch_monotone_fraction[e])
         for e in range(spec.epochs)],
    )
    report.weights_path = weights_out
    report.curve_path = curve_out
    return report
