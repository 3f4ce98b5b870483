"""Torch models for the point network g and the distance network f.

Both are 1-D conv stacks over a tiny input sequence (the 2-3 scalars fed as
a one-channel sequence with 'same' padding) followed by dense layers, ReLU
everywhere except the linear head.  Parameters are stored in the exact
shapes the weight-file format uses — conv (filters, in_channels, kernel),
dense (units_out, units_in) — so exporting is a plain dump in layer order.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .formats import F_CONV, G_CONV, G_DENSE


class GatherConv1d(nn.Module):
    """'same'-padded 1-D convolution specialized to a fixed, short length.

    The kernels here are far longer than the sequence (k up to 64 on length
    2-3), so a direct convolution spends nearly all of its work multiplying
    padding zeros.  With left pad (k-1)//2, output position j only ever sees
    input position i through kernel slot t = i + pad - j; the layer gathers
    those at-most-L^2 slots once and contracts them directly.  This is
    arithmetically identical to the padded convolution — kernel slots that
    never overlap data are dead weights either way.
    """

    def __init__(self, in_channels: int, filters: int, kernel: int, length: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(filters, in_channels, kernel))
        self.bias = nn.Parameter(torch.empty(filters))
        pad = (kernel - 1) // 2
        j = torch.arange(length)[:, None]
        i = torch.arange(length)[None, :]
        t = i + pad - j
        valid = (t >= 0) & (t < kernel)
        self.register_buffer("index", t.clamp(0, kernel - 1))
        self.register_buffer("mask", valid.to(torch.float32))
        # same defaults torch uses for a Conv1d of this shape
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        bound = 1.0 / math.sqrt(in_channels * kernel)
        nn.init.uniform_(self.bias, -bound, bound)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # w[f, c, j, i] = weight[f, c, i + pad - j] where that slot exists
        w = self.weight[:, :, self.index] * self.mask
        return torch.einsum("fcji,bci->bfj", w, x) + self.bias[None, :, None]


class SeqNet(nn.Module):
    """Conv stack + dense stack over a length-L scalar sequence."""

    def __init__(self, conv_spec, dense_units, input_len: int):
        super().__init__()
        convs, channels = [], 1
        for filters, kernel in conv_spec:
            convs.append(GatherConv1d(channels, filters, kernel, input_len))
            channels = filters
        self.convs = nn.ModuleList(convs)
        dense, width = [], channels * input_len
        for units in dense_units:
            dense.append(nn.Linear(width, units))
            width = units
        self.dense = nn.ModuleList(dense)
        self.input_len = input_len

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Normalized inputs (B, L) -> raw head outputs (B, units[-1])."""
        h = x[:, None, :]
        for conv in self.convs:
            h = torch.relu(conv(h))
        h = h.reshape(h.shape[0], -1)  # channels-major flatten
        for lin in self.dense[:-1]:
            h = torch.relu(lin(h))
        return self.dense[-1](h)

    # -- weight-file interop ------------------------------------------------

    def export_arrays(self):
        """((w, b), ...) float32 pairs in payload layer order."""
        out = []
        for mod in list(self.convs) + list(self.dense):
            out.append((mod.weight.detach().cpu().numpy().astype(np.float32),
                        mod.bias.detach().cpu().numpy().astype(np.float32)))
        return out

    def load_arrays(self, arrays) -> None:
        mods = list(self.convs) + list(self.dense)
        if len(arrays) != len(mods):
            raise ValueError(f"need {len(mods)} layers, got {len(arrays)}")
        with torch.no_grad():
            for mod, (w, b) in zip(mods, arrays):
                mod.weight.copy_(torch.as_tensor(np.asarray(w), dtype=mod.weight.dtype))
                mod.bias.copy_(torch.as_tensor(np.asarray(b), dtype=mod.bias.dtype))


def make_point_net() -> SeqNet:
    """The g network: (rho, beta, x0) -> 8 raw head units.

    The predicted square-root quote is the mean of the head; the quote
    itself is that mean clamped at zero and squared.
    """
    return SeqNet(G_CONV, G_DENSE, 3)


def make_distance_net(k: int) -> SeqNet:
    """The f network: (rho, beta) -> k raw units; x0 = raw**2 per unit."""
    if k < 2:
        raise ValueError("distance network needs at least two quote slots")
    return SeqNet(F_CONV, (4 * k, 2 * k, k), 2)


def normalize(values, rng) -> torch.Tensor:
    lo, hi = float(rng[0]), float(rng[1])
    return (values - lo) / (hi - lo)
