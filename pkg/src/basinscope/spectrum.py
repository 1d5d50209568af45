"""Exact singular values of network modules and the derived capacity terms.

A circular-padded stride-1 convolution on an n x n grid is block-diagonalized
by the 2-D DFT: zero-pad each kernel slice to n x n, transform, and the
union of the singular values of the per-frequency channel-mixing blocks is
the operator's exact spectrum. Dense layers contribute their plain matrix
spectra. Strided convs are analyzed as stride-1 operators on their input
grid (recorded in report metadata).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SizeError
from .numerics import is_power_of_two, svd_values
from .trainer import Checkpoint


def conv_singular_values(kernel, input_size: int) -> np.ndarray:
    """All n^2 * min(Cin, Cout) singular values of the conv operator, descending."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4:
        raise SizeError(f"kernel must be (k, k, Cin, Cout), got {kernel.shape}")
    k = kernel.shape[0]
    if kernel.shape[1] != k:
        raise SizeError("kernel spatial dims must be square")
    n = input_size
    if not is_power_of_two(n):
        raise SizeError(f"input size must be a power of two, got {n}")
    if k > n:
        raise DomainError(f"kernel size {k} exceeds input size {n}")
    cin, cout = kernel.shape[2], kernel.shape[3]
    padded = np.zeros((n, n, cin, cout), dtype=np.float64)
    padded[:k, :k] = kernel
    transform = np.fft.fft2(padded, axes=(0, 1))
    values = np.empty((n * n, min(cin, cout)), dtype=np.float64)
    for u in range(n):
        for v in range(n):
            values[u * n + v] = svd_values(transform[u, v])
    flat = values.ravel()
    flat.sort()
    return flat[::-1].copy()


def dense_singular_values(weight) -> np.ndarray:
    return svd_values(np.asarray(weight, dtype=np.float64))


@dataclass
class SpectrumReport:
    per_module: dict  # module -> descending singular values
    norms: dict  # module -> {"frobenius": .., "spectral": ..}
    conv_input_sizes: dict  # module -> n (conv modules only)

    def all_values(self) -> np.ndarray:
        flat = np.concatenate(list(self.per_module.values()))
        flat.sort()
        return flat[::-1].copy()


def network_spectrum(ckpt: Checkpoint) -> SpectrumReport:
    """Spectra of every module of a checkpoint, conv operators at their
    deployed input sizes."""
    per_module = {}
    conv_sizes = {}
    for layer in ckpt.arch.layer_plan():
        name = layer["name"]
        weight = ckpt.params.get(f"{name}.weight").astype(np.float64)
        if layer["kind"] == "conv":
            n = layer["in_hw"][0]
            per_module[name] = conv_singular_values(weight, n)
            conv_sizes[name] = n
        else:
            per_module[name] = dense_singular_values(weight)
    norms = {}
    for name, values in per_module.items():
        norms[name] = {
            "frobenius": float(np.sqrt(np.sum(values**2))),
            "spectral": float(values[0]) if values.size else 0.0,
        }
    return SpectrumReport(per_module=per_module, norms=norms, conv_input_sizes=conv_sizes)


def threshold_count_curve(values, thresholds) -> list[tuple[float, int]]:
    """(t, #values strictly below t) for every threshold; non-decreasing in t."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(thresholds) < 0):
        raise DomainError("thresholds must be sorted ascending")
    sorted_values = np.sort(np.asarray(values, dtype=np.float64))
    counts = np.searchsorted(sorted_values, thresholds, side="left")
    return [(float(t), int(c)) for t, c in zip(thresholds, counts)]


def spectrum_histogram(values, bins: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Counts over uniform bins spanning [0, max value]."""
    values = np.asarray(values, dtype=np.float64)
    top = float(values.max()) if values.size else 1.0
    edges = np.linspace(0.0, top if top > 0 else 1.0, bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return edges, counts


def norm_ratio_term(report: SpectrumReport) -> tuple[float, float]:
    """Sum of per-module Frobenius/spectral ratios and the log of the
    spectral-norm product."""
    ratio_sum = 0.0
    log_product = 0.0
    for name, norm in report.norms.items():
        if norm["spectral"] <= 0.0:
            raise DomainError(f"module {name} has zero spectral norm")
        ratio_sum += norm["frobenius"] / norm["spectral"]
        log_product += float(np.log(norm["spectral"]))
    return ratio_sum, log_product
