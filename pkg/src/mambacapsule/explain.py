"""Reconstruction-based explanations: shift disturbance and cross-label studies."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import P_PHASE
from .tensor import Tensor, no_grad
from .training import center_window


def shift_input(x, k: int) -> np.ndarray:
    """Shift right by ``k`` (left for negative k), padding with the edge value."""
    x = np.asarray(x, dtype=np.float64)
    L = x.shape[-1]
    if abs(k) >= L:
        raise ValueError(f"|shift| must be below the signal length {L}, got {k}")
    if k == 0:
        return x.copy()
    if k > 0:
        return np.concatenate([np.full(k, x[0]), x[:-k]])
    return np.concatenate([x[-k:], np.full(-k, x[-1])])


def _forward(model, x):
    with no_grad():
        return model(np.asarray(x, dtype=np.float64).reshape(1, -1))


def _decode(model, capsules: np.ndarray, choose: int) -> np.ndarray:
    with no_grad():
        return model.reconstructor(Tensor(capsules[None]), [choose]).data[0]


def reconstruct_beat(model, x, choose: int | None = None) -> np.ndarray:
    out = _forward(model, x)
    c = int(out.predictions()[0]) if choose is None else choose
    return _decode(model, out.capsules.data[0], c)


@dataclass
class DisturbanceResult:
    shifts: list
    inputs: list  # shifted beats
    reconstructions: list
    scores: list  # alignment score per shift
    reference_mse: float  # unshifted reconstruction vs the centred input window


def disturbance_study(x, model, shifts) -> DisturbanceResult:
    """Reconstruct shifted copies of one beat and score their agreement with the unshifted one.

    A shift's score is the smallest MSE between its reconstruction, re-shifted by
    any amount up to the largest requested |shift|, and the unshifted reconstruction.
    """
    x = np.asarray(x, dtype=np.float64)
    shifts = [int(k) for k in shifts]
    reach = max([abs(k) for k in shifts] + [0])
    ref = reconstruct_beat(model, x)
    ref_mse = float(np.mean((ref - center_window(x, ref.shape[0])) ** 2))
    inputs, recons, scores = [], [], []
    for k in shifts:
        xk = shift_input(x, k)
        rk = reconstruct_beat(model, xk)
        best = min(float(np.mean((shift_input(rk, j) - ref) ** 2)) for j in range(-reach, reach + 1)
                   if abs(j) < rk.shape[0])
        inputs.append(xk)
        recons.append(rk)
        scores.append(best)
    return DisturbanceResult(shifts, inputs, recons, scores, ref_mse)


@dataclass
class CrossLabelResult:
    trace: np.ndarray
    target: int
    argmax: int
    argmax_norm: float
    target_norm: float  # before rescaling
    rescaled_norm: float


def cross_label_reconstruct(x, model, target: int) -> CrossLabelResult:
    """Reconstruct from the ``target`` capsule after rescaling it to the winning capsule's length."""
    out = _forward(model, x)
    caps = out.capsules.data[0].copy()
    k = caps.shape[0]
    if not 0 <= target < k:
        raise IndexError(f"target class {target} outside [0, {k})")
    win = int(out.predictions()[0])
    norms = np.sqrt((caps * caps).sum(axis=1))
    nt, nw = float(norms[target]), float(norms[win])
    if target != win:
        caps[target] = caps[target] * (nw / nt) if nt > 0 else 0.0
    trace = _decode(model, caps, target)
    return CrossLabelResult(trace, target, win, nw, nt, float(np.sqrt((caps[target] ** 2).sum())))


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def emit_plot(traces, path) -> tuple[Path, Path]:
    """Write overlaid ``(label, values)`` traces as SVG plus a sidecar CSV of raw values."""
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    traces = [(str(label), np.asarray(v, dtype=np.float64).reshape(-1)) for label, v in traces]
    W, H, pad = 800, 400, 50
    n = max((len(v) for _, v in traces), default=0)
    vals = np.concatenate([v for _, v in traces]) if traces else np.zeros(0)
    lo, hi = (float(vals.min()), float(vals.max())) if vals.size else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1.0

    def px(i):
        return pad + (W - 2 * pad) * (i / max(n - 1, 1))

    def py(v):
        return H - pad - (H - 2 * pad) * ((v - lo) / (hi - lo))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
           f'<text x="{pad}" y="{H - pad + 20}" font-size="12">0</text>',
           f'<text x="{W - pad}" y="{H - pad + 20}" font-size="12" text-anchor="end">{max(n - 1, 0)}</text>',
           f'<text x="{pad - 5}" y="{H - pad}" font-size="12" text-anchor="end">{lo:.3g}</text>',
           f'<text x="{pad - 5}" y="{pad + 4}" font-size="12" text-anchor="end">{hi:.3g}</text>']
    for i, (label, v) in enumerate(traces):
        colour = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(j):.2f},{py(val):.2f}" for j, val in enumerate(v))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{W - pad + 5 - 120}" y="{pad + 15 * (i + 1)}" font-size="11" '
                   f'fill="{colour}">{_escape(label)}</text>')
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n", encoding="utf-8")

    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["index", *(label for label, _ in traces)])
        for j in range(n):
            out.writerow([j, *(repr(float(v[j])) if j < len(v) else "" for _, v in traces)])
    return path, csv_path


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def p_wave_energy(trace, recon_len_offset: int, L: int, width: float = 0.05) -> float:
    """Energy above the trace median in a window around the synthetic P phase.

    ``recon_len_offset`` is the index in the full beat where the trace starts.
    """
    centre = P_PHASE * L - recon_len_offset
    half = max(1, int(round(width * L)))
    lo, hi = max(0, int(round(centre)) - half), min(len(trace), int(round(centre)) + half + 1)
    seg = np.asarray(trace)[lo:hi] - np.median(trace)
    return float(np.sum(seg * seg))
