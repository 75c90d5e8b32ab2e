"""Attention-alignment diagnostics: sharpness, entropy, diagonality, gap
detection, coverage, plus bit-exact PGM and CSV emitters for eyeballing the
decoder-step x encoder-step weight matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass
class AlignmentReport:
    sharpness: float     # mean over decoder steps of the raw row max
    entropy: float       # mean row entropy in nats (rows renormalized)
    diagonality: float   # mass fraction inside the band |j/N - t/T| <= width
    gap_count: int       # rows whose max falls below the gap threshold
    coverage: float      # encoder positions carrying more than 1/(2N) mass
    dec_steps: int
    enc_steps: int


def analyze(weights: np.ndarray, band_width: float = 0.1,
            gap_threshold: float = 0.1) -> AlignmentReport:
    """Quantify an alignment matrix.

    Rows are renormalized before the entropy/diagonality/coverage measures so
    scaling the matrix cannot change them; all-zero rows (a monotonic decoder
    that ran off the end) contribute zero entropy and count as gaps.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2:
        raise ContractError(f"analyze: expected a 2-D matrix, got {weights.shape}")
    if (weights < 0).any():
        raise ContractError("analyze: negative attention weights")
    dec_steps, enc_steps = weights.shape
    row_max = weights.max(axis=1)
    row_sum = weights.sum(axis=1)
    live = row_sum > 0

    normalized = np.zeros_like(weights)
    normalized[live] = weights[live] / row_sum[live, None]

    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(normalized > 0, np.log(normalized), 0.0)
    entropy = float(-(normalized * logs).sum(axis=1).mean())

    t_frac = np.arange(dec_steps)[:, None] / dec_steps
    j_frac = np.arange(enc_steps)[None, :] / enc_steps
    band = np.abs(j_frac - t_frac) <= band_width
    total_mass = normalized.sum()
    diagonality = float((normalized * band).sum() / total_mass) if total_mass > 0 else 0.0

    column_mass = normalized.sum(axis=0)
    coverage = float((column_mass > 1.0 / (2 * enc_steps)).mean())

    return AlignmentReport(
        sharpness=float(row_max.mean()),
        entropy=entropy,
        diagonality=diagonality,
        gap_count=int((row_max < gap_threshold).sum()),
        coverage=coverage,
        dec_steps=dec_steps,
        enc_steps=enc_steps,
    )


def emit_pgm(weights: np.ndarray, path) -> None:
    """Binary PGM (P5), one pixel per weight scaled by the global max;
    decoder step 1 is the top row."""
    weights = np.asarray(weights, dtype=np.float64)
    if (weights < 0).any():
        raise ContractError("emit_pgm: negative attention weights")
    dec_steps, enc_steps = weights.shape
    peak = weights.max() if weights.size else 0.0
    if peak > 0:
        pixels = np.floor(255.0 * weights / peak + 0.5).astype(np.uint8)
    else:
        pixels = np.zeros_like(weights, dtype=np.uint8)
    header = f"P5\n{enc_steps} {dec_steps}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header + pixels.tobytes())


def emit_csv(weights: np.ndarray, path) -> None:
    """One decoder step per line, 9-decimal fixed-point values, LF endings;
    an empty matrix produces an empty file."""
    weights = np.asarray(weights, dtype=np.float64)
    lines = [",".join(f"{value:.9f}" for value in row) + "\n" for row in weights]
    with open(path, "w", newline="") as f:
        f.writelines(lines)
