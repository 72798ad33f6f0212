"""Tiny 5x7 bitmap font for tick labels (digits, sign, decimal point)."""

from __future__ import annotations

import numpy as np

GLYPH_W = 5
GLYPH_H = 7
GLYPH_GAP = 1

_ROWS = {
    "0": ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    "1": ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    "2": ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    "3": ["11110", "00001", "00001", "01110", "00001", "00001", "11110"],
    "4": ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    "5": ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    "6": ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    "7": ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    "8": ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    "9": ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
    "-": ["00000", "00000", "00000", "11111", "00000", "00000", "00000"],
    ".": ["00000", "00000", "00000", "00000", "00000", "01100", "01100"],
}

GLYPHS: dict[str, np.ndarray] = {
    ch: np.array([[c == "1" for c in row] for row in rows], dtype=bool)
    for ch, rows in _ROWS.items()
}


def trimmed(ch: str) -> np.ndarray:
    """Glyph bitmap with empty leading/trailing columns removed (full height kept)."""
    g = GLYPHS[ch]
    cols = np.flatnonzero(g.any(axis=0))
    return g[:, cols[0]:cols[-1] + 1]


def render_text(text: str, scale: int = 1) -> np.ndarray:
    """Boolean ink mask for ``text``; glyphs are trimmed and separated by one blank column."""
    parts = []
    for i, ch in enumerate(text):
        if ch not in GLYPHS:
            raise ValueError(f"no glyph for {ch!r}")
        if i:
            parts.append(np.zeros((GLYPH_H, GLYPH_GAP), dtype=bool))
        parts.append(trimmed(ch))
    mask = np.concatenate(parts, axis=1) if parts else np.zeros((GLYPH_H, 0), dtype=bool)
    if scale > 1:
        mask = np.kron(mask, np.ones((scale, scale), dtype=bool))
    return mask
