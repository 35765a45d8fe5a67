"""Procedurally drawn glyphs for a 40-character subset, so experiments need no external data.

Each character is a set of polylines in a unit box whose rows are split into
the ascender band (y < UPPER), the core band and the descender band (y > BASE).
Exemplars differ by a random shear, scale, point jitter and stroke width.
"""
from __future__ import annotations

import math

import numpy as np

TOP, UPPER, BASE, BOTTOM = 0.06, 0.36, 0.70, 0.95
MID = (UPPER + BASE) / 2

ASCENDER, DESCENDER, CORE = "ascender", "descender", "core"

# vertical classes of the lower-case letters follow the character-placement lists used for COUT data
CORE_LETTERS = "acimnorsuvwxze"
DESCENDER_LETTERS = "gjpqy"
ASCENDER_LETTERS = "bdfhklt"

BUILTIN_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789.,'-"


def char_class(ch: str) -> str:
    if ch in DESCENDER_LETTERS:
        return DESCENDER
    if ch in ASCENDER_LETTERS or ch.isupper() or ch.isdigit() or ch == "'":
        return ASCENDER
    return CORE


def _arc(cx, cy, rx, ry, a0, a1, n=16):
    t = np.radians(np.linspace(a0, a1, n))
    return [(cx + rx * math.cos(a), cy + ry * math.sin(a)) for a in t]


def _oval(cx, cy, rx, ry):
    return _arc(cx, cy, rx, ry, 0, 360, 24)


def _dot(x, y):
    return [(x, y - 0.02), (x, y + 0.02)]


R = 0.175  # half height of the core band ovals

STROKES = {
    "a": [_oval(0.45, MID, 0.28, R), [(0.73, UPPER), (0.73, BASE)]],
    "b": [[(0.2, TOP), (0.2, BASE)], _oval(0.48, MID, 0.28, R)],
    "c": [_arc(0.5, MID, 0.3, R, 45, 315)],
    "d": [_oval(0.45, MID, 0.28, R), [(0.73, TOP), (0.73, BASE)]],
    "e": [[(0.2, MID), (0.8, MID)], _arc(0.5, MID, 0.3, R, 0, -315)],
    "f": [[(0.72, TOP + 0.02), (0.52, TOP), (0.4, TOP + 0.08), (0.4, BASE)], [(0.18, UPPER), (0.68, UPPER)]],
    "g": [_oval(0.45, MID, 0.28, R), [(0.73, UPPER), (0.73, BOTTOM - 0.08), (0.5, BOTTOM), (0.25, BOTTOM - 0.05)]],
    "h": [[(0.2, TOP), (0.2, BASE)], [(0.2, UPPER + 0.1), (0.35, UPPER), (0.6, UPPER), (0.75, UPPER + 0.08), (0.75, BASE)]],
    "i": [[(0.5, UPPER), (0.5, BASE)], _dot(0.5, UPPER - 0.13)],
    "j": [[(0.55, UPPER), (0.55, BOTTOM - 0.07), (0.4, BOTTOM), (0.2, BOTTOM - 0.06)], _dot(0.55, UPPER - 0.13)],
    "k": [[(0.2, TOP), (0.2, BASE)], [(0.72, UPPER), (0.2, MID + 0.05)], [(0.4, MID - 0.02), (0.76, BASE)]],
    "l": [[(0.5, TOP), (0.5, BASE)]],
    "m": [[(0.1, UPPER), (0.1, BASE)], [(0.1, UPPER + 0.08), (0.2, UPPER), (0.35, UPPER), (0.5, UPPER + 0.08), (0.5, BASE)],
          [(0.5, UPPER + 0.08), (0.6, UPPER), (0.75, UPPER), (0.9, UPPER + 0.08), (0.9, BASE)]],
    "n": [[(0.2, UPPER), (0.2, BASE)], [(0.2, UPPER + 0.08), (0.35, UPPER), (0.6, UPPER), (0.75, UPPER + 0.08), (0.75, BASE)]],
    "o": [_oval(0.5, MID, 0.3, R)],
    "p": [[(0.2, UPPER), (0.2, BOTTOM)], _oval(0.48, MID, 0.28, R)],
    "q": [_oval(0.45, MID, 0.28, R), [(0.73, UPPER), (0.73, BOTTOM)]],
    "r": [[(0.25, UPPER), (0.25, BASE)], [(0.25, UPPER + 0.1), (0.4, UPPER), (0.7, UPPER + 0.02)]],
    "s": [[(0.75, UPPER + 0.03), (0.5, UPPER), (0.25, UPPER + 0.06), (0.3, MID - 0.03), (0.7, MID + 0.03),
           (0.75, BASE - 0.06), (0.5, BASE), (0.2, BASE - 0.03)]],
    "t": [[(0.45, TOP + 0.1), (0.45, BASE - 0.05), (0.62, BASE)], [(0.2, UPPER), (0.72, UPPER)]],
    "u": [[(0.2, UPPER), (0.2, BASE - 0.08), (0.35, BASE), (0.6, BASE), (0.75, BASE - 0.08)], [(0.75, UPPER), (0.75, BASE)]],
    "v": [[(0.2, UPPER), (0.5, BASE), (0.8, UPPER)]],
    "w": [[(0.1, UPPER), (0.3, BASE), (0.5, UPPER + 0.08), (0.7, BASE), (0.9, UPPER)]],
    "x": [[(0.2, UPPER), (0.8, BASE)], [(0.8, UPPER), (0.2, BASE)]],
    "y": [[(0.2, UPPER), (0.5, BASE)], [(0.8, UPPER), (0.3, BOTTOM)]],
    "z": [[(0.2, UPPER), (0.8, UPPER), (0.2, BASE), (0.8, BASE)]],
    "0": [_oval(0.5, (TOP + BASE) / 2, 0.3, (BASE - TOP) / 2)],
    "1": [[(0.3, TOP + 0.12), (0.55, TOP), (0.55, BASE)]],
    "2": [[(0.2, TOP + 0.12), (0.35, TOP), (0.65, TOP), (0.78, TOP + 0.12), (0.7, 0.3), (0.2, BASE), (0.8, BASE)]],
    "3": [[(0.2, TOP + 0.05), (0.5, TOP), (0.75, TOP + 0.1), (0.7, 0.3), (0.45, 0.36), (0.75, 0.45), (0.78, 0.6),
           (0.5, BASE), (0.2, BASE - 0.05)]],
    "4": [[(0.65, BASE), (0.65, TOP), (0.15, 0.5), (0.85, 0.5)]],
    "5": [[(0.75, TOP), (0.3, TOP), (0.25, 0.33), (0.55, 0.3), (0.78, 0.45), (0.75, 0.62), (0.5, BASE), (0.2, BASE - 0.05)]],
    "6": [[(0.7, TOP), (0.4, 0.15), (0.25, 0.4), (0.25, 0.55)], _oval(0.5, 0.55, 0.25, 0.15)],
    "7": [[(0.2, TOP), (0.8, TOP), (0.4, BASE)]],
    "8": [_oval(0.5, 0.2, 0.22, 0.14), _oval(0.5, 0.52, 0.27, 0.18)],
    "9": [_oval(0.5, 0.22, 0.25, 0.16), [(0.75, 0.22), (0.7, 0.5), (0.5, BASE)]],
    ".": [_dot(0.5, BASE - 0.02)],
    ",": [[(0.55, BASE - 0.04), (0.5, BASE + 0.05), (0.4, BASE + 0.12)]],
    "'": [[(0.5, TOP), (0.48, TOP + 0.15)]],
    "-": [[(0.25, MID), (0.75, MID)]],
}

WIDTHS = {"m": 1.0, "w": 1.0, "i": 0.4, "l": 0.4, "j": 0.5, ".": 0.35, ",": 0.35, "'": 0.35, "1": 0.5,
          "f": 0.55, "r": 0.55, "t": 0.55, "-": 0.55}


def _segment_distance(px, py, a, b):
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    if L2 == 0:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / L2, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def render_strokes(strokes, height: int, width: int, thickness: float) -> np.ndarray:
    """Anti-aliased dark strokes on white; stroke points are in unit-box coordinates."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    dist = np.full((height, width), np.inf)
    for line in strokes:
        pts = [(x * (width - 1), y * (height - 1)) for x, y in line]
        for a, b in zip(pts[:-1], pts[1:]):
            dist = np.minimum(dist, _segment_distance(xs, ys, a, b))
    ink = np.clip(thickness / 2.0 + 0.5 - dist, 0.0, 1.0)
    return 1.0 - ink


def draw_glyph(ch: str, height: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """One exemplar of ``ch``; with ``rng`` the shape is randomly perturbed."""
    if ch not in STROKES:
        raise KeyError(f"no built-in glyph for {ch!r}")
    rel = WIDTHS.get(ch, 0.7)
    width = max(3, int(round(rel * height * 0.6)))
    strokes = STROKES[ch]
    thickness = max(1.2, height / 16)
    if rng is not None:
        shear = rng.uniform(-0.12, 0.12)
        sx, sy = rng.uniform(0.92, 1.04, size=2)
        thickness *= rng.uniform(0.85, 1.25)
        jittered = []
        for line in strokes:
            pts = []
            for x, y in line:
                x = 0.5 + (x - 0.5) * sx + shear * (MID - y) * height / width
                y = MID + (y - MID) * sy
                pts.append((x + rng.normal(0, 0.015), y + rng.normal(0, 0.008)))
            jittered.append(pts)
        strokes = jittered
    return render_strokes(strokes, height, width, thickness)
