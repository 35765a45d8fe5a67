"""Manifests, character sets, target encoding and the synthetic glyph-word generator."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import glyphs as G
from .imaging import GrayImage, load_png, resize, save_png
from .seq2seq import CharVocab, VocabError

PARTITIONS = ("train", "validation", "test")
MANIFEST_HEADER = ("path", "transcription", "partition", "ok")


class ManifestError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class TranscriptError(ValueError):
    def __init__(self, chars):
        self.chars = sorted(set(chars))
        super().__init__("characters outside the charset: " + ", ".join(repr(c) for c in self.chars))


class MissingGlyphError(KeyError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    transcription: str
    partition: str
    ok: bool = True

    def __post_init__(self):
        if self.partition not in PARTITIONS:
            raise ManifestError(f"unknown partition {self.partition!r}")
        for name in ("path", "transcription"):
            value = getattr(self, name)
            if "\t" in value or "\n" in value or "\r" in value:
                raise ManifestError(f"{name} may not contain tabs or newlines")


def _parse_ok(value: str, line: int) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "ok", "yes"):
        return True
    if v in ("0", "false", "err", "no"):
        return False
    raise ManifestError(f"bad ok flag {value!r}", line)


def load_manifest(path) -> list[ManifestEntry]:
    """Read a TSV manifest with header path, transcription, partition, ok."""
    entries, seen = [], set()
    with open(os.fspath(path), encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or tuple(lines[0].rstrip("\r").split("\t")) != MANIFEST_HEADER:
        raise ManifestError("missing header 'path<TAB>transcription<TAB>partition<TAB>ok'", 1)
    for no, raw in enumerate(lines[1:], start=2):
        cols = raw.rstrip("\r").split("\t")
        if len(cols) != 4:
            raise ManifestError(f"expected 4 columns, found {len(cols)}", no)
        p, text, part, ok = cols
        if p in seen:
            raise ManifestError(f"duplicate path {p!r}", no)
        seen.add(p)
        try:
            entries.append(ManifestEntry(p, text, part, _parse_ok(ok, no)))
        except ManifestError as exc:
            raise ManifestError(str(exc), no) from None
    return entries


def write_manifest(entries, path) -> None:
    with open(os.fspath(path), "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(MANIFEST_HEADER) + "\n")
        for e in entries:
            fh.write(f"{e.path}\t{e.transcription}\t{e.partition}\t{int(e.ok)}\n")


def filter_iam_style(entries) -> list[ManifestEntry]:
    """Drop badly segmented words and the '#' placeholder transcriptions."""
    return [e for e in entries if e.ok and e.transcription != "#"]


class Charset(CharVocab):
    """Ordered character list with reserved PAD, GO and END indices."""

    def encode_transcript(self, s: str) -> list[int]:
        return encode_transcript(s, self)


def encode_transcript(s: str, charset: CharVocab) -> list[int]:
    """[GO, c1 .. ck, END]; unknown characters raise a TranscriptError naming them."""
    bad = [c for c in s if c not in charset._index]
    if bad:
        raise TranscriptError(bad)
    return [charset.go] + charset.encode(s)


def decode_transcript(ids, charset: CharVocab) -> str:
    ids = list(ids)
    if ids and ids[0] == charset.go:
        ids = ids[1:]
    return charset.decode(ids)


def decode_hex_filename(name: str) -> str:
    """Transcription stored as hex-encoded UTF-8 in a file name, e.g. '6f6e65.png' -> 'one'.

    Only the part after the last underscore of the stem is decoded.
    """
    stem = Path(name).stem.rsplit("_", 1)[-1]
    try:
        return bytes.fromhex(stem).decode("utf-8")
    except ValueError as exc:
        raise ValueError(f"{name!r} does not carry a hex-encoded transcription") from exc


# ---------------------------------------------------------------- glyph sets

@dataclass
class GlyphSet:
    glyphs: dict
    classes: dict = field(default_factory=dict)

    def __post_init__(self):
        for ch in self.glyphs:
            self.classes.setdefault(ch, G.char_class(ch))

    @property
    def chars(self) -> str:
        return "".join(self.glyphs)

    def exemplar_count(self) -> int:
        return min(len(v) for v in self.glyphs.values()) if self.glyphs else 0

    def subset(self, indices) -> "GlyphSet":
        idx = list(indices)
        return GlyphSet({c: [v[i] for i in idx if i < len(v)] or v for c, v in self.glyphs.items()},
                        dict(self.classes))

    @classmethod
    def builtin(cls, exemplars: int = 6, height: int = 32, seed: int = 0, chars: str = G.BUILTIN_CHARS):
        glyphs = {}
        for ch in chars:
            rng = np.random.default_rng([seed, ord(ch)])
            glyphs[ch] = [GrayImage(G.draw_glyph(ch, height, rng)) for _ in range(exemplars)]
        return cls(glyphs)

    def save(self, root) -> None:
        root = Path(root)
        for ch, imgs in self.glyphs.items():
            d = root / "glyphs" / f"{ord(ch):04x}"
            d.mkdir(parents=True, exist_ok=True)
            for i, img in enumerate(imgs):
                save_png(img, d / f"{i}.png")
        with open(root / "classes.tsv", "w", encoding="utf-8") as fh:
            for ch in self.glyphs:
                fh.write(f"{ord(ch):04x}\t{self.classes[ch]}\n")

    @classmethod
    def load(cls, root) -> "GlyphSet":
        root = Path(root)
        classes = {}
        cls_file = root / "classes.tsv"
        if cls_file.exists():
            for line in cls_file.read_text(encoding="utf-8").splitlines():
                code, vclass = line.split("\t")
                classes[chr(int(code, 16))] = vclass
        glyphs = {}
        for d in sorted((root / "glyphs").iterdir()):
            files = sorted(d.glob("*.png"), key=lambda p: int(p.stem))
            glyphs[chr(int(d.name, 16))] = [load_png(f) for f in files]
        return cls(glyphs, classes)


# ---------------------------------------------------------------- COUT-style transformation

SLOTS = {G.CORE: ("up", "center", "down"), G.DESCENDER: ("center", "down"), G.ASCENDER: ("up", "center")}
INK_EPS = 1e-6


@dataclass
class CoutParts:
    character: np.ndarray
    fragments: np.ndarray
    slot: str
    sides: tuple


def _ink_columns(p: np.ndarray) -> np.ndarray:
    return np.flatnonzero((p < 1.0 - INK_EPS).any(axis=0))


def cout_parts(char_img: GrayImage, vclass: str, rng: np.random.Generator, donors=(),
               shrink: float = 0.75, border: int = 3) -> CoutParts:
    """Shrunk, vertically placed character plus donor stroke borders on its sides, as separate layers."""
    if vclass not in SLOTS:
        raise ValueError(f"unknown vertical class {vclass!r}")
    h, w = char_img.height, char_img.width
    sh, sw = max(1, int(round(h * shrink))), max(1, int(round(w * shrink)))
    small = resize(char_img, sh, sw).pixels
    slot = SLOTS[vclass][rng.integers(len(SLOTS[vclass]))]
    y0 = {"up": 0, "center": (h - sh) // 2, "down": h - sh}[slot]
    x0 = int(rng.integers(0, w - sw + 1))
    char_layer = np.ones((h, w))
    char_layer[y0: y0 + sh, x0: x0 + sw] = small
    frag_layer = np.ones((h, w))
    sides = ()
    donors = list(donors)
    if donors:
        sides = (("left",), ("right",), ("left", "right"))[rng.integers(3)]
        used = _ink_columns(char_layer)
        first, last = (used[0], used[-1]) if used.size else (w, -1)
        for side in sides:
            donor = donors[rng.integers(len(donors))]
            d = resize(donor, h, donor.width).pixels if donor.height != h else donor.pixels
            cols = _ink_columns(d)
            if cols.size == 0:
                continue
            if side == "left":
                room = min(border, first)
                if room <= 0:
                    continue
                # the end of a preceding letter shows up at the left edge
                frag_layer[:, :room] = d[:, cols[-1] - room + 1: cols[-1] + 1] if cols[-1] + 1 >= room else 1.0
            else:
                room = min(border, w - 1 - last)
                if room <= 0:
                    continue
                frag_layer[:, w - room:] = d[:, cols[0]: cols[0] + room] if cols[0] + room <= d.shape[1] else 1.0
    return CoutParts(char_layer, frag_layer, slot, sides)


def cout_transform(char_img: GrayImage, vclass: str, rng: np.random.Generator, donors=(),
                   shrink: float = 0.75, border: int = 3) -> GrayImage:
    parts = cout_parts(char_img, vclass, rng, donors, shrink, border)
    return GrayImage(np.minimum(parts.character, parts.fragments), {"slot": parts.slot, "sides": parts.sides})


def cout_dataset(glyphs: GlyphSet, multiplier: int = 8, seed: int = 0, shrink: float = 0.75,
                 border: int = 3) -> list[tuple[GrayImage, str]]:
    """``multiplier`` transformed copies of every exemplar, with donors drawn from the other characters.

    Copy k of exemplar i of character ch uses the generator seeded by (seed, ch, i, k).
    """
    if multiplier < 1:
        raise ValueError("multiplier must be >= 1")
    out = []
    for ch, exemplars in glyphs.glyphs.items():
        donors = [g for other, ex in glyphs.glyphs.items() if other != ch for g in ex]
        for i, img in enumerate(exemplars):
            for k in range(multiplier):
                rng = np.random.default_rng([seed, ord(ch), i, k])
                out.append((cout_transform(img, glyphs.classes[ch], rng, donors, shrink, border), ch))
    return out


# ---------------------------------------------------------------- synthetic words

@dataclass(frozen=True)
class SynthStyle:
    spacing: tuple = (0, 2)
    v_jitter: int = 1
    space_width: float = 0.3  # of the glyph height, for ' '

    def __post_init__(self):
        if self.spacing[0] > self.spacing[1]:
            raise ValueError("spacing range is reversed")
        if self.v_jitter < 0:
            raise ValueError("v_jitter must be >= 0")


def synth_word(glyphs: GlyphSet, word: str, rng: np.random.Generator,
               style: SynthStyle = SynthStyle()) -> tuple[GrayImage, str]:
    """Place one random exemplar per character left to right on a shared baseline.

    Width = sum of glyph widths + sum of the k-1 gaps; the canvas is 2 * v_jitter
    rows taller than the glyphs so vertical jitter never clips.
    """
    if not word:
        raise ValueError("cannot synthesise an empty word")
    missing = [c for c in word if c not in glyphs.glyphs and c != " "]
    if missing:
        raise MissingGlyphError(f"no glyph for {''.join(sorted(set(missing)))!r}")
    any_glyph = next(iter(glyphs.glyphs.values()))[0]
    gh = any_glyph.height
    pieces = []
    for c in word:
        if c == " ":
            pieces.append(np.ones((gh, max(1, int(round(style.space_width * gh))))))
        else:
            ex = glyphs.glyphs[c]
            pieces.append(ex[rng.integers(len(ex))].pixels)
    gaps = rng.integers(style.spacing[0], style.spacing[1] + 1, size=len(word) - 1)
    shifts = rng.integers(-style.v_jitter, style.v_jitter + 1, size=len(word))
    width = sum(p.shape[1] for p in pieces) + int(gaps.sum())
    J = style.v_jitter
    canvas = np.ones((gh + 2 * J, max(1, width)))
    x = 0
    for k, p in enumerate(pieces):
        y = J + shifts[k]
        w = p.shape[1]
        lo = max(x, 0)
        canvas[y: y + gh, lo: x + w] = np.minimum(canvas[y: y + gh, lo: x + w], p[:, lo - x:])
        x += w + (int(gaps[k]) if k < len(gaps) else 0)
    return GrayImage(canvas, {"text": word}), word


def _partition_glyphs(glyphs: GlyphSet) -> dict:
    n = glyphs.exemplar_count()
    if n < 3:
        return {p: glyphs for p in PARTITIONS}
    k = n // 3
    idx = np.arange(n)
    groups = (idx[: n - 2 * k], idx[n - 2 * k: n - k], idx[n - k:])
    return {p: glyphs.subset(g) for p, g in zip(PARTITIONS, groups)}


def generate_synth_dataset(glyphs: GlyphSet, words, sizes, seed: int, out_dir,
                           style: SynthStyle = SynthStyle(), distort=None) -> list[ManifestEntry]:
    """Render train/validation/test words to ``out_dir/images`` and write ``out_dir/manifest.tsv``.

    Partitions draw on disjoint glyph exemplars when every character has at
    least three. ``distort(img, rng)`` optionally post-processes each image.
    """
    words = list(words)
    if not words:
        raise ValueError("empty word list")
    out = Path(out_dir)
    entries = []
    per_part = _partition_glyphs(glyphs)
    for pi, (part, n) in enumerate(zip(PARTITIONS, sizes)):
        if n == 0:
            continue
        pick = np.random.default_rng([seed, pi])
        chosen = pick.choice(len(words), size=n, replace=n > len(words))
        (out / "images" / part).mkdir(parents=True, exist_ok=True)
        for i, wi in enumerate(chosen):
            rng = np.random.default_rng([seed, pi, i])
            img, text = synth_word(per_part[part], words[wi], rng, style)
            if distort is not None:
                img = distort(img, rng)
            rel = f"images/{part}/{i:05d}.png"
            save_png(img, out / rel)
            entries.append(ManifestEntry(rel, text, part, True))
    write_manifest(entries, out / "manifest.tsv")
    return entries


def parallel_map(fn, items, jobs: int = 1):
    """Order-preserving map; ``jobs > 1`` fans out over worker processes."""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def read_word_list(path) -> list[str]:
    with open(os.fspath(path), encoding="utf-8") as fh:
        return [w for w in (line.strip() for line in fh) if w]


__all__ = [
    "ManifestEntry", "ManifestError", "TranscriptError", "MissingGlyphError", "load_manifest", "write_manifest",
    "filter_iam_style", "Charset", "encode_transcript", "decode_transcript", "decode_hex_filename", "GlyphSet",
    "cout_parts", "cout_transform", "SynthStyle", "synth_word", "generate_synth_dataset", "parallel_map",
    "read_word_list", "VocabError", "cout_dataset",
]


# frequent English words over the built-in glyph alphabet, for synthetic experiments
COMMON_WORDS = tuple("""
the of and to in is was he for it with as his on be at by had are but from or have an they which one you
were her all she there would their we him been has when who will more no if out so said what up its about
into than them can only other new some could time these two may then do first any my now such like our over
man me even most made after also did many before must through back years where much your way well down should
because each just those people how too little state good very make world still own see men work long get here
between both life being under never day same another know while last might us great old year off come since
against go came right used take three states himself few house use during without again place around however
home small found thought went say part once general high upon school every does got united left number course
war until always away something fact though water less public put think almost hand enough far took head yet
government system better set told nothing night end why called dark find going look asked later knew point next
program city business give group toward young days let room president side social given present several order
national possible rather second face per among form important often things looked early white case john become
large big need four within felt along children saw best church ever least power development light thing seemed
family interest want members mind country area others done turned although open god service certain kind problem
began different door thus help sense means whole matter perhaps itself york times law human line above name
example action company hands local show whether five history gave today either act feet across taken past quite
anything seen having death week experience body word half really field am car words already themselves information
tell together college shall money period held keep sure free seems political real behind miss question making
office brought whose special heard major problems ago became federal moment study available known result street
economic boy position reason change south board individual job society areas west close turn love community true
court force full seem front hard wife six
""".split())
