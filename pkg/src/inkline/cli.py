"""``inkline`` command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from . import data as D
from .augment import AugmentConfig, augment
from .convnets import build_lenet_classifier, build_resnet, build_vgg
from .decode import Lexicon, decode_with_lexicon, nearest_word
from .evalkit import UndefinedReferenceError, bootstrap_ci, corpus_cer, wer
from .imaging import GrayImage, ImageError, load_png, save_png
from .normalize import NormalizeConfig, normalize_pipeline
from .seq2seq import EncoderConfig, ModelConfig, Seq2SeqModel, attention_csv, greedy_decode, load_model
from .tensor import CheckpointError
from .train import TrainConfig, WordSet, evaluate, prepare_image, train_loop, write_stats_csv


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------- run configuration

_MODEL_KEYS = ("reader", "features", "patch_width", "patch_step", "vgg_blocks", "attention_size")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    normalize: NormalizeConfig = NormalizeConfig()
    use_normalization: bool = True
    augment: AugmentConfig = AugmentConfig()
    model: dict = dataclasses.field(default_factory=dict)
    encoder: EncoderConfig = EncoderConfig()
    train: TrainConfig = TrainConfig()
    lexicon: str | None = None
    seed: int = 0

    def model_config(self, chars) -> ModelConfig:
        return ModelConfig(chars=tuple(chars), image_height=self.normalize.target_height, encoder=self.encoder,
                           dropout=self.train.dropout, seed=self.seed, **self.model)

    def to_json(self) -> dict:
        return {
            "normalize": dataclasses.asdict(self.normalize),
            "use_normalization": self.use_normalization,
            "augment": dataclasses.asdict(self.augment),
            "model": {k: self.model.get(k, getattr(ModelConfig, k)) for k in _MODEL_KEYS},
            "encoder": dataclasses.asdict(self.encoder),
            "train": dataclasses.asdict(self.train),
            "lexicon": self.lexicon,
            "seed": self.seed,
        }


def _section(cls, values, name: str):
    if not isinstance(values, dict):
        raise UsageError(f"config section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise UsageError(f"unknown keys in {name!r}: {', '.join(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {name!r} section: {exc}") from None


def parse_run_config(raw: dict, overrides: dict | None = None) -> RunConfig:
    """Strict parse: every level rejects keys it does not know. ``overrides`` maps 'section.key' to a value."""
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    raw = json.loads(json.dumps(raw))
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        head, _, key = dotted.partition(".")
        if key:
            raw.setdefault(head, {})[key] = value
        else:
            raw[head] = value
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    model = raw.get("model", {})
    if not isinstance(model, dict) or set(model) - set(_MODEL_KEYS):
        extra = sorted(set(model) - set(_MODEL_KEYS)) if isinstance(model, dict) else ["<not an object>"]
        raise UsageError(f"unknown keys in 'model': {', '.join(extra)}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise UsageError("seed must be an integer")
    train_raw = {"seed": seed, **raw.get("train", {})}
    cfg = RunConfig(
        normalize=_section(NormalizeConfig, {"seed": seed, **raw.get("normalize", {})}, "normalize"),
        use_normalization=bool(raw.get("use_normalization", True)),
        augment=_section(AugmentConfig, {"rng_seed": seed, **raw.get("augment", {})}, "augment"),
        model=dict(model),
        encoder=_section(EncoderConfig, raw.get("encoder", {}), "encoder"),
        train=_section(TrainConfig, train_raw, "train"),
        lexicon=raw.get("lexicon"),
        seed=seed,
    )
    try:
        cfg.model_config(("a",))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid 'model' section: {exc}") from None
    return cfg


def load_run_config(path, overrides=None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None
    return parse_run_config(raw, overrides)


# ---------------------------------------------------------------- helpers

def _image_paths(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(path.rglob("*.png"))
    if not path.exists():
        raise DataError(f"no such file or directory: {path}")
    return [path]


def _normalize_one(args, cfg: NormalizeConfig):
    src, dst = args
    save_png(normalize_pipeline(load_png(src), cfg), dst)
    return dst


def preview_grid(images, cols: int = 3, gap: int = 2) -> GrayImage:
    """Tile images (original first) on a white canvas, row-major."""
    h = max(i.height for i in images)
    w = max(i.width for i in images)
    rows = -(-len(images) // cols)
    canvas = np.ones((rows * h + (rows - 1) * gap, cols * w + (cols - 1) * gap))
    for k, img in enumerate(images):
        r, c = divmod(k, cols)
        canvas[r * (h + gap): r * (h + gap) + img.height, c * (w + gap): c * (w + gap) + img.width] = img.pixels
    return GrayImage(canvas)


def _augment_one(args, cfg: AugmentConfig, seed: int):
    src, dst, k = args
    rng = np.random.default_rng([seed, k])
    save_png(augment(load_png(src), cfg, rng), dst)
    return dst


def _pairs(inp: Path, out: Path, suffix: str = "") -> list:
    paths = _image_paths(inp)
    base = inp if inp.is_dir() else inp.parent
    pairs = []
    for p in paths:
        rel = p.relative_to(base)
        dst = out / rel.with_name(rel.stem + suffix + rel.suffix)
        dst.parent.mkdir(parents=True, exist_ok=True)
        pairs.append((p, dst))
    return pairs


def _load_partition(data_dir: Path, partition: str, run: RunConfig, jobs: int) -> WordSet:
    manifest = data_dir / "manifest.tsv"
    if not manifest.exists():
        raise DataError(f"missing manifest: {manifest}")
    entries = [e for e in D.filter_iam_style(D.load_manifest(manifest)) if e.partition == partition]
    if not entries:
        raise DataError(f"no usable {partition} entries in {manifest}")
    prep = partial(_prepare_path, cfg=run.normalize, normalize=run.use_normalization)
    images = D.parallel_map(prep, [data_dir / e.path for e in entries], jobs)
    return WordSet(np.stack(images), [e.transcription for e in entries])


def _prepare_path(path, cfg, normalize):
    return prepare_image(load_png(path), cfg, normalize)


def _parse_hw(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"expected HxW, got {text!r}") from None
    return h, w


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------- subcommands

def cmd_normalize(a) -> int:
    run = load_run_config(a.config, {"seed": a.seed, "normalize.target_height": a.height,
                                     "normalize.target_width": a.width, "normalize.pad_side": a.pad_side})
    pairs = _pairs(Path(a.input), Path(a.out))
    D.parallel_map(partial(_normalize_one, cfg=run.normalize), pairs, a.jobs)
    print(f"normalized {len(pairs)} image(s) into {a.out}")
    return 0


def cmd_augment(a) -> int:
    if a.copies < 1:
        raise UsageError("--n must be >= 1")
    run = load_run_config(a.config, {"seed": a.seed})
    seed = run.seed
    jobs = []
    k = 0
    for src, _ in _pairs(Path(a.input), Path(a.out)):
        for c in range(a.copies):
            dst = Path(a.out) / src.relative_to(Path(a.input) if Path(a.input).is_dir() else src.parent)
            dst = dst.with_name(f"{dst.stem}_aug{c}{dst.suffix}")
            jobs.append((src, dst, k))
            k += 1
    D.parallel_map(partial(_augment_one, cfg=run.augment, seed=seed), jobs, a.jobs)
    if not a.no_grid:
        for start in range(0, len(jobs), a.copies):
            group = jobs[start: start + a.copies]
            grid = preview_grid([load_png(src) for src, _, _ in group[:1]] + [load_png(d) for _, d, _ in group])
            save_png(grid, group[0][1].with_name(group[0][0].stem + "_grid.png"))
    print(f"wrote {len(jobs)} augmented image(s) into {a.out}")
    return 0


def cmd_synth(a) -> int:
    seed = 0 if a.seed is None else a.seed
    try:
        sizes = tuple(int(v) for v in a.sizes.split(","))
    except ValueError:
        raise UsageError("--sizes expects three comma-separated integers") from None
    if len(sizes) != 3 or min(sizes) < 0:
        raise UsageError("--sizes expects three comma-separated nonnegative integers")
    glyphs = D.GlyphSet.load(a.glyphs) if a.glyphs else D.GlyphSet.builtin(a.exemplars, a.glyph_height, seed)
    words = D.read_word_list(a.words) if a.words else list(D.COMMON_WORDS)
    entries = D.generate_synth_dataset(glyphs, words, sizes, seed, a.out)
    print(f"wrote {len(entries)} image(s) and {Path(a.out) / 'manifest.tsv'}")
    return 0


def cmd_train(a) -> int:
    overrides = {"seed": a.seed, "train.max_epochs": a.max_epochs}
    run = load_run_config(a.config, overrides)
    resolved = json.dumps(run.to_json(), indent=2, sort_keys=True)
    _log("resolved config:\n" + resolved)
    data_dir, out = Path(a.data), Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(resolved + "\n", encoding="utf-8")
    train = _load_partition(data_dir, "train", run, a.jobs)
    val = _load_partition(data_dir, "validation", run, a.jobs)
    chars = sorted({c for t in train.texts for c in t})
    model = Seq2SeqModel(run.model_config(chars))
    _log(f"model parameters: {model.param_count():,}")
    result = train_loop(model, train, val, run.train, run.augment,
                        log=lambda s: _log(f"epoch {s.epoch} loss {s.loss:.4f} lr {s.lr:.6f} "
                                           f"val_cer {s.val_cer:.4f} val_wer {s.val_wer:.4f}"))
    (out / "best.ckpt").write_bytes(result.best_checkpoint)
    write_stats_csv(result.history, out / "stats.csv")
    print(f"best epoch {result.best_epoch} val_wer {result.best_val_wer:.4f} ({result.stop_reason})")
    return 0


def _load_checkpoint(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise DataError(f"no such checkpoint: {path}") from None


def _write_predictions(path, records, lexicon: bool) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id\tprediction\treference\n")
        for r in records:
            pred = r.lexicon_prediction if lexicon else r.prediction
            fh.write(f"{r.index}\t{pred}\t{r.reference}\n")


def cmd_evaluate(a) -> int:
    model, header = _load_checkpoint(a.model)
    run = load_run_config(a.config, {"seed": a.seed})
    ws = _load_partition(Path(a.data), a.partition, run, a.jobs)
    if ws.images.shape[1] != model.cfg.image_height:
        raise DataError("image height of the data does not match the model")
    lex_path = a.lexicon or run.lexicon
    lex = Lexicon.load(lex_path) if lex_path else None
    res = evaluate(model, ws, lexicon=lex)
    print(f"CER {res.cer:.4f} WER {res.wer:.4f}")
    if lex is not None:
        print(f"lexicon CER {res.lexicon_cer:.4f} WER {res.lexicon_wer:.4f}")
    bad = [r for r in res.records if r.error]
    if bad:
        _log(f"{len(bad)} reference(s) contain characters outside the model vocabulary")
    if a.out:
        _write_predictions(a.out, res.records, lex is not None)
    return 0


def cmd_decode(a) -> int:
    if a.preds:
        if not a.lexicon:
            raise UsageError("--preds needs --lexicon")
        lex = Lexicon.load(a.lexicon)
        if len(lex) == 0:
            raise DataError("lexicon is empty")
        snapped, dist = decode_with_lexicon(_read_lines(a.preds), lex)
        text = "".join(f"{w}\t{d}\n" for w, d in zip(snapped, dist))
        if a.out:
            Path(a.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        return 0
    if not (a.model and a.input):
        raise UsageError("pass --model and --input, or --preds and --lexicon")
    model, _ = _load_checkpoint(a.model)
    run = load_run_config(a.config, {"seed": a.seed})
    lex = Lexicon.load(a.lexicon) if a.lexicon else None
    for k, p in enumerate(_image_paths(Path(a.input))):
        x = prepare_image(load_png(p), run.normalize, run.use_normalization)
        if x.shape[0] != model.cfg.image_height:
            raise DataError("normalized height does not match the model; pass the training config")
        dec = greedy_decode(model, x[None], a.max_len)
        text = dec.texts[0]
        shown = nearest_word(text, lex)[0] if lex is not None else text
        print(f"{p}\t{shown}")
        if a.attention_dir:
            d = Path(a.attention_dir)
            d.mkdir(parents=True, exist_ok=True)
            (d / f"{p.stem}.csv").write_text(attention_csv(dec.attention[0], text), encoding="utf-8")
    return 0


def _read_lines(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [line.rstrip("\r\n") for line in fh]
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None


def cmd_report(a) -> int:
    if a.predictions:
        rows = _read_lines(a.predictions)
        if not rows or rows[0].split("\t") != ["id", "prediction", "reference"]:
            raise DataError("predictions TSV needs the header id, prediction, reference")
        cols = [r.split("\t") for r in rows[1:] if r]
        if any(len(c) != 3 for c in cols):
            raise DataError("predictions TSV rows need three columns")
        preds, refs = [c[1] for c in cols], [c[2] for c in cols]
    elif a.pred and a.ref:
        preds, refs = _read_lines(a.pred), _read_lines(a.ref)
        if len(preds) != len(refs):
            raise DataError("prediction and reference files differ in length")
    else:
        raise UsageError("pass --predictions, or both --pred and --ref")
    try:
        c, w = corpus_cer(preds, refs), wer(preds, refs)
    except UndefinedReferenceError as exc:
        raise DataError(str(exc)) from None
    out = {"n": len(refs), "cer": c, "wer": w}
    if a.bootstrap and len(refs) >= 2:
        rng = np.random.default_rng(0 if a.seed is None else a.seed)
        for name, fn in (("cer", corpus_cer), ("wer", wer)):
            ci = bootstrap_ci(preds=preds, reals=refs, metric=fn, n_resamples=a.bootstrap, rng=rng)
            out[f"{name}_ci"] = [ci.lower, ci.upper]
    if a.json:
        print(json.dumps(out, sort_keys=True))
    else:
        print(f"samples {len(refs)}")
        print(f"CER {c:.4f}")
        print(f"WER {w:.4f}")
        for name in ("cer", "wer"):
            if f"{name}_ci" in out:
                lo, hi = out[f"{name}_ci"]
                print(f"{name.upper()} 95% CI [{lo:.4f}, {hi:.4f}]")
    return 0


def cmd_inspect(a) -> int:
    if a.model:
        model, header = _load_checkpoint(a.model)
        print(json.dumps(header, indent=2, sort_keys=True))
        print(f"total parameters: {model.param_count():,}")
        return 0
    if not a.arch:
        raise UsageError("pass --arch or --model")
    hw = _parse_hw(a.input)
    if a.arch == "lenet":
        net = build_lenet_classifier(hw, classes=a.classes)
    elif a.arch == "vgg":
        net = build_vgg(a.blocks, hw, classes=a.classes)
    else:
        net = build_resnet(a.blocks, hw, classes=a.classes)
    print(net.format_summary())
    return 0


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for every randomized step")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes for dataset-wide work")

    p = _Parser(prog="inkline", description="Offline handwritten word recognition toolkit.")
    p.add_argument("--version", action="version", version=f"inkline {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("normalize", parents=[common], help="normalize word images")
    s.add_argument("--in", "--input", dest="input", required=True, help="PNG file or directory")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--height", type=int, help="target height (default 48)")
    s.add_argument("--width", type=int, help="target width (default 192)")
    s.add_argument("--pad-side", choices=("left", "right"))
    s.set_defaults(func=cmd_normalize)

    s = sub.add_parser("augment", parents=[common], help="write augmented copies of word images")
    s.add_argument("--in", "--input", dest="input", required=True, help="PNG file or directory")
    s.add_argument("--out", required=True)
    s.add_argument("--n", "--copies", dest="copies", type=int, default=8, help="copies per image")
    s.add_argument("--config")
    s.add_argument("--no-grid", action="store_true", help="skip the per-image preview grid")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic word dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--sizes", default="32,8,8", help="train,validation,test counts")
    s.add_argument("--words", help="word list, one per line")
    s.add_argument("--glyphs", help="glyph-set directory (default: built-in glyphs)")
    s.add_argument("--exemplars", type=int, default=6)
    s.add_argument("--glyph-height", type=int, default=32)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train a recognizer")
    s.add_argument("--config")
    s.add_argument("--data", required=True, help="directory holding manifest.tsv")
    s.add_argument("--out", required=True)
    s.add_argument("--max-epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a partition")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--partition", default="test", choices=D.PARTITIONS)
    s.add_argument("--config")
    s.add_argument("--lexicon")
    s.add_argument("--out", help="predictions TSV (id, prediction, reference)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("decode", parents=[common], help="transcribe word images or snap predictions to a lexicon")
    s.add_argument("--model")
    s.add_argument("--in", "--input", dest="input")
    s.add_argument("--preds", help="one raw prediction per line; written back as word<TAB>distance")
    s.add_argument("--out")
    s.add_argument("--config")
    s.add_argument("--lexicon")
    s.add_argument("--max-len", type=int, default=32)
    s.add_argument("--attention-dir", help="write one attention CSV per image here")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("report", parents=[common], help="CER/WER of predictions against references")
    s.add_argument("--predictions", help="predictions TSV")
    s.add_argument("--pred", help="one prediction per line")
    s.add_argument("--ref", help="one reference per line")
    s.add_argument("--bootstrap", type=int, default=0, metavar="N", help="bootstrap resamples for CIs")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("inspect-model", parents=[common], help="layer table and parameter count")
    s.add_argument("--arch", choices=("lenet", "vgg", "resnet"))
    s.add_argument("--input", default="28x28", help="HxW")
    s.add_argument("--classes", type=int, default=10)
    s.add_argument("--blocks", type=int, default=3)
    s.add_argument("--model", help="describe a saved checkpoint instead")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"inkline: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ImageError, D.ManifestError, CheckpointError, D.MissingGlyphError,
            D.TranscriptError, UndefinedReferenceError, OSError) as exc:
        print(f"inkline: data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"inkline: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
