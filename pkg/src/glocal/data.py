"""Dataset records, JSONL ingestion, sentence splitting, batch assembly.

The interchange format is UTF-8 JSON lines: one record object per line
with keys ``id``, ``image`` (relative path to a grayscale image file or
an inline nested array), ``report`` (optional text) and ``labels``
(optional integer list over the configured class ordering).
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import PIL.Image

from glocal.prompts import PromptGrammar, synthesize_report

LABEL_PRESENT = 1
LABEL_ABSENT = 0
LABEL_UNCERTAIN = -1
LABEL_MISSING = -2
VALID_LABELS = (LABEL_PRESENT, LABEL_ABSENT, LABEL_UNCERTAIN, LABEL_MISSING)

DEFAULT_ABBREVIATIONS = ("dr", "mr", "mrs", "ms", "st", "vs", "fig", "no", "e.g", "i.e", "cf")


class DatasetError(ValueError):
    """Malformed dataset file or record."""


@dataclass(frozen=True)
class Image:
    """Single grayscale image, channel-last, values in [0, 1]."""

    pixels: np.ndarray  # (H, W) float
    channels: int = 1

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise DatasetError(f"image must be 2-D, got shape {px.shape}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise DatasetError("image values outside [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class ReportRecord:
    """One image paired with its report sentences and optional labels."""

    id: str
    image: Image
    sentences: tuple[str, ...]
    labels: tuple[int, ...] | None = None

    def __post_init__(self):
        if not self.sentences:
            raise DatasetError(f"record {self.id!r}: sentences must be non-empty")
        if any(not s.strip() for s in self.sentences):
            raise DatasetError(f"record {self.id!r}: whitespace-only sentence")
        if self.labels is not None:
            bad = [v for v in self.labels if v not in VALID_LABELS]
            if bad:
                raise DatasetError(f"record {self.id!r}: invalid label values {bad}")
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))

    @property
    def report_text(self) -> str:
        return " ".join(self.sentences)


@dataclass(frozen=True)
class Batch:
    """Records plus flattened-sentence bookkeeping.

    ``sentence_offsets[i]`` is the start index of record i's sentences in
    the flattened list; record i owns rows [offsets[i], offsets[i+1]).
    """

    records: tuple[ReportRecord, ...]
    sentence_offsets: tuple[int, ...]  # length N+1
    sentence_mask: np.ndarray  # (N, n_max) bool

    @property
    def size(self) -> int:
        return len(self.records)

    @property
    def sentences(self) -> list[str]:
        return [s for r in self.records for s in r.sentences]

    @property
    def n_sentences(self) -> int:
        return self.sentence_offsets[-1]


def make_batch(records: list[ReportRecord]) -> Batch:
    if not records:
        raise DatasetError("batch must contain at least one record")
    counts = [len(r.sentences) for r in records]
    offsets = tuple(np.concatenate([[0], np.cumsum(counts)]).tolist())
    n_max = max(counts)
    mask = np.zeros((len(records), n_max), dtype=bool)
    for i, n in enumerate(counts):
        mask[i, :n] = True
    return Batch(records=tuple(records), sentence_offsets=offsets, sentence_mask=mask)


@dataclass
class DatasetConfig:
    """Ingestion knobs shared by every record of one dataset."""

    input_size: int = 64
    class_names: tuple[str, ...] = ()
    abbreviations: tuple[str, ...] = DEFAULT_ABBREVIATIONS
    grammar: PromptGrammar | None = None  # used to synthesize reports for label-only records
    synth_seed: int = 0
    synth_k_pos: int = 1
    synth_k_neg: int = 1
    synth_max_neg_classes: int = 3


_TERMINATOR = re.compile(r"[.!?](?=\s)")


def split_sentences(report: str, abbreviations: tuple[str, ...] = DEFAULT_ABBREVIATIONS) -> list[str]:
    """Split report text on ., ! or ? followed by whitespace.

    A terminator is suppressed when the word immediately before it is in
    the abbreviation guard list. Joining the output with single spaces
    reconstructs the report up to collapsed whitespace.
    """
    if not report or not report.strip():
        raise DatasetError("report text is empty")
    guard = {a.lower().rstrip(".") for a in abbreviations}
    pieces: list[str] = []
    start = 0
    for m in _TERMINATOR.finditer(report):
        end = m.end()
        prev = report[start : end - 1]
        last_word = prev.rsplit(None, 1)[-1] if prev.split() else ""
        if last_word.lower().rstrip(".!?") in guard:
            continue
        pieces.append(report[start:end])
        start = end
    pieces.append(report[start:])
    out = []
    for p in pieces:
        p = " ".join(p.split())
        if p:
            out.append(p)
    if not out:
        raise DatasetError("report text reduced to nothing after splitting")
    return out


def _resize_bilinear(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Deterministic align-corners bilinear resize of a 2-D array."""
    in_h, in_w = pixels.shape
    if (in_h, in_w) == (out_h, out_w):
        return pixels.copy()
    ys = np.linspace(0.0, in_h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, in_w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    tl = pixels[np.ix_(y0, x0)]
    tr = pixels[np.ix_(y0, x1)]
    bl = pixels[np.ix_(y1, x0)]
    br = pixels[np.ix_(y1, x1)]
    top = tl * (1 - fx) + tr * fx
    bot = bl * (1 - fx) + br * fx
    return top * (1 - fy) + bot * fy


def load_image_file(path: Path) -> np.ndarray:
    """Load a grayscale image file into a float array in [0, 1]."""
    with PIL.Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64)
    return arr / 255.0


def _record_from_obj(obj: dict, line_no: int, base_dir: Path, config: DatasetConfig) -> ReportRecord:
    for key in ("id", "image"):
        if key not in obj:
            raise DatasetError(f"line {line_no}: missing required key {key!r}")
    rid = str(obj["id"])
    img_field = obj["image"]
    if isinstance(img_field, str):
        pixels = load_image_file(base_dir / img_field)
    else:
        pixels = np.asarray(img_field, dtype=np.float64)
        if pixels.ndim != 2:
            raise DatasetError(f"line {line_no}: inline image must be a 2-D array")
    if pixels.size == 0:
        raise DatasetError(f"line {line_no}: empty image")
    if pixels.min() < 0.0 or pixels.max() > 1.0:
        raise DatasetError(f"line {line_no}: image values outside [0, 1]")
    size = config.input_size
    pixels = np.clip(_resize_bilinear(pixels, size, size), 0.0, 1.0)

    report = obj.get("report")
    labels = obj.get("labels")
    if labels is not None:
        labels = tuple(int(v) for v in labels)
        if config.class_names and len(labels) != len(config.class_names):
            raise DatasetError(
                f"line {line_no}: {len(labels)} labels but {len(config.class_names)} configured classes"
            )

    if report is not None and str(report).strip():
        sentences = tuple(split_sentences(str(report), config.abbreviations))
    elif labels is not None:
        if config.grammar is None:
            raise DatasetError(f"line {line_no}: label-only record but no grammar configured for synthesis")
        seed = _derive_record_seed(config.synth_seed, rid)
        sentences = tuple(
            synthesize_report(
                labels,
                config.grammar,
                rng_seed=seed,
                k_pos=config.synth_k_pos,
                k_neg=config.synth_k_neg,
                max_neg_classes=config.synth_max_neg_classes,
            )
        )
    else:
        raise DatasetError(f"line {line_no}: record has neither report nor labels")

    return ReportRecord(id=rid, image=Image(pixels), sentences=sentences, labels=labels)


def _derive_record_seed(base: int, record_id: str) -> int:
    import zlib

    return (int(base) * 1_000_003 + zlib.crc32(record_id.encode("utf-8"))) % (2**32)


def load_dataset(path: str | Path, config: DatasetConfig | None = None) -> list[ReportRecord]:
    """Read a JSONL dataset file into records, in file order."""
    config = config or DatasetConfig()
    path = Path(path)
    base_dir = path.parent
    records: list[ReportRecord] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"line {line_no}: malformed JSON ({e.msg})") from e
            if not isinstance(obj, dict):
                raise DatasetError(f"line {line_no}: record must be an object")
            rec = _record_from_obj(obj, line_no, base_dir, config)
            if rec.id in seen_ids:
                raise DatasetError(f"line {line_no}: duplicate record id {rec.id!r}")
            seen_ids.add(rec.id)
            records.append(rec)
    if not records:
        raise DatasetError(f"{path}: dataset file contains no records")
    return records


def save_dataset(records: list[ReportRecord], path: str | Path, inline_images: bool = True) -> None:
    """Write records back to JSONL; images inline as nested arrays."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "id": rec.id,
                "image": np.round(rec.image.pixels, 9).tolist(),
                "report": rec.report_text,
            }
            if rec.labels is not None:
                obj["labels"] = list(rec.labels)
            fh.write(json.dumps(obj) + "\n")


def make_batches(records: list[ReportRecord], batch_size: int, seed: int) -> list[Batch]:
    """Shuffle deterministically and pack batches with unique report texts.

    Records whose report text already appears in the batch being filled are
    deferred to later batches; the trailing partial batch is kept.
    """
    if batch_size < 1:
        raise DatasetError("batch_size must be >= 1")
    if batch_size > len(records):
        raise DatasetError(f"batch_size {batch_size} exceeds record count {len(records)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    remaining = deque(records[i] for i in order)
    batches: list[Batch] = []
    while remaining:
        current: list[ReportRecord] = []
        deferred: list[ReportRecord] = []
        seen_texts: set[str] = set()
        while remaining and len(current) < batch_size:
            rec = remaining.popleft()
            text = rec.report_text
            if text in seen_texts:
                deferred.append(rec)
            else:
                seen_texts.add(text)
                current.append(rec)
        batches.append(make_batch(current))
        if deferred:
            remaining.extendleft(reversed(deferred))
    return batches
