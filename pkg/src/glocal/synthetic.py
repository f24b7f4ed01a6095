"""Procedural image/report/label triples for end-to-end verification.

Each class is a visually distinct motif rendered onto a noisy background;
reports are synthesized from the realized label vector through the prompt
grammar, so image content and report text are causally linked.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import PIL.Image

from glocal.prompts import PromptGrammar, default_grammar, synthesize_report


class SyntheticError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticClassSpec:
    """One renderable motif: primitive family, size/intensity ranges, region."""

    name: str
    motif: str  # disk | ring | hbar | vbar | checker | dark_disk
    size_range: tuple[int, int]
    intensity_range: tuple[float, float]
    region: tuple[int, int, int, int]  # y0, y1, x0, x1 for the motif center/origin


def default_class_specs(image_size: int = 64) -> list[SyntheticClassSpec]:
    """Six motifs, pairwise distinct in local appearance."""
    s = image_size // 64  # ranges below assume 64px and scale linearly
    r = lambda a, b: (a * s, b * s)
    box = lambda y0, y1, x0, x1: (y0 * s, y1 * s, x0 * s, x1 * s)
    return [
        SyntheticClassSpec("alpha opacity", "disk", r(5, 8), (0.35, 0.55), box(10, 22, 10, 22)),
        SyntheticClassSpec("beta ring", "ring", r(6, 9), (0.35, 0.55), box(10, 22, 42, 54)),
        SyntheticClassSpec("gamma streak", "hbar", r(18, 28), (0.30, 0.50), box(28, 36, 8, 24)),
        SyntheticClassSpec("delta band", "vbar", r(18, 28), (0.30, 0.50), box(12, 30, 48, 58)),
        SyntheticClassSpec("epsilon texture", "checker", r(12, 16), (0.20, 0.30), box(42, 54, 6, 18)),
        SyntheticClassSpec("zeta shadow", "dark_disk", r(5, 8), (0.15, 0.25), box(42, 54, 42, 54)),
    ]


def _render_motif(img: np.ndarray, spec: SyntheticClassSpec, rng: np.random.Generator) -> None:
    h, w = img.shape
    size = int(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
    amp = float(rng.uniform(*spec.intensity_range))
    y0, y1, x0, x1 = spec.region
    cy = int(rng.integers(y0, y1 + 1))
    cx = int(rng.integers(x0, x1 + 1))
    yy, xx = np.indices(img.shape)

    if spec.motif == "disk":
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= size**2] += amp
    elif spec.motif == "dark_disk":
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= size**2] -= amp
    elif spec.motif == "ring":
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        inner = max(1, size - max(2, size // 3))
        img[(d2 <= size**2) & (d2 >= inner**2)] += amp
    elif spec.motif == "hbar":
        thickness = int(rng.integers(2, 5))
        ys = slice(max(0, cy - thickness // 2), min(h, cy + (thickness + 1) // 2))
        xs = slice(max(0, cx), min(w, cx + size))
        img[ys, xs] += amp
    elif spec.motif == "vbar":
        thickness = int(rng.integers(2, 5))
        ys = slice(max(0, cy), min(h, cy + size))
        xs = slice(max(0, cx - thickness // 2), min(w, cx + (thickness + 1) // 2))
        img[ys, xs] += amp
    elif spec.motif == "checker":
        cell = 2
        ys = slice(max(0, cy), min(h, cy + size))
        xs = slice(max(0, cx), min(w, cx + size))
        sub_y, sub_x = np.indices(img[ys, xs].shape)
        pattern = ((sub_y // cell + sub_x // cell) % 2) * 2.0 - 1.0
        img[ys, xs] += amp * pattern
    else:
        raise SyntheticError(f"unknown motif {spec.motif!r}")


def render_sample(
    labels: np.ndarray,
    specs: list[SyntheticClassSpec],
    rng: np.random.Generator,
    image_size: int = 64,
    background: float = 0.25,
    noise_sigma: float = 0.05,
) -> np.ndarray:
    img = np.full((image_size, image_size), background)
    img += rng.normal(0.0, noise_sigma, size=img.shape)
    for spec, present in zip(specs, labels):
        if present == 1:
            _render_motif(img, spec, rng)
    return np.clip(img, 0.0, 1.0)


def generate_dataset(
    num_samples: int,
    out_dir: str | Path,
    class_specs: list[SyntheticClassSpec] | None = None,
    grammar: PromptGrammar | None = None,
    seed: int = 0,
    presence_probability: float = 0.35,
    image_size: int = 64,
    id_prefix: str = "syn",
    max_neg_classes: int = 3,
) -> Path:
    """Write dataset.jsonl, images/*.png, labels.csv and grammar.yaml.

    Returns the path of the dataset file. Deterministic under ``seed``.
    """
    specs = class_specs if class_specs is not None else default_class_specs(image_size)
    grammar = grammar or default_grammar()
    if len(specs) < 2:
        raise SyntheticError("need at least 2 classes")
    names = [s.name for s in specs]
    if tuple(names) != tuple(grammar.class_names):
        raise SyntheticError(f"class specs {names} do not match grammar classes {list(grammar.class_names)}")

    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    dataset_path = out_dir / "dataset.jsonl"
    labels_path = out_dir / "labels.csv"

    from glocal.prompts import save_grammar

    save_grammar(grammar, out_dir / "grammar.yaml")

    with open(dataset_path, "w", encoding="utf-8") as ds, open(labels_path, "w", newline="", encoding="utf-8") as lf:
        label_writer = csv.writer(lf)
        label_writer.writerow(["id"] + names)
        for i in range(num_samples):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, i)))
            labels = (rng.uniform(size=len(specs)) < presence_probability).astype(int)
            pixels = render_sample(labels, specs, rng, image_size=image_size)
            rid = f"{id_prefix}{i:05d}"
            rel = f"images/{rid}.png"
            arr = np.round(pixels * 255.0).astype(np.uint8)
            PIL.Image.fromarray(arr, mode="L").save(img_dir / f"{rid}.png")
            sentences = synthesize_report(
                labels.tolist(), grammar, rng_seed=int(rng.integers(1 << 31)), max_neg_classes=max_neg_classes
            )
            report = " ".join(s + "." for s in sentences)
            ds.write(
                json.dumps({"id": rid, "image": rel, "report": report, "labels": labels.tolist()}) + "\n"
            )
            label_writer.writerow([rid] + labels.tolist())
    return dataset_path


def read_labels_csv(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    """Return (ids, class_names, label matrix)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ids, rows = [], []
        for row in reader:
            ids.append(row[0])
            rows.append([int(v) for v in row[1:]])
    return ids, header[1:], np.asarray(rows, dtype=int)
