"""Result serialization: mask image, probability block, run manifest."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptPayload, IoFailure
from .nrvf import save_probabilities
from .walk import LabelProbabilities


def save_mask_pgm(path, mask: np.ndarray) -> None:
    """Write class indices as a binary 8-bit portable graymap (P5)."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-d, got shape {m.shape}")
    if m.min() < 0 or m.max() > 255:
        raise ValueError("class indices must fit in 8 bits for a graymap mask")
    h, w = m.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    try:
        Path(path).write_bytes(header + m.astype(np.uint8).tobytes())
    except OSError as exc:
        raise IoFailure(f"writing {path}: {exc}") from exc


def load_mask_pgm(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"reading {path}: {exc}") from exc
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise CorruptPayload("not an 8-bit binary graymap")
    try:
        w, h = (int(t) for t in parts[1].split())
    except ValueError as exc:
        raise CorruptPayload("malformed graymap dimensions") from exc
    pixels = parts[3]
    if len(pixels) != w * h:
        raise CorruptPayload(f"graymap declares {w * h} pixels, file has {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


def upsample_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour upsampling of a grid mask to image resolution."""
    m = np.asarray(mask)
    h, w = m.shape
    rows = np.minimum((np.arange(out_h) * h) // out_h, h - 1)
    cols = np.minimum((np.arange(out_w) * w) // out_w, w - 1)
    return m[np.ix_(rows, cols)]


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a run, plus its measurements.

    ``config`` echoes every tunable parameter; re-running with it yields
    bit-identical mask/probability files in the exact modes. Wall times
    are informational and naturally vary between runs.
    """

    config: dict
    input_path: str
    class_names: tuple[str, ...]
    head_entropies: tuple[float, ...]
    head_weights: tuple[float, ...]
    steps_used: int
    residual_bound: float
    wall_times: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        raw = json.loads(text)
        return cls(
            config=raw["config"],
            input_path=raw["input_path"],
            class_names=tuple(raw["class_names"]),
            head_entropies=tuple(raw["head_entropies"]),
            head_weights=tuple(raw["head_weights"]),
            steps_used=raw["steps_used"],
            residual_bound=raw["residual_bound"],
            wall_times=raw.get("wall_times", {}),
        )


def save_outputs(
    probs: LabelProbabilities,
    mask: np.ndarray,
    manifest: RunManifest,
    out_dir,
) -> dict[str, Path]:
    """Write mask.pgm, probabilities.nrvp, and manifest.json into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"creating {out}: {exc}") from exc
    paths = {
        "mask": out / "mask.pgm",
        "probabilities": out / "probabilities.nrvp",
        "manifest": out / "manifest.json",
    }
    save_mask_pgm(paths["mask"], mask)
    save_probabilities(paths["probabilities"], probs.p)
    try:
        paths["manifest"].write_text(manifest.to_json() + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"writing {paths['manifest']}: {exc}") from exc
    return paths
