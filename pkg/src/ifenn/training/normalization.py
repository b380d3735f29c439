"""Affine input/output normalisation fitted on the training split."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError
from ..operatornet import Scaling

MODES = ("minmax01", "minmax11", "standardize")
ARRAYS = ("load", "strain", "coords", "output")


def _fit(x: np.ndarray, mode: str, channel_axis: int | None) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    if channel_axis is None:
        flat = x.reshape(-1, 1)
    else:
        flat = np.moveaxis(x, channel_axis, -1).reshape(-1, x.shape[channel_axis])
    if mode == "standardize":
        shift, scale = flat.mean(axis=0), flat.std(axis=0)
    else:
        lo, hi = flat.min(axis=0), flat.max(axis=0)
        if mode == "minmax01":
            shift, scale = lo, hi - lo
        else:
            shift, scale = 0.5 * (lo + hi), 0.5 * (hi - lo)
    scale = np.where(scale > 0, scale, 1.0)
    return scale, shift


@dataclass
class NormalizationSpec:
    """Per-array ``(scale, shift)`` with ``normalized = (x - shift) / scale``.

    ``minmax01`` maps the training range to [0, 1], ``minmax11`` to [-1, 1]
    and ``standardize`` to zero mean and unit deviation.  A degenerate
    channel (zero range or deviation) keeps scale 1.
    """

    mode: str = "minmax11"
    stats: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgumentError(f"unknown normalisation mode {self.mode!r}; choose from {MODES}")

    @classmethod
    def fit(cls, mode: str, load: np.ndarray, strain: np.ndarray, coords: np.ndarray,
            labels: np.ndarray) -> "NormalizationSpec":
        """Statistics from the arrays given (callers pass the training split only).

        Load and strain get one channel each, coordinates one per axis and the
        labels one per output component.
        """
        spec = cls(mode)
        spec.stats = {
            "load": _fit(load, mode, None),
            "strain": _fit(strain, mode, None),
            "coords": _fit(coords, mode, -1),
            "output": _fit(labels, mode, -1),
        }
        return spec

    def _get(self, name: str):
        if name not in self.stats:
            raise InvalidArgumentError(f"no statistics for {name!r}")
        return self.stats[name]

    def normalize(self, name: str, x) -> np.ndarray:
        scale, shift = self._get(name)
        return (np.asarray(x, dtype=float) - shift) / scale

    def denormalize(self, name: str, x) -> np.ndarray:
        scale, shift = self._get(name)
        return np.asarray(x, dtype=float) * scale + shift

    def to_scaling(self) -> Scaling:
        return Scaling(**{k: tuple(np.array(v) for v in self._get(k)) for k in ARRAYS})

    def to_text(self) -> str:
        lines = [f"normalization.mode = {self.mode}"]
        for name in ARRAYS:
            if name in self.stats:
                scale, shift = self.stats[name]
                lines.append(f"normalization.{name}.scale = " + " ".join(repr(float(v)) for v in scale))
                lines.append(f"normalization.{name}.shift = " + " ".join(repr(float(v)) for v in shift))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "NormalizationSpec | None":
        if "normalization.mode" not in kv:
            return None
        spec = cls(kv["normalization.mode"])
        for name in ARRAYS:
            key = f"normalization.{name}"
            if f"{key}.scale" in kv:
                spec.stats[name] = (np.array([float(v) for v in kv[f"{key}.scale"].split()]),
                                    np.array([float(v) for v in kv[f"{key}.shift"].split()]))
        return spec
