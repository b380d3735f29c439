"""Training losses and the error measures used to report test accuracy."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import difftensor as dt
from ..errors import InvalidArgumentError

LOSS_KINDS = ("L2", "L2Norm", "SSE", "MSE")


def _check_kind(kind: str):
    if kind not in LOSS_KINDS:
        raise InvalidArgumentError(f"unknown loss {kind!r}; choose from {LOSS_KINDS}")


def compute_loss(kind: str, y_pred, y_true) -> float:
    """Scalar loss over all entries; ``e = y_true - y_pred``."""
    _check_kind(kind)
    y_pred = np.asarray(y_pred, dtype=float)
    y_true = np.asarray(y_true, dtype=float)
    if y_pred.shape != y_true.shape:
        raise InvalidArgumentError(f"shape mismatch {y_pred.shape} vs {y_true.shape}")
    e = (y_true - y_pred).ravel()
    if kind == "SSE":
        return float(e @ e)
    if kind == "MSE":
        return float(e @ e / e.size)
    l2 = float(np.linalg.norm(e))
    if kind == "L2":
        return l2
    ny = float(np.linalg.norm(y_true))
    if ny == 0.0:
        raise InvalidArgumentError("L2Norm loss undefined for an all-zero target")
    return l2 / ny


def loss_tensor(kind: str, y_pred: dt.Tensor, y_true: np.ndarray) -> dt.Tensor:
    """Differentiable twin of :func:`compute_loss` (target held constant)."""
    _check_kind(kind)
    y_true = np.asarray(y_true, dtype=float)
    if tuple(y_pred.shape) != y_true.shape:
        raise InvalidArgumentError(f"shape mismatch {y_pred.shape} vs {y_true.shape}")
    sse = dt.tsum(dt.square(dt.sub(dt.tensor(y_true), y_pred)))
    if kind == "SSE":
        return sse
    if kind == "MSE":
        return dt.mul(sse, dt.tensor(1.0 / y_true.size))
    l2 = dt.sqrt(sse)
    if kind == "L2":
        return l2
    ny = float(np.linalg.norm(y_true))
    if ny == 0.0:
        raise InvalidArgumentError("L2Norm loss undefined for an all-zero target")
    return dt.mul(l2, dt.tensor(1.0 / ny))


@dataclass
class MetricReport:
    """Error measures for predictions shaped ``[N_L, N_t, N_n, N_c]``.

    ``l2_t[l, t, c]`` is the step error, ``l2_lc[l, c]`` its RMS over steps and
    ``l2_all[c]`` the RMS of ``l2_lc`` over cases.  ``eps_rel`` is the signed
    nodal relative error with the per-component guard ``eps_tol``.
    """

    l2_t: np.ndarray
    l2_lc: np.ndarray
    l2_all: np.ndarray
    eps_rel: np.ndarray
    eps_tol: np.ndarray
    components: tuple[str, ...]

    def component(self, name: str) -> int:
        try:
            return self.components.index(name)
        except ValueError:
            raise InvalidArgumentError(f"no component {name!r} in {self.components}") from None

    def step_rows(self, case_ids=None):
        """Long-format rows ``(case, step, component, L2_t)`` for CSV output."""
        ids = range(self.l2_t.shape[0]) if case_ids is None else case_ids
        for li, cid in enumerate(ids):
            for t in range(self.l2_t.shape[1]):
                for ci, name in enumerate(self.components):
                    yield (int(cid), t + 1, name, float(self.l2_t[li, t, ci]))


def _as_4d(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 3:
        return y[None]
    if y.ndim != 4:
        raise InvalidArgumentError(f"expected [N_L, N_t, N_n, N_c] or [N_t, N_n, N_c], got {y.shape}")
    return y


def relative_error_field(y_pred, y_true, eps_tol=None) -> tuple[np.ndarray, np.ndarray]:
    """``(y_true - y_pred) / (y_true + eps_tol)`` with ``eps_tol = 1e-5 max|y_true|`` per component.

    An all-zero component falls back to ``eps_tol = 1`` (absolute error).
    """
    y_pred, y_true = np.asarray(y_pred, dtype=float), np.asarray(y_true, dtype=float)
    if eps_tol is None:
        peak = np.abs(y_true).reshape(-1, y_true.shape[-1]).max(axis=0)
        eps_tol = np.where(peak > 0, 1e-5 * peak, 1.0)
    e = y_true - y_pred
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(e == 0.0, 0.0, e / (y_true + eps_tol))
    return rel, np.asarray(eps_tol, dtype=float)


def compute_metrics(y_pred, y_true, components=None) -> MetricReport:
    """Per-step, per-case and all-case errors, evaluated component by component.

    A step whose target is identically zero reports the absolute error norm.
    """
    y_pred, y_true = _as_4d(y_pred), _as_4d(y_true)
    if y_pred.shape != y_true.shape:
        raise InvalidArgumentError(f"shape mismatch {y_pred.shape} vs {y_true.shape}")
    n_c = y_true.shape[-1]
    components = tuple(components) if components is not None else tuple(f"c{i}" for i in range(n_c))
    if len(components) != n_c:
        raise InvalidArgumentError(f"{len(components)} component names for {n_c} components")
    en = np.linalg.norm(y_true - y_pred, axis=2)
    yn = np.linalg.norm(y_true, axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        l2_t = np.where(yn > 0, en / np.where(yn > 0, yn, 1.0), en)
    l2_lc = np.sqrt(np.mean(l2_t ** 2, axis=1))
    l2_all = np.sqrt(np.mean(l2_lc ** 2, axis=0))
    rel, tol = relative_error_field(y_pred, y_true)
    return MetricReport(l2_t, l2_lc, l2_all, rel, tol, components)


def nearest_rank_ids(errors, ids, percentiles=(10, 50, 90)) -> dict[int, int]:
    """Case id at each percentile of ``errors`` by the nearest-rank rule.

    The rank is ``ceil(p N / 100)`` (at least 1) in ascending order; when
    several cases share the selected error value the lowest id is returned.
    """
    errors = np.asarray(errors, dtype=float)
    ids = np.asarray(ids)
    if errors.size == 0 or errors.shape != ids.shape:
        raise InvalidArgumentError("need one error per case and at least one case")
    ordered = np.sort(errors)
    out = {}
    for p in percentiles:
        if not 0 < p <= 100:
            raise InvalidArgumentError(f"percentile {p} outside (0, 100]")
        rank = max(1, math.ceil(round(p * errors.size / 100.0, 9)))
        value = ordered[rank - 1]
        out[int(p)] = int(ids[errors == value].min())
    return out
