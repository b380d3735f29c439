"""Labelled datasets from monolithic runs, plus their binary file format."""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import IfennError, InvalidArgumentError, NotFoundError, SolverError
from ..fem import run_monolithic_transient
from ..mesh import sensor_matrix
from .experiments import ExperimentSetup
from .normalization import NormalizationSpec
from .sampling import LoadCase

DATASET_MAGIC = b"IFND"
DATASET_VERSION = 1
SPLITS = ("train", "validation", "test")


@dataclass(eq=False)
class Dataset:
    """Inputs ``load [L, T, N_l]``, ``strain [L, T, N_s]`` and labels ``[L, T, N_n, N_c]``.

    ``split`` maps each split name to row indices into the case arrays.
    """

    case_ids: np.ndarray
    times: np.ndarray
    coords: np.ndarray
    load: np.ndarray
    strain: np.ndarray
    labels: np.ndarray
    split: dict[str, np.ndarray] = field(default_factory=dict)
    normalization: NormalizationSpec | None = None
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        L, T = self.load.shape[:2]
        if self.strain.shape[:2] != (L, T) or self.labels.shape[:2] != (L, T):
            raise InvalidArgumentError("load, strain and labels disagree on [cases, steps]")
        if self.labels.shape[2] != self.coords.shape[0] or self.times.shape != (T,):
            raise InvalidArgumentError("labels/coords/times shapes are inconsistent")
        if self.case_ids.shape != (L,):
            raise InvalidArgumentError("one case id per case row is required")

    @property
    def dims(self) -> tuple[int, ...]:
        """(N_cases, N_t, N_l, N_s, N_n, N_c, N_d)."""
        L, T, nl = self.load.shape
        return (L, T, nl, self.strain.shape[2], self.labels.shape[2], self.labels.shape[3], self.coords.shape[1])

    def rows(self, name: str) -> np.ndarray:
        if name not in self.split:
            raise NotFoundError(f"dataset has no {name!r} split")
        return self.split[name]

    def fit_normalization(self, mode: str) -> NormalizationSpec:
        """Fit on the training rows only and attach the result."""
        tr = self.rows("train")
        if tr.size == 0:
            raise InvalidArgumentError("training split is empty")
        self.normalization = NormalizationSpec.fit(mode, self.load[tr], self.strain[tr], self.coords,
                                                   self.labels[tr])
        return self.normalization


def assign_splits(n_cases: int, n_test: int, seed: int, validation_fraction: float = 0.2) -> dict[str, np.ndarray]:
    """Last ``n_test`` rows form the test split; the rest is shuffled and cut 4:1."""
    if not 0 <= n_test < n_cases:
        raise InvalidArgumentError(f"n_test must lie in [0, {n_cases}), got {n_test}")
    pool = np.random.default_rng(seed).permutation(n_cases - n_test)
    n_val = int(round(validation_fraction * pool.size))
    return {
        "train": np.sort(pool[n_val:]),
        "validation": np.sort(pool[:n_val]),
        "test": np.arange(n_cases - n_test, n_cases),
    }


@dataclass
class CaseRun:
    case: LoadCase
    states: list | None
    error: str | None = None


def _run_case(setup: ExperimentSetup, case: LoadCase) -> CaseRun:
    loads = setup.loads_for(case)
    try:
        states = run_monolithic_transient(setup.mesh, setup.material, loads, setup.dt, setup.n_steps,
                                          initial=setup.initial_state(loads))
    except IfennError as exc:
        return CaseRun(case, None, str(exc))
    return CaseRun(case, states)


def case_arrays(setup: ExperimentSetup, case: LoadCase, states, with_displacement: bool = False):
    """(load [T, N_l], strain [T, N_s], labels [T, N_n, N_c]) for one monolithic run.

    Row ``t`` of the strain input holds tr(eps) of state ``t`` (state 0 is the
    initial state), so the input at row ``t`` never depends on the label at
    row ``t``.
    """
    S = sensor_matrix(setup.mesh, setup.strain_sensors)
    strain = np.stack([S @ s.strain_trace for s in states[:-1]])
    z = np.stack([s.z for s in states[1:]]) - setup.z_reference
    labels = z[..., None]
    if with_displacement:
        u = np.stack([s.u for s in states[1:]])
        labels = np.concatenate([labels, u], axis=-1)
    return setup.load_values(case), strain, labels


def label_dataset(setup: ExperimentSetup, cases, n_test: int = 0, seed: int = 0,
                  with_displacement: bool = False, workers: int = 1) -> tuple[Dataset, dict[int, str]]:
    """Run the monolithic solver on every case and collect inputs and labels.

    Returns the dataset and a ``{case id: error}`` map of cases whose solve
    failed; failed cases are left out.  The last ``n_test`` successful cases
    form the test split.
    """
    cases = list(cases)
    if not cases:
        raise InvalidArgumentError("no load cases given")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            runs = list(pool.map(lambda c: _run_case(setup, c), cases))
    else:
        runs = [_run_case(setup, c) for c in cases]
    failed = {r.case.id: r.error for r in runs if r.states is None}
    good = [r for r in runs if r.states is not None]
    if not good:
        raise SolverError(f"every case failed: {failed}")
    arrays = [case_arrays(setup, r.case, r.states, with_displacement) for r in good]
    load, strain, labels = (np.stack(a) for a in zip(*arrays))
    comps = ["z"] + (["u" + "xyz"[i] for i in range(setup.mesh.dim)] if with_displacement else [])
    meta = {
        "experiment": setup.name,
        "problem": setup.problem,
        "z_reference": repr(float(setup.z_reference)),
        "components": " ".join(comps),
        "dt": repr(float(setup.dt)),
        "seed": str(seed),
    }
    ds = Dataset(np.array([r.case.id for r in good]), setup.times.copy(), setup.mesh.nodes.copy(),
                 load, strain, labels, assign_splits(len(good), min(n_test, len(good) - 1), seed), None, meta)
    return ds, failed


# ------------------------------------------------------------------ file format

def _blocks(ds: Dataset):
    return [("case_ids", ds.case_ids.astype(float)), ("times", ds.times), ("coords", ds.coords),
            ("load", ds.load), ("strain", ds.strain), ("labels", ds.labels)]


def save_dataset(ds: Dataset, path) -> Path:
    """Binary blocks plus a ``.txt`` sidecar holding splits, normalisation and metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = DATASET_MAGIC + struct.pack("<I7Q", DATASET_VERSION, *ds.dims)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in _blocks(ds))
    path.write_bytes(header + body)
    lines = [f"{k} = {v}" for k, v in ds.meta.items()]
    lines += [f"split.{k} = " + " ".join(str(int(i)) for i in ds.split.get(k, [])) for k in SPLITS]
    text = "\n".join(lines) + "\n"
    if ds.normalization is not None:
        text += ds.normalization.to_text()
    path.with_suffix(".txt").write_text(text)
    return path


def read_sidecar(path) -> dict[str, str]:
    side = Path(path).with_suffix(".txt")
    if not side.exists():
        raise NotFoundError(f"missing sidecar {side}")
    kv = {}
    for line in side.read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
    return kv


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"dataset {path} not found")
    raw = path.read_bytes()
    if raw[:4] != DATASET_MAGIC:
        raise InvalidArgumentError(f"{path}: not a dataset file (bad magic)")
    version, *dims = struct.unpack_from("<I7Q", raw, 4)
    if version != DATASET_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported dataset version {version}")
    L, T, nl, ns, nn, nc, nd = dims
    shapes = [(L,), (T,), (nn, nd), (L, T, nl), (L, T, ns), (L, T, nn, nc)]
    pos = 4 + struct.calcsize("<I7Q")
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        if pos + 8 * n > len(raw):
            raise InvalidArgumentError(f"{path}: truncated dataset")
        arrays.append(np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(shape).copy())
        pos += 8 * n
    kv = read_sidecar(path)
    split = {k: np.array([int(v) for v in kv.get(f"split.{k}", "").split()], dtype=int) for k in SPLITS}
    meta = {k: v for k, v in kv.items() if not k.startswith(("split.", "normalization."))}
    ids = arrays[0].astype(np.int64)
    return Dataset(ids, *arrays[1:], split=split, normalization=NormalizationSpec.from_mapping(kv), meta=meta)
