"""Multi-input operator network with recurrent branches and hard Dirichlet enforcement.

Data flow for a batch of ``B`` load histories of ``T`` steps evaluated at
``N`` nodes with ``C`` output components::

    load  [B,T,N_l] -> GRU stack -> (group norm) -> MLP -> [B,T,D_1*C] --+
    strain[B,T,N_s] -> GRU stack -> (group norm) -> MLP -> [B,T,D_2*C] --+-> concat on k -> [B,T,D,C]
    coords[N,N_d]   -> MLP -> [N,D*C] -> [N,D,C]
    out[b,t,n,c] = sum_k branch[b,t,k,c] * trunk[n,k,c] + b0[c]

The raw output is mapped to physical label units by a constant affine map,
then Dirichlet data are imposed exactly with
``G = raw * prod_i l_i(x) + sum_i (1 - l_i(x)) g_i(x, t)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import difftensor as dt
from .difftensor import Tensor
from .errors import InvalidArgumentError, NotFoundError

__all__ = [
    "GruCell", "GruStack", "Mlp", "BranchConfig", "TrunkConfig", "Branch", "BcPart", "BcEnforcement",
    "OperatorModel", "build_model", "gru_cell_step", "branch_forward", "merge_and_reduce",
    "apply_bc_enforcement", "model_forward", "save_model", "load_model", "ramp_distance",
]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape or (fan_in, fan_out))


# ------------------------------------------------------------------ recurrent cells

_GRU_NAMES = ("w_xr", "w_xz", "w_xh", "w_hr", "w_hz", "w_hh", "b_r", "b_z", "b_h")


@dataclass(eq=False)
class GruCell:
    w_xr: Tensor
    w_xz: Tensor
    w_xh: Tensor
    w_hr: Tensor
    w_hz: Tensor
    w_hh: Tensor
    b_r: Tensor
    b_z: Tensor
    b_h: Tensor

    @property
    def input_dim(self) -> int:
        return self.w_xr.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_hh.shape[0]

    @classmethod
    def init(cls, d: int, h: int, rng: np.random.Generator) -> "GruCell":
        vals = [_glorot(rng, d, h) for _ in range(3)] + [_glorot(rng, h, h) for _ in range(3)]
        vals += [np.zeros(h)] * 3
        return cls(*[dt.parameter(v, name=n) for v, n in zip(vals, _GRU_NAMES)])

    def parameters(self) -> list[Tensor]:
        return [getattr(self, n) for n in _GRU_NAMES]


def gru_cell_step(cell: GruCell, x_t, h_prev) -> Tensor:
    """One step of the gate equations, built from elementwise primitives.

    ``x_t`` is ``[..., d]`` and ``h_prev`` ``[..., h]``.
    """
    x_t, h_prev = dt.as_tensor(x_t), dt.as_tensor(h_prev)
    if x_t.shape[-1] != cell.input_dim or h_prev.shape[-1] != cell.hidden_dim \
            or x_t.shape[:-1] != h_prev.shape[:-1]:
        raise InvalidArgumentError(
            f"gru step: input {x_t.shape} / hidden {h_prev.shape} vs cell ({cell.input_dim}, {cell.hidden_dim})")
    r = dt.sigmoid(dt.linear(x_t, cell.w_xr, cell.b_r) + dt.matmul(h_prev, cell.w_hr))
    z = dt.sigmoid(dt.linear(x_t, cell.w_xz, cell.b_z) + dt.matmul(h_prev, cell.w_hz))
    cand = dt.tanh(dt.matmul(r * h_prev, cell.w_hh) + dt.linear(x_t, cell.w_xh, cell.b_h))
    return z * h_prev + (1.0 - z) * cand


@dataclass(eq=False)
class GruStack:
    cells: list[GruCell]

    def forward(self, x, fused: bool = True) -> Tensor:
        """``x[B, T, d] -> h[B, T, h]`` from zero initial hidden states.

        ``fused=False`` unrolls :func:`gru_cell_step`; both routes agree to
        roundoff, the fused one is much faster to differentiate.
        """
        h = dt.as_tensor(x)
        for cell in self.cells:
            if fused:
                h = dt.gru_sequence(h, *cell.parameters())
            else:
                B, T, _ = h.shape
                state = dt.tensor(np.zeros((B, cell.hidden_dim)))
                outs = []
                for t in range(T):
                    state = gru_cell_step(cell, h[:, t, :], state)
                    outs.append(state.reshape(B, 1, cell.hidden_dim))
                h = dt.concat(outs, axis=1)
        return h

    def parameters(self) -> list[Tensor]:
        return [p for c in self.cells for p in c.parameters()]


@dataclass(eq=False)
class Mlp:
    """Dense layers with tanh between them and a linear final layer."""

    weights: list[Tensor]
    biases: list[Tensor]

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator) -> "Mlp":
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise InvalidArgumentError(f"bad layer sizes {list(sizes)}")
        ws = [dt.parameter(_glorot(rng, a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        bs = [dt.parameter(np.zeros(b)) for b in sizes[1:]]
        return cls(ws, bs)

    def forward(self, x) -> Tensor:
        h = dt.as_tensor(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = dt.linear(h, w, b)
            if i < last:
                h = dt.tanh(h)
        return h

    def parameters(self) -> list[Tensor]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


# ------------------------------------------------------------------ configuration

@dataclass(frozen=True)
class BranchConfig:
    """One recurrent branch.

    ``fc_layers`` counts the dense layers after the GRU stack; hidden dense
    layers keep the GRU width.  ``norm_channels = 0`` disables group norm.
    """

    name: str
    input_size: int
    gru_layers: int = 1
    hidden: int = 50
    norm_channels: int = 0
    fc_layers: int = 1
    out_size: int = 50

    def __post_init__(self):
        for k in ("input_size", "gru_layers", "hidden", "fc_layers", "out_size"):
            if getattr(self, k) < 1:
                raise InvalidArgumentError(f"branch {self.name}: {k} must be positive")
        if self.norm_channels < 0 or (self.norm_channels and self.hidden % self.norm_channels):
            raise InvalidArgumentError(
                f"branch {self.name}: {self.norm_channels} norm channels do not divide hidden {self.hidden}")


@dataclass(frozen=True)
class TrunkConfig:
    input_size: int
    fc_layers: int = 4
    hidden: int = 50
    out_size: int = 100

    def __post_init__(self):
        for k in ("input_size", "fc_layers", "hidden", "out_size"):
            if getattr(self, k) < 1:
                raise InvalidArgumentError(f"trunk: {k} must be positive")


@dataclass(eq=False)
class Branch:
    config: BranchConfig
    gru: GruStack
    mlp: Mlp
    gamma: Tensor | None = None
    beta: Tensor | None = None

    def parameters(self) -> list[Tensor]:
        ps = self.gru.parameters()
        if self.gamma is not None:
            ps += [self.gamma, self.beta]
        return ps + self.mlp.parameters()


def _build_branch(cfg: BranchConfig, n_components: int, rng) -> Branch:
    cells = [GruCell.init(cfg.input_size if i == 0 else cfg.hidden, cfg.hidden, rng)
             for i in range(cfg.gru_layers)]
    sizes = [cfg.hidden] * cfg.fc_layers + [cfg.out_size * n_components]
    gamma = beta = None
    if cfg.norm_channels:
        gamma = dt.parameter(np.ones(cfg.norm_channels))
        beta = dt.parameter(np.zeros(cfg.norm_channels))
    return Branch(cfg, GruStack(cells), Mlp.init(sizes, rng), gamma, beta)


def branch_forward(branch: Branch, input_seq, fused: bool = True) -> Tensor:
    """``[B, T, N_in] -> [B, T, D_out * N_c]``; the post-GRU layers are shared over time."""
    x = dt.as_tensor(input_seq)
    if x.ndim != 3 or x.shape[-1] != branch.config.input_size:
        raise InvalidArgumentError(
            f"branch {branch.config.name}: expected [B, T, {branch.config.input_size}], got {x.shape}")
    h = branch.gru.forward(x, fused=fused)
    if branch.gamma is not None:
        h = dt.group_norm(h, branch.config.norm_channels, branch.gamma, branch.beta)
    return branch.mlp.forward(h)


# ------------------------------------------------------------------ merge

def merge_and_reduce(branch_outs, trunk_out, n_components: int, bias) -> Tensor:
    """``out[b,t,n,c] = sum_k concat_branch[b,t,k,c] * trunk[n,k,c] + b0[c]``.

    Branch and trunk widths are laid out with the component index fastest.
    """
    branch_outs = [dt.as_tensor(b) for b in branch_outs]
    trunk_out = dt.as_tensor(trunk_out)
    C = int(n_components)
    if C < 1:
        raise InvalidArgumentError("n_components must be >= 1")
    parts = []
    for b in branch_outs:
        if b.ndim != 3 or b.shape[-1] % C:
            raise InvalidArgumentError(f"branch output {b.shape} is not a multiple of {C} components")
        B, T, W = b.shape
        parts.append(b.reshape(B, T, W // C, C))
    cat = parts[0] if len(parts) == 1 else dt.concat(parts, axis=2)
    D = cat.shape[2]
    if trunk_out.ndim != 2 or trunk_out.shape[1] != D * C:
        raise InvalidArgumentError(f"trunk width {trunk_out.shape} != concatenated branch width {D} x {C}")
    tr = trunk_out.reshape(trunk_out.shape[0], D, C)
    out = dt.einsum("btkc,nkc->btnc", cat, tr)
    bias = dt.as_tensor(bias)
    if bias.shape != (C,):
        raise InvalidArgumentError(f"bias must have {C} entries")
    return dt.bias_add(out, bias)


# ------------------------------------------------------------------ boundary conditions

def ramp_distance(coordinate: Callable[[np.ndarray], np.ndarray], width: float):
    """l(x) = min(1, d(x) / width) for a distance-like coordinate d >= 0."""
    if not width > 0:
        raise InvalidArgumentError("ramp width must be positive")

    def ell(x):
        return np.minimum(1.0, np.maximum(0.0, coordinate(np.asarray(x, dtype=float))) / width)

    return ell


@dataclass(frozen=True)
class BcPart:
    """One Dirichlet part: ``ell(x)`` vanishes on it, ``g(x, t)`` is the prescribed value.

    ``components`` lists the output components the part constrains.
    """

    name: str
    ell: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray, float], np.ndarray]
    components: tuple[int, ...] = (0,)


@dataclass(frozen=True)
class BcEnforcement:
    parts: tuple[BcPart, ...]
    description: str = ""

    def factors(self, coords: np.ndarray, times: np.ndarray, n_components: int):
        """Constant arrays (prod_l [N, C], lift [T, N, C]) of the enforcement formula."""
        coords = np.asarray(coords, dtype=float)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        N = coords.shape[0]
        prod = np.ones((N, n_components))
        lift = np.zeros((times.size, N, n_components))
        for part in self.parts:
            ell = np.broadcast_to(np.asarray(part.ell(coords), dtype=float), (N,))
            for c in part.components:
                if not 0 <= c < n_components:
                    raise InvalidArgumentError(f"bc part {part.name}: component {c} out of range")
                prod[:, c] *= ell
                for k, t in enumerate(times):
                    g = np.broadcast_to(np.asarray(part.g(coords, float(t)), dtype=float), (N,))
                    lift[k, :, c] += (1.0 - ell) * g
        return prod, lift


def apply_bc_enforcement(raw, bc: BcEnforcement | None, coords, time) -> Tensor:
    """``raw[..., T, N, C]`` -> constrained output; ``time`` holds the T physical times."""
    raw = dt.as_tensor(raw)
    if bc is None or not bc.parts:
        return raw
    times = np.atleast_1d(np.asarray(time, dtype=float))
    if raw.ndim < 3 or raw.shape[-3] != times.size:
        raise InvalidArgumentError(f"raw output {raw.shape} does not match {times.size} time values")
    prod, lift = bc.factors(coords, times, raw.shape[-1])
    return dt.affine(raw, prod, lift)


# ------------------------------------------------------------------ model

@dataclass
class Scaling:
    """Constant affine maps: ``normalized = (x - shift) / scale``."""

    load: tuple[np.ndarray, np.ndarray] = (np.ones(1), np.zeros(1))
    strain: tuple[np.ndarray, np.ndarray] = (np.ones(1), np.zeros(1))
    coords: tuple[np.ndarray, np.ndarray] = (np.ones(1), np.zeros(1))
    output: tuple[np.ndarray, np.ndarray] = (np.ones(1), np.zeros(1))

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k in ("load", "strain", "coords", "output"):
            s, m = getattr(self, k)
            out[f"scaling.{k}.scale"] = np.atleast_1d(np.asarray(s, dtype=float))
            out[f"scaling.{k}.shift"] = np.atleast_1d(np.asarray(m, dtype=float))
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "Scaling":
        kw = {k: (arrays[f"scaling.{k}.scale"], arrays[f"scaling.{k}.shift"])
              for k in ("load", "strain", "coords", "output")}
        return cls(**kw)


@dataclass(eq=False)
class OperatorModel:
    branches: list[Branch]
    trunk: Mlp
    trunk_config: TrunkConfig
    bias: Tensor
    n_components: int = 1
    bc: BcEnforcement | None = None
    scaling: Scaling = field(default_factory=Scaling)
    seed: int = 0

    def branch(self, name: str) -> Branch:
        for b in self.branches:
            if b.config.name == name:
                return b
        raise NotFoundError(f"model has no branch {name!r}")

    @property
    def has_strain_branch(self) -> bool:
        return any(b.config.name == "strain" for b in self.branches)

    def parameters(self) -> list[Tensor]:
        ps = [p for b in self.branches for p in b.parameters()]
        return ps + self.trunk.parameters() + [self.bias]

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for b in self.branches:
            pre = f"branch.{b.config.name}"
            for i, c in enumerate(b.gru.cells):
                for n in _GRU_NAMES:
                    out[f"{pre}.gru{i}.{n}"] = getattr(c, n)
            if b.gamma is not None:
                out[f"{pre}.norm.gamma"] = b.gamma
                out[f"{pre}.norm.beta"] = b.beta
            for i, (w, bb) in enumerate(zip(b.mlp.weights, b.mlp.biases)):
                out[f"{pre}.fc{i}.w"] = w
                out[f"{pre}.fc{i}.b"] = bb
        for i, (w, bb) in enumerate(zip(self.trunk.weights, self.trunk.biases)):
            out[f"trunk.fc{i}.w"] = w
            out[f"trunk.fc{i}.b"] = bb
        out["bias"] = self.bias
        return out

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def architecture(self) -> str:
        lines = [f"n_components = {self.n_components}", f"seed = {self.seed}"]
        for b in self.branches:
            c = b.config
            lines.append(f"branch = name={c.name} input_size={c.input_size} gru_layers={c.gru_layers} "
                         f"hidden={c.hidden} norm_channels={c.norm_channels} fc_layers={c.fc_layers} "
                         f"out_size={c.out_size}")
        t = self.trunk_config
        lines.append(f"trunk = input_size={t.input_size} fc_layers={t.fc_layers} hidden={t.hidden} "
                     f"out_size={t.out_size}")
        lines.append(f"bc = {self.bc.description if self.bc else 'none'}")
        lines.append(f"parameters = {self.parameter_count()}")
        return "\n".join(lines) + "\n"

    # input normalisation helpers (the forward pass takes normalised sequences)
    def normalize_load(self, x):
        s, m = self.scaling.load
        return (np.asarray(x, dtype=float) - m) / s

    def normalize_strain(self, x):
        s, m = self.scaling.strain
        return (np.asarray(x, dtype=float) - m) / s

    def normalize_output(self, y):
        s, m = self.scaling.output
        return (np.asarray(y, dtype=float) - m) / s


def build_model(branches: Sequence[BranchConfig], trunk: TrunkConfig, n_components: int = 1,
                bc: BcEnforcement | None = None, seed: int = 0, scaling: Scaling | None = None) -> OperatorModel:
    if not branches:
        raise InvalidArgumentError("at least one branch is required")
    names = [b.name for b in branches]
    if len(set(names)) != len(names):
        raise InvalidArgumentError(f"duplicate branch names {names}")
    if sum(b.out_size for b in branches) != trunk.out_size:
        raise InvalidArgumentError(
            f"trunk out_size {trunk.out_size} must equal the summed branch out sizes "
            f"{sum(b.out_size for b in branches)}")
    if n_components < 1:
        raise InvalidArgumentError("n_components must be >= 1")
    rng = np.random.default_rng(seed)
    built = [_build_branch(b, n_components, rng) for b in branches]
    tr = Mlp.init([trunk.input_size] + [trunk.hidden] * (trunk.fc_layers - 1) + [trunk.out_size * n_components], rng)
    return OperatorModel(built, tr, trunk, dt.parameter(np.zeros(n_components)), n_components, bc,
                         scaling or Scaling(), seed)


def model_forward(model: OperatorModel, load_seq, strain_seq, coords, time_axis,
                  fused: bool = True, denormalize: bool = True) -> Tensor:
    """Normalised sequences + physical coordinates/times -> ``[B, T, N, C]`` in label units.

    With ``denormalize=False`` the raw merged output is returned (no output
    scaling, no boundary enforcement).
    """
    coords = np.asarray(coords, dtype=float)
    inputs = {"load": load_seq, "strain": strain_seq}
    outs = []
    B = T = None
    for b in model.branches:
        x = inputs.get(b.config.name)
        if x is None:
            raise InvalidArgumentError(f"missing input for branch {b.config.name!r}")
        x = dt.as_tensor(x)
        if B is None:
            B, T = x.shape[:2]
        elif x.shape[:2] != (B, T):
            raise InvalidArgumentError(f"branch inputs disagree on [B, T]: {x.shape[:2]} vs {(B, T)}")
        outs.append(branch_forward(b, x, fused=fused))
    if coords.ndim != 2 or coords.shape[1] != model.trunk_config.input_size:
        raise InvalidArgumentError(f"coords must be [N, {model.trunk_config.input_size}], got {coords.shape}")
    cs, cm = model.scaling.coords
    trunk_out = model.trunk.forward(dt.tensor((coords - cm) / cs))
    raw = merge_and_reduce(outs, trunk_out, model.n_components, model.bias)
    if not denormalize:
        return raw
    s, m = model.scaling.output
    phys = dt.affine(raw, np.broadcast_to(s, (model.n_components,)), np.broadcast_to(m, (model.n_components,)))
    times = np.atleast_1d(np.asarray(time_axis, dtype=float))
    if model.bc is not None and times.size != T:
        raise InvalidArgumentError(f"time axis has {times.size} entries for {T} steps")
    return apply_bc_enforcement(phys, model.bc, coords, times)


# ------------------------------------------------------------------ persistence

def save_model(model: OperatorModel, path) -> Path:
    """Checkpoint plus a ``.txt`` architecture sidecar next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {k: p.data for k, p in model.named_parameters().items()}
    arrays.update(model.scaling.arrays())
    dt.save_checkpoint(path, arrays)
    path.with_suffix(".txt").write_text(model.architecture())
    return path


def _parse_kv(text: str) -> dict[str, str]:
    return dict(tok.split("=", 1) for tok in text.split())


def load_model(path, bc: BcEnforcement | None = None) -> OperatorModel:
    """Rebuild a model from its sidecar and checkpoint.  Boundary closures are not
    serialisable, so the caller passes ``bc`` back in."""
    path = Path(path)
    side = path.with_suffix(".txt")
    if not side.exists() or not path.exists():
        raise NotFoundError(f"missing checkpoint or sidecar for {path}")
    branches, trunk, n_comp, seed = [], None, 1, 0
    for line in side.read_text().splitlines():
        if "=" not in line:
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "branch":
            kv = _parse_kv(val)
            branches.append(BranchConfig(kv.pop("name"), **{k: int(v) for k, v in kv.items()}))
        elif key == "trunk":
            trunk = TrunkConfig(**{k: int(v) for k, v in _parse_kv(val).items()})
        elif key == "n_components":
            n_comp = int(val)
        elif key == "seed":
            seed = int(val)
    if trunk is None or not branches:
        raise InvalidArgumentError(f"{side}: incomplete architecture")
    model = build_model(branches, trunk, n_comp, bc, seed)
    arrays = dt.load_checkpoint(path)
    for name, p in model.named_parameters().items():
        if name not in arrays or arrays[name].shape != p.shape:
            raise InvalidArgumentError(f"{path}: parameter {name} missing or mis-shaped")
        p.data[...] = arrays[name]
    model.scaling = Scaling.from_arrays(arrays)
    return model
