"""MLP and Elman-RNN forecasters with structure masks.

Parameters live in one flat float64 vector laid out block by block:
for each layer ``h = 1..H`` the input weights ``w{h}`` (``L_h x L_{h-1}``),
then, for recurrent hidden layers, ``v{h}`` (``L_h x L_h``), then the bias
``b{h}`` (``L_h``).  A structure mask is a 0/1 vector aligned with it; masked
entries are read as exactly zero by every forward and backward pass.

Hidden layers apply their activation; the output layer ``H`` is linear.
Hidden states start at zero and step ``t`` of an RNN computes::

    z_t^h = act_h(w^h z_t^{h-1} + v^h z_{t-1}^h + b^h),   z_t^0 = x_t
    mu_t  = w^H z_t^{H-1} + b^H
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape
from .errors import ShapeError

MLP = "mlp"
RNN = "rnn"
ACTIVATIONS = ("tanh", "sigmoid", "relu")
BOUNDED = ("tanh", "sigmoid")

KIND_W, KIND_V, KIND_B = 0, 1, 2
KIND_NAMES = {KIND_W: "w", KIND_V: "v", KIND_B: "b"}


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a forecaster.

    ``layer_widths`` is ``(L_0, ..., L_H)`` where ``L_0`` counts the lag
    window plus ``n_exog`` exogenous columns (appended after the lags) and
    ``L_H`` is the output dimension.  ``warmup`` is the number of leading
    steps whose outputs are discarded.
    """

    kind: str
    layer_widths: tuple
    activations: tuple
    warmup: int = 0
    n_exog: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        object.__setattr__(self, "activations", tuple(self.activations))
        if self.kind not in (MLP, RNN):
            raise ValueError(f"kind must be {MLP!r} or {RNN!r}, got {self.kind!r}")
        if len(self.layer_widths) < 2 or min(self.layer_widths) < 1:
            raise ValueError("need at least input and output widths, all >= 1")
        if len(self.activations) != len(self.layer_widths) - 2:
            raise ValueError("one activation per hidden layer required")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if self.kind == RNN:
            if len(self.activations) == 0:
                raise ValueError("an RNN needs at least one hidden layer")
            if self.activations[0] not in BOUNDED:
                raise ValueError("the first RNN hidden activation must be bounded (tanh or sigmoid)")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if not 0 <= self.n_exog < self.layer_widths[0]:
            raise ValueError("n_exog must leave at least one lag column")

    @property
    def depth(self) -> int:
        """Number of weight layers ``H`` (hidden layers + output)."""
        return len(self.layer_widths) - 1

    @property
    def window(self) -> int:
        return self.layer_widths[0] - self.n_exog

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def recurrent(self) -> bool:
        return self.kind == RNN

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "layer_widths": list(self.layer_widths),
            "activations": list(self.activations),
            "warmup": self.warmup,
            "n_exog": self.n_exog,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            kind=d["kind"],
            layer_widths=tuple(d["layer_widths"]),
            activations=tuple(d["activations"]),
            warmup=int(d.get("warmup", 0)),
            n_exog=int(d.get("n_exog", 0)),
        )


@dataclass(frozen=True)
class Block:
    name: str
    layer: int
    kind: int
    shape: tuple
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)


class ParamLayout:
    """Index map from the flat parameter vector to ``(layer, kind, row, col)``.

    Bias entries report ``col = 0``.
    """

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        L = spec.layer_widths
        H = spec.depth
        blocks, offset = [], 0
        for h in range(1, H + 1):
            entries = [(f"w{h}", KIND_W, (L[h], L[h - 1]))]
            if spec.recurrent and h < H:
                entries.append((f"v{h}", KIND_V, (L[h], L[h])))
            entries.append((f"b{h}", KIND_B, (L[h],)))
            for name, kind, shape in entries:
                blk = Block(name, h, kind, shape, offset)
                blocks.append(blk)
                offset += blk.size
        self.blocks = blocks
        self.size = offset
        self.by_name = {b.name: b for b in blocks}

        layer = np.empty(offset, dtype=np.int64)
        kind = np.empty(offset, dtype=np.int64)
        row = np.empty(offset, dtype=np.int64)
        col = np.empty(offset, dtype=np.int64)
        for b in blocks:
            sl = b.slice
            layer[sl] = b.layer
            kind[sl] = b.kind
            if len(b.shape) == 2:
                r, c = np.indices(b.shape)
                row[sl] = r.ravel()
                col[sl] = c.ravel()
            else:
                row[sl] = np.arange(b.shape[0])
                col[sl] = 0
        self.layer, self.kind, self.row, self.col = layer, kind, row, col

    def __len__(self):
        return self.size

    def entry(self, i: int) -> tuple:
        return (int(self.layer[i]), KIND_NAMES[int(self.kind[i])], int(self.row[i]), int(self.col[i]))

    def split(self, flat: np.ndarray) -> dict:
        """Views of ``flat`` reshaped per block."""
        return {b.name: flat[b.slice].reshape(b.shape) for b in self.blocks}

    def join(self, parts: dict) -> np.ndarray:
        return np.concatenate([np.asarray(parts[b.name], dtype=np.float64).ravel() for b in self.blocks])


def expected_param_count(spec: NetworkSpec) -> int:
    L = spec.layer_widths
    H = spec.depth
    n = sum(L[h] * L[h - 1] for h in range(1, H + 1)) + sum(L[h] for h in range(1, H + 1))
    if spec.recurrent:
        n += sum(L[h] ** 2 for h in range(1, H))
    return n


@dataclass
class ForwardTrace:
    """Tape plus handles to the nodes of one forward pass."""

    tape: Tape
    slots: dict
    outputs: list  # one node per emitted step, shape (N, m)
    steps: list  # step index (0-based) of each output
    hidden: list = field(default_factory=list)  # hidden[t][l] -> node (N, L_{l+1})


class Network:
    """A forecaster bound to a :class:`NetworkSpec`."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.layout = ParamLayout(spec)

    @property
    def n_params(self) -> int:
        return self.layout.size

    def init_params(self, rng: np.random.Generator, scheme: str = "fan_in") -> np.ndarray:
        """Uniform initialisation.

        ``fan_in``: each block drawn from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``
        with the block's incoming width as fan-in (``L_h`` for recurrent
        blocks).  ``hidden``: every block uses ``1/sqrt(L_h)`` of the layer it
        feeds, as common RNN libraries do.
        """
        L = self.spec.layer_widths
        out = np.empty(self.layout.size)
        for b in self.layout.blocks:
            if scheme == "fan_in":
                fan = L[b.layer] if b.kind == KIND_V else L[b.layer - 1]
            elif scheme == "hidden":
                fan = L[b.layer]
            else:
                raise ValueError(f"unknown init scheme {scheme!r}")
            bound = 1.0 / np.sqrt(fan)
            out[b.slice] = rng.uniform(-bound, bound, size=b.size)
        return out

    def _check(self, params, mask, inputs):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.layout.size,):
            raise ShapeError(f"expected {self.layout.size} parameters, got shape {params.shape}")
        if mask is None:
            mask = np.ones(self.layout.size)
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != params.shape:
            raise ShapeError(f"mask length {mask.shape} does not match parameters {params.shape}")
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim == 2:
            inputs = inputs[None]
        if inputs.ndim != 3 or inputs.shape[2] != self.spec.layer_widths[0]:
            raise ShapeError(
                f"inputs must be (N, steps, {self.spec.layer_widths[0]}), got {inputs.shape}"
            )
        if self.spec.recurrent and inputs.shape[1] < self.spec.warmup + 1:
            raise ShapeError(
                f"window of {inputs.shape[1]} steps is shorter than warmup + 1 = {self.spec.warmup + 1}"
            )
        return params, mask, inputs

    def bindings(self, params, mask) -> dict:
        eff = np.asarray(params, dtype=np.float64) * np.asarray(mask, dtype=np.float64)
        return {k: v.copy() for k, v in self.layout.split(eff).items()}

    def build(self, inputs: np.ndarray, emit: str = "last", keep_hidden: bool = False) -> ForwardTrace:
        """Record a forward pass over ``inputs`` of shape ``(N, steps, L_0)``.

        ``emit`` selects which steps get an output node: ``"last"``,
        ``"usable"`` (steps after warmup) or ``"all"``.
        """
        spec = self.spec
        H = spec.depth
        tape = Tape()
        slots = {b.name: tape.param(b.name, b.shape) for b in self.layout.blocks}
        wT = {h: tape.transpose(slots[f"w{h}"]) for h in range(1, H + 1)}
        vT = {h: tape.transpose(slots[f"v{h}"]) for h in range(1, H)} if spec.recurrent else {}

        n_steps = inputs.shape[1]
        if spec.recurrent:
            first = {"last": n_steps - 1, "usable": spec.warmup, "all": 0}[emit]
        else:
            first = {"last": n_steps - 1, "usable": 0, "all": 0}[emit]
        state = [None] * (H - 1)
        outputs, steps, hidden = [], [], []
        for t in range(n_steps):
            h_node = tape.const(inputs[:, t, :])
            layer_nodes = []
            if not spec.recurrent and t < first:
                continue
            for h in range(1, H):
                pre = h_node @ wT[h]
                if spec.recurrent and state[h - 1] is not None:
                    pre = pre + state[h - 1] @ vT[h]
                pre = tape.add(pre, slots[f"b{h}"])
                h_node = tape.activation(spec.activations[h - 1], pre)
                state[h - 1] = h_node
                layer_nodes.append(h_node)
            if t >= first:
                out = tape.add(h_node @ wT[H], slots[f"b{H}"])
                outputs.append(out)
                steps.append(t)
                layer_nodes.append(out)
            if keep_hidden:
                hidden.append(layer_nodes)
        return ForwardTrace(tape=tape, slots=slots, outputs=outputs, steps=steps, hidden=hidden)

    def forward(self, params, mask, inputs, emit: str = "last") -> np.ndarray:
        """Outputs of shape ``(N, n_emitted, m)``."""
        params, mask, inputs = self._check(params, mask, inputs)
        trace = self.build(inputs, emit=emit)
        tape = trace.tape
        total = tape.sum(trace.outputs[-1])
        tape.forward(self.bindings(params, mask), output=total)
        return np.stack([tape.value(o) for o in trace.outputs], axis=1)

    def predict(self, params, mask, inputs) -> np.ndarray:
        """Final-step outputs, shape ``(N, m)``."""
        return self.forward(params, mask, inputs, emit="last")[:, -1, :]

    def gather(self, grads: dict, mask) -> np.ndarray:
        """Flatten per-slot gradients into a vector aligned with the parameters."""
        return self.layout.join(grads) * np.asarray(mask, dtype=np.float64)

    def output_gradients(self, params, mask, inputs) -> np.ndarray:
        """Jacobian of the final-step output w.r.t. the parameters.

        Returns ``(N, m, K)``; masked coordinates are zero.
        """
        params, mask, inputs = self._check(params, mask, inputs)
        N, m = inputs.shape[0], self.spec.output_dim
        jac = np.zeros((N, m, self.layout.size))
        binds = self.bindings(params, mask)
        for i in range(N):
            trace = self.build(inputs[i : i + 1])
            tape = trace.tape
            out = trace.outputs[-1]
            picks = [tape.take(out, (0, j)) for j in range(m)]
            for j in range(m):
                tape.forward(binds, output=picks[j])
                jac[i, j] = self.gather(tape.backward(), mask)
        return jac


# -- spec-level operations ---------------------------------------------------


def rnn_forward(spec: NetworkSpec, params, mask, window) -> tuple:
    """Run an RNN over one window of shape ``(steps, L_0)``.

    Returns ``(outputs, usable)``: outputs ``(steps, m)`` for every step and
    a boolean array that is False for the first ``warmup`` steps.
    """
    if spec.kind != RNN:
        raise ValueError("rnn_forward needs an RNN spec")
    net = Network(spec)
    out = net.forward(params, mask, np.asarray(window, dtype=np.float64)[None], emit="all")[0]
    usable = np.arange(out.shape[0]) >= spec.warmup
    return out, usable


def mlp_forward(spec: NetworkSpec, params, mask, x) -> np.ndarray:
    if spec.kind != MLP:
        raise ValueError("mlp_forward needs an MLP spec")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.layer_widths[0],):
        raise ShapeError(f"input must have length {spec.layer_widths[0]}, got {x.shape}")
    return Network(spec).predict(params, mask, x[None, None, :])[0]


def count_hidden_links(mask, spec: NetworkSpec) -> int:
    """Number of unmasked recurrent (``v``) weights."""
    if spec.kind != RNN:
        raise ValueError("hidden links are only defined for RNNs")
    layout = ParamLayout(spec)
    mask = np.asarray(mask)
    if mask.shape != (layout.size,):
        raise ShapeError("mask length does not match the network layout")
    return int(np.count_nonzero(mask[layout.kind == KIND_V]))


def selected_input_lags(mask, spec: NetworkSpec) -> set:
    """Lags ``j`` (1-based; column ``j-1`` of ``w1``) touched by an unmasked input weight."""
    layout = ParamLayout(spec)
    mask = np.asarray(mask)
    if mask.shape != (layout.size,):
        raise ShapeError("mask length does not match the network layout")
    w1 = mask[layout.by_name["w1"].slice].reshape(layout.by_name["w1"].shape)
    cols = np.flatnonzero(np.any(w1[:, : spec.window] != 0, axis=0))
    return {int(c) + 1 for c in cols}


def prune_dead_units(mask, spec: NetworkSpec) -> np.ndarray:
    """Drop hidden units whose state is never read.

    A hidden unit is dead when every outgoing weight (its column in the next
    layer's ``w`` and, for RNNs, its column of ``v`` apart from the self-loop)
    is masked.  Its incoming weights, recurrent row/column and bias are then
    masked too; repeated until nothing changes.  The network function is
    unchanged.
    """
    layout = ParamLayout(spec)
    out = np.array(mask, dtype=np.float64)
    if out.shape != (layout.size,):
        raise ShapeError("mask length does not match the network layout")
    parts = layout.split(out)  # views into ``out``
    H = spec.depth
    changed = True
    while changed:
        changed = False
        for h in range(1, H):
            nxt = parts[f"w{h + 1}"]
            reads = np.any(nxt != 0, axis=0)
            if spec.recurrent:
                v = parts[f"v{h}"]
                off = v.copy()
                np.fill_diagonal(off, 0.0)
                reads = reads | np.any(off != 0, axis=0)
            dead = ~reads
            live_in = np.any(parts[f"w{h}"][dead] != 0) or np.any(parts[f"b{h}"][dead] != 0)
            if spec.recurrent:
                live_in = live_in or np.any(v[dead] != 0) or np.any(v[:, dead] != 0)
            if live_in:
                parts[f"w{h}"][dead] = 0.0
                parts[f"b{h}"][dead] = 0.0
                if spec.recurrent:
                    v[dead] = 0.0
                    v[:, dead] = 0.0
                changed = True
    return out


def ar_order(lags) -> int:
    return max(lags) if lags else 0


def lemma_output_bound(spec: NetworkSpec, params, mask, window, t: int) -> tuple:
    """Layer output magnitude sums at step ``t`` and their worst-case bound.

    For layer ``i`` below the output the bound is
    ``t^i (prod_k r_w_k)(prod_k r_v_k)^(t-1) E^(t i)``; the output layer uses
    ``t^H (prod_{k<=H} r_w_k)(prod_{k<H} r_v_k)^(t-1) E^(t(H-1)+1)``.
    ``E`` is the largest absolute unmasked weight and ``r_w_k`` counts the
    unmasked input weights and biases of layer ``k`` (biases act as weights
    on a constant input), ``r_v_k`` the unmasked recurrent weights.

    The bound presumes inputs in ``[-1, 1]``, a first activation with
    ``|act(x)| <= min(1, |x|)`` (tanh), 1-Lipschitz later activations
    vanishing at 0, ``E >= 1`` and every ``r >= 1``.

    Returns ``(observed, bound)`` arrays of length ``H``.
    """
    if spec.kind != RNN:
        raise ValueError("the output bound is stated for RNNs")
    net = Network(spec)
    params, mask, inputs = net._check(params, mask, window)
    if not 1 <= t <= inputs.shape[1]:
        raise ValueError("t must index a step of the window")
    trace = net.build(inputs[:, :t, :], emit="all", keep_hidden=True)
    tape = trace.tape
    tape.forward(net.bindings(params, mask), output=tape.sum(trace.outputs[-1]))
    H = spec.depth
    observed = np.array([float(np.sum(np.abs(tape.value(n)))) for n in trace.hidden[t - 1]])

    layout = net.layout
    eff = params * mask
    E = float(np.max(np.abs(eff))) if eff.size else 0.0
    nz = (mask != 0) & (params != 0)
    r_w = np.array([np.count_nonzero(nz & (layout.layer == k) & (layout.kind != KIND_V)) for k in range(1, H + 1)])
    r_v = np.array([np.count_nonzero(nz & (layout.layer == k) & (layout.kind == KIND_V)) for k in range(1, H)])
    bound = np.empty(H)
    for i in range(1, H):
        bound[i - 1] = t**i * np.prod(r_w[:i], dtype=float) * np.prod(r_v[:i], dtype=float) ** (t - 1) * E ** (t * i)
    bound[H - 1] = (
        t**H * np.prod(r_w, dtype=float) * np.prod(r_v, dtype=float) ** (t - 1) * E ** (t * (H - 1) + 1)
    )
    return observed, bound


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(path, spec: NetworkSpec, params, mask, meta: dict | None = None) -> None:
    doc = {
        "spec": spec.to_dict(),
        "params": [float(x) for x in np.asarray(params)],
        "mask": [int(x) for x in np.asarray(mask)],
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> tuple:
    """Returns ``(spec, params, mask, meta)``."""
    doc = json.loads(Path(path).read_text())
    spec = NetworkSpec.from_dict(doc["spec"])
    params = np.asarray(doc["params"], dtype=np.float64)
    mask = np.asarray(doc["mask"], dtype=np.float64)
    if params.shape != (expected_param_count(spec),) or mask.shape != params.shape:
        raise ShapeError("checkpoint arrays do not match its spec")
    return spec, params, mask, doc.get("meta", {})
