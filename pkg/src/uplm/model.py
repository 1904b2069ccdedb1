"""Character-level LSTM language model with tied embeddings.

Parameters live in one flat float64 vector with a named block layout;
block views alias the flat storage, and the output projection *is* the
embedding block (used transposed), so the tie is structural. Gate
pre-activations are column-blocked in the order i | f | g | o, and all
but the last LSTM layer have `hidden_dim` units; the last has
`embed_dim` units so its output can meet the tied projection.

Conditioning variants:
  bare  - no side information;
  oest  - the encoded typology vector is concatenated onto the top
          hidden state at every step, with `out_extra` columns extending
          the output projection;
  plat  - a linear hyper-network maps the encoded typology vector to the
          entire base parameter vector; only the encoder and the
          hyper-network are trainable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .autograd import Tape, Var
from .corpus import BOS, CharVocabulary
from .errors import ConfigError, NumericError
from .rng import RngHub

CONDITIONINGS = ("bare", "oest", "plat")


@dataclass(frozen=True)
class ArchConfig:
    vocab_size: int
    embed_dim: int = 64
    hidden_dim: int = 128
    num_layers: int = 2
    conditioning: str = "bare"
    typology_dim: int = 0
    encoder_dim: int = 0

    def __post_init__(self):
        if self.vocab_size < 3:
            raise ConfigError("vocabulary must hold BOS, EOS and at least one symbol")
        if min(self.embed_dim, self.hidden_dim, self.num_layers) < 1:
            raise ConfigError("model dimensions must be positive")
        if self.conditioning not in CONDITIONINGS:
            raise ConfigError(f"unknown conditioning {self.conditioning!r}")
        if self.conditioning != "bare" and (self.typology_dim < 1 or self.encoder_dim < 1):
            raise ConfigError("conditioned models need typology_dim and encoder_dim")

    def layer_widths(self) -> list[int]:
        return [self.hidden_dim] * (self.num_layers - 1) + [self.embed_dim]

    def layer_inputs(self) -> list[int]:
        return [self.embed_dim] + self.layer_widths()[:-1]


# Full-scale reference dimensions; desk runs use the dataclass defaults.
PAPER_SCALE = {"embed_dim": 400, "hidden_dim": 1840, "num_layers": 3}
OEST_ENCODER_DIM = 115
PLAT_ENCODER_DIM = 4


# ---------------------------------------------------------------------------
# parameter layout


@dataclass(frozen=True)
class Layout:
    blocks: tuple[tuple[str, tuple[int, ...]], ...]
    _offsets: dict = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        off = 0
        for name, shape in self.blocks:
            self._offsets[name] = off
            off += int(np.prod(shape))
        object.__setattr__(self, "_total", off)

    @property
    def total_size(self) -> int:
        return self._total

    def names(self) -> list[str]:
        return [name for name, _ in self.blocks]

    def shape(self, name: str) -> tuple[int, ...]:
        for n, s in self.blocks:
            if n == name:
                return s
        raise KeyError(name)

    def offset(self, name: str) -> int:
        return self._offsets[name]

    def block_of_index(self, i: int) -> str:
        for name, shape in self.blocks:
            size = int(np.prod(shape))
            if i < self._offsets[name] + size:
                return name
        raise IndexError(i)

    def describe(self) -> list[list]:
        # JSON-stable form (lists, not tuples) so stored layouts compare
        return [[name, list(shape)] for name, shape in self.blocks]

    @classmethod
    def from_description(cls, desc) -> "Layout":
        return cls(tuple((name, tuple(shape)) for name, shape in desc))


def recurrent_width(arch: ArchConfig, layer: int) -> int:
    """Width of the hidden vector a layer's recurrence consumes. With
    oest conditioning the top hidden state is the cell output with the
    encoded typology appended, and that wider vector is what both the
    output projection and the top layer's own recurrence see."""
    w = arch.layer_widths()[layer]
    if arch.conditioning == "oest" and layer == arch.num_layers - 1:
        return w + arch.encoder_dim
    return w


def base_blocks(arch: ArchConfig) -> list[tuple[str, tuple[int, ...]]]:
    blocks = [("embedding", (arch.vocab_size, arch.embed_dim))]
    for layer, (w, n_in) in enumerate(zip(arch.layer_widths(), arch.layer_inputs())):
        blocks.append((f"lstm{layer}.W_x", (4 * w, n_in)))
        blocks.append((f"lstm{layer}.W_h", (4 * w, recurrent_width(arch, layer))))
        blocks.append((f"lstm{layer}.b", (4 * w,)))
    blocks.append(("out_bias", (arch.vocab_size,)))
    return blocks


def build_layout(arch: ArchConfig) -> Layout:
    base = base_blocks(arch)
    if arch.conditioning == "bare":
        return Layout(tuple(base))
    enc = [
        ("enc.W", (arch.encoder_dim, arch.typology_dim)),
        ("enc.b", (arch.encoder_dim,)),
    ]
    if arch.conditioning == "oest":
        extra = [("out_extra", (arch.vocab_size, arch.encoder_dim))]
        return Layout(tuple(base + enc + extra))
    base_total = Layout(tuple(base)).total_size
    return Layout(tuple(enc + [("hyper", (base_total, arch.encoder_dim))]))


class ModelParameters:
    """Flat parameter vector plus named block views aliasing it."""

    __slots__ = ("layout", "flat")

    def __init__(self, layout: Layout, flat: np.ndarray):
        if flat.shape != (layout.total_size,):
            raise ValueError(
                f"flat vector has length {flat.shape}, layout needs {layout.total_size}"
            )
        self.layout = layout
        self.flat = flat

    @property
    def size(self) -> int:
        return self.flat.size

    def view(self, name: str) -> np.ndarray:
        off = self.layout.offset(name)
        shape = self.layout.shape(name)
        return self.flat[off : off + int(np.prod(shape))].reshape(shape)

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.layout, self.flat.copy())


def _init_limit(name: str, shape: tuple[int, ...]) -> float:
    """Uniform init half-width per block; 0 means start at zero."""
    if name.endswith(".W_x"):
        return float(np.sqrt(6.0 / (shape[1] + shape[0] // 4)))
    if name.endswith(".W_h"):
        return float(np.sqrt(6.0 / (2 * shape[1])))
    if name in ("embedding", "enc.W", "out_extra"):
        return float(np.sqrt(6.0 / (shape[0] + shape[1])))
    return 0.0


def init_parameters(arch: ArchConfig, seed: int = 0) -> ModelParameters:
    """Deterministic init under `seed`; forget-gate biases start at +1."""
    layout = build_layout(arch)
    rng = RngHub(seed).stream("init")
    flat = np.zeros(layout.total_size)
    mp = ModelParameters(layout, flat)
    for name, shape in layout.blocks:
        if name == "hyper":
            limits = _base_entry_limits(arch)
            scale = limits / np.sqrt(arch.encoder_dim)
            mp.view(name)[:] = rng.uniform(-1.0, 1.0, size=shape) * scale[:, None]
            continue
        limit = _init_limit(name, shape)
        if limit > 0.0:
            mp.view(name)[:] = rng.uniform(-limit, limit, size=shape)
        elif name == "enc.b":
            mp.view(name)[:] = 0.1  # keep relu units initially active
        elif name.endswith(".b"):
            w = shape[0] // 4
            mp.view(name)[w : 2 * w] = 1.0
    return mp


def _base_entry_limits(arch: ArchConfig) -> np.ndarray:
    parts = []
    for name, shape in base_blocks(arch):
        parts.append(np.full(int(np.prod(shape)), _init_limit(name, shape)))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# conditioning and dropout plans


@dataclass(frozen=True)
class Conditioning:
    kind: str = "bare"
    features: np.ndarray | None = None


BARE = Conditioning()


def oest(features: np.ndarray) -> Conditioning:
    return Conditioning("oest", np.asarray(features, dtype=np.float64))


def plat(features: np.ndarray) -> Conditioning:
    return Conditioning("plat", np.asarray(features, dtype=np.float64))


def _check_conditioning(arch: ArchConfig, cond: Conditioning) -> None:
    if cond.kind != arch.conditioning:
        raise ConfigError(
            f"model is conditioned as {arch.conditioning!r} but got {cond.kind!r}"
        )
    if cond.kind != "bare":
        if cond.features is None or cond.features.shape != (arch.typology_dim,):
            raise ConfigError("conditioning features missing or of wrong length")


@dataclass(frozen=True)
class DropoutConfig:
    emb_keep: float = 0.9
    mid_keep: float = 0.9
    out_keep: float = 0.6
    recurrent_keep: float = 0.8  # DropConnect on lstm0.W_h


@dataclass(frozen=True)
class DropoutPlan:
    """Per-batch masks, shared across all time steps of the batch.

    Masks hold 0 or 1/keep (inverted dropout), so evaluation needs no
    rescaling and keep=1 reproduces eval mode bit-for-bit. None disables
    a site entirely (eval mode).
    """

    emb_mask: np.ndarray | None = None
    mid_masks: tuple = ()
    out_mask: np.ndarray | None = None
    recurrent_mask: np.ndarray | None = None


EVAL_PLAN = DropoutPlan()


def train_plan(
    rng: np.random.Generator, arch: ArchConfig, batch_size: int, cfg: DropoutConfig
) -> DropoutPlan:
    def mask(shape, keep):
        return (rng.random(shape) < keep).astype(np.float64) / keep

    widths = arch.layer_widths()
    return DropoutPlan(
        emb_mask=mask((batch_size, arch.embed_dim), cfg.emb_keep),
        mid_masks=tuple(
            mask((batch_size, widths[l]), cfg.mid_keep) for l in range(arch.num_layers - 1)
        ),
        out_mask=mask((batch_size, widths[-1]), cfg.out_keep),
        recurrent_mask=mask((4 * widths[0], recurrent_width(arch, 0)), cfg.recurrent_keep),
    )


@dataclass
class LstmState:
    h: list[np.ndarray]
    c: list[np.ndarray]

    @classmethod
    def zeros(cls, arch: ArchConfig, batch_size: int) -> "LstmState":
        widths = arch.layer_widths()
        return cls(
            [np.zeros((batch_size, w)) for w in widths],
            [np.zeros((batch_size, w)) for w in widths],
        )


# ---------------------------------------------------------------------------
# tape graph construction


def param_vars(
    tape: Tape, flat_var: Var, arch: ArchConfig, cond: Conditioning, plan: DropoutPlan
) -> tuple[dict[str, Var], Var | None]:
    """Block variables for one forward pass, plus the encoded typology.

    For plat models the base blocks are views into the hyper-network
    output, so gradients flow to the hyper-network and encoder only.
    """
    _check_conditioning(arch, cond)
    layout = build_layout(arch)

    def cut(source, name, base_layout=None):
        lay = base_layout or layout
        return ag.block(tape, source, lay.offset(name), lay.shape(name))

    encoded = None
    if arch.conditioning == "plat":
        t_var = tape.var(cond.features)
        enc_w = cut(flat_var, "enc.W")
        enc_b = cut(flat_var, "enc.b")
        encoded = ag.relu(tape, ag.add(tape, ag.matvec(tape, enc_w, t_var), enc_b))
        hyper = cut(flat_var, "hyper")
        base_flat = ag.matvec(tape, hyper, encoded)
        base_layout = Layout(tuple(base_blocks(arch)))
        blocks = {name: cut(base_flat, name, base_layout) for name in base_layout.names()}
    else:
        blocks = {name: cut(flat_var, name) for name in layout.names()}
        if arch.conditioning == "oest":
            t_var = tape.var(cond.features)
            encoded = ag.relu(
                tape, ag.add(tape, ag.matvec(tape, blocks["enc.W"], t_var), blocks["enc.b"])
            )
    if plan.recurrent_mask is not None:
        blocks["lstm0.W_h"] = ag.mul_const(tape, blocks["lstm0.W_h"], plan.recurrent_mask)
    return blocks, encoded


def oest_hidden(tape: Tape, o: Var, c: Var, encoded: Var) -> Var:
    """Top hidden state with the encoder output concatenated on: the
    first columns are o * tanh(c), the trailing ones the encoded vector."""
    h = ag.mul(tape, o, ag.tanh(tape, c))
    if encoded.value.ndim == 1:
        encoded = ag.broadcast_rows(tape, encoded, o.value.shape[0])
    return ag.concat_cols(tape, h, encoded)


def _window_logits(
    tape: Tape,
    blocks: dict[str, Var],
    encoded: Var | None,
    arch: ArchConfig,
    inputs: np.ndarray,
    state: list[tuple[Var, Var]],
    plan: DropoutPlan,
) -> Var:
    """Logits for every position of a window, rows time-major (t*B + b).

    Runs layer by layer: the input-side gate matmul and the bias cover
    all time steps in one product, only the recurrent product and the
    cell run per step. Variational masks are tiled across the steps.
    """
    n_rows, n_steps = inputs.shape

    def tiled(mask):
        return np.tile(mask, (n_steps, 1))

    x_all = ag.gather_rows(tape, blocks["embedding"], inputs.T.ravel())
    if plan.emb_mask is not None:
        x_all = ag.mul_const(tape, x_all, tiled(plan.emb_mask))
    top = arch.num_layers - 1
    enc_step = (
        ag.broadcast_rows(tape, encoded, n_rows) if arch.conditioning == "oest" else None
    )
    layer_in = x_all
    for layer in range(arch.num_layers):
        zx_all = ag.add(
            tape,
            ag.matmul_nt(tape, layer_in, blocks[f"lstm{layer}.W_x"]),
            blocks[f"lstm{layer}.b"],
        )
        w_h = blocks[f"lstm{layer}.W_h"]
        h_prev, c_prev = state[layer]
        hs = []
        for t in range(n_steps):
            h_in = h_prev
            if layer == top and enc_step is not None:
                h_in = ag.concat_cols(tape, h_prev, enc_step)
            z = ag.add(
                tape,
                ag.row_slice(tape, zx_all, t * n_rows, (t + 1) * n_rows),
                ag.matmul_nt(tape, h_in, w_h),
            )
            h_prev, c_prev = ag.lstm_cell(tape, z, c_prev)
            hs.append(h_prev)
        state[layer] = (h_prev, c_prev)
        h_all = ag.vstack(tape, hs)
        if layer < arch.num_layers - 1:
            layer_in = (
                ag.mul_const(tape, h_all, tiled(plan.mid_masks[layer]))
                if plan.mid_masks
                else h_all
            )
    if plan.out_mask is not None:
        h_all = ag.mul_const(tape, h_all, tiled(plan.out_mask))
    w_out = blocks["embedding"]
    if arch.conditioning == "oest":
        h_all = ag.concat_cols(
            tape, h_all, ag.broadcast_rows(tape, encoded, n_rows * n_steps)
        )
        w_out = ag.concat_cols(tape, w_out, blocks["out_extra"])
    return ag.add(tape, ag.matmul_nt(tape, h_all, w_out), blocks["out_bias"])


def _check_state_finite(state: list[tuple[Var, Var]]) -> None:
    for layer, (h, c) in enumerate(state):
        if not (np.all(np.isfinite(h.value)) and np.all(np.isfinite(c.value))):
            raise NumericError(f"non-finite activation in lstm layer {layer}")


def sequence_nll(
    tape: Tape,
    flat_var: Var,
    arch: ArchConfig,
    tokens: np.ndarray,
    mask: np.ndarray,
    window: int,
    plan: DropoutPlan = EVAL_PLAN,
    cond: Conditioning = BARE,
    state: LstmState | None = None,
) -> tuple[Var, np.ndarray, LstmState]:
    """Masked total NLL (nats) of a padded token batch.

    Target positions beyond `window` are consumed in consecutive windows
    with the hidden state carried over but detached, which truncates
    backpropagation at window boundaries. Returns the scalar loss
    variable, per-position NLLs shaped like `mask`, and the final state.
    """
    if tokens.max() >= arch.vocab_size:
        raise ConfigError("token index out of vocabulary range")
    n_rows, width = tokens.shape
    if state is None:
        state = LstmState.zeros(arch, n_rows)
    blocks, encoded = param_vars(tape, flat_var, arch, cond, plan)
    state_vars = [
        (tape.var(h.copy()), tape.var(c.copy())) for h, c in zip(state.h, state.c)
    ]
    losses = []
    nll_cols = []
    for start in range(0, width - 1, window):
        stop = min(start + window, width - 1)
        if mask[:, start:stop].sum() == 0:
            break
        logits = _window_logits(
            tape, blocks, encoded, arch, tokens[:, start:stop], state_vars, plan
        )
        _check_state_finite(state_vars)
        targets = tokens[:, start + 1 : stop + 1].T.ravel()
        window_mask = mask[:, start:stop].T.ravel()
        loss, nll = ag.softmax_nll(tape, logits, targets, window_mask)
        losses.append(loss)
        nll_cols.append(nll.reshape(stop - start, n_rows).T)
        state_vars = [
            (tape.var(h.value.copy()), tape.var(c.value.copy())) for h, c in state_vars
        ]
    if not losses:
        raise ConfigError("batch has no valid target positions")
    total = losses[0]
    for extra in losses[1:]:
        total = ag.add(tape, total, extra)
    nll_full = np.zeros_like(mask)
    if nll_cols:
        filled = np.concatenate(nll_cols, axis=1)
        nll_full[:, : filled.shape[1]] = filled
    out_state = LstmState(
        [h.value.copy() for h, _ in state_vars], [c.value.copy() for _, c in state_vars]
    )
    return total, nll_full, out_state


def forward(
    params: ModelParameters,
    arch: ArchConfig,
    inputs: np.ndarray,
    state: LstmState | None = None,
    plan: DropoutPlan = EVAL_PLAN,
    cond: Conditioning = BARE,
) -> tuple[np.ndarray, LstmState]:
    """Log-probabilities over the vocabulary at every input position.

    Returns (B, T, V) log-probs plus the carried-out state; the state is
    never reset here, so successive calls continue one stream.
    """
    if inputs.max() >= arch.vocab_size:
        raise ConfigError("token index out of vocabulary range")
    n_rows, n_steps = inputs.shape
    if state is None:
        state = LstmState.zeros(arch, n_rows)
    tape = Tape()
    flat_var = tape.var(params.flat)
    blocks, encoded = param_vars(tape, flat_var, arch, cond, plan)
    state_vars = [
        (tape.var(h.copy()), tape.var(c.copy())) for h, c in zip(state.h, state.c)
    ]
    logits = _window_logits(tape, blocks, encoded, arch, inputs, state_vars, plan)
    _check_state_finite(state_vars)
    z = logits.value
    lse = np.log(np.exp(z - z.max(axis=1, keepdims=True)).sum(axis=1, keepdims=True))
    logprobs = z - z.max(axis=1, keepdims=True) - lse
    out_state = LstmState(
        [h.value.copy() for h, _ in state_vars], [c.value.copy() for _, c in state_vars]
    )
    return logprobs.reshape(n_steps, n_rows, -1).transpose(1, 0, 2), out_state


def plat_generate(hyper: np.ndarray, encoded: np.ndarray, arch: ArchConfig) -> ModelParameters:
    """Materialize the base parameters a hyper-network implies for one
    encoded typology vector (inspection helper; training differentiates
    through the same product on the tape)."""
    base_layout = Layout(tuple(base_blocks(arch)))
    if hyper.shape != (base_layout.total_size, encoded.shape[0]):
        raise ConfigError(
            f"hyper-network shape {hyper.shape} does not generate {base_layout.total_size} parameters"
        )
    return ModelParameters(base_layout, hyper @ encoded)


def sample_text(
    params: ModelParameters,
    arch: ArchConfig,
    vocab: CharVocabulary,
    length: int = 25,
    temperature: float = 1.0,
    seed: int = 0,
    cond: Conditioning = BARE,
) -> str:
    """Sample text one character at a time.

    The first character is uniform over non-special symbols; the rest
    come from softmax(logits / temperature) with BOS and EOS masked out,
    so the output contains only real vocabulary symbols. temperature=0
    switches to greedy argmax.
    """
    if temperature < 0:
        raise ConfigError("temperature must be >= 0")
    rng = RngHub(seed).stream("generate")
    n_chars = vocab.size - 2
    first = 2 + int(rng.integers(n_chars))
    out = [first]
    state = LstmState.zeros(arch, 1)
    # Prime with BOS so the model starts from its usual sentence context.
    _, state = forward(params, arch, np.array([[BOS]]), state, EVAL_PLAN, cond)
    prev = first
    while len(out) < length:
        logprobs, state = forward(params, arch, np.array([[prev]]), state, EVAL_PLAN, cond)
        scores = logprobs[0, 0, 2:]
        if temperature == 0.0:
            nxt = 2 + int(np.argmax(scores))
        else:
            scaled = scores / temperature
            p = np.exp(scaled - scaled.max())
            p /= p.sum()
            nxt = 2 + int(rng.choice(n_chars, p=p))
        out.append(nxt)
        prev = nxt
    return vocab.decode(out)


def desk_arch(vocab_size: int, **overrides) -> ArchConfig:
    return replace(ArchConfig(vocab_size=vocab_size), **overrides)
