"""Recurrent sequence classifier over co-occurrence feature stacks.

Two stacked LSTM layers (the first emits a state per timestep, the second
only its state at the last data-backed timestep) followed by one or two
dense layers ending in a 3-way softmax:

    glcm2d             lstm -> lstm -> dense(softmax)
    glcm2_5d / glcm3d  lstm -> lstm -> dense(relu) -> dense(softmax)

Gate activations are sigmoid; the cell/output activation is relu by default
with tanh selectable.  Everything is plain float64 numpy: forward, exact
backpropagation through time, and mini-batch gradient descent, all
deterministic under a fixed seed.  Input-layer weights are shared across
timesteps by default; ``shared_weights=False`` builds one parameter set per
timestep instead (fixed-length inputs only).

Labels are encoded 0=benign, 1=malignant, 2=ambiguous.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimError, FormatError, IoError, LabelError

CLASS_COUNT = 3
LABEL_NAMES = ("benign", "malignant", "ambiguous")
LOG_EPS = 1e-12

MODE_LAYOUTS = {
    "glcm2d": ("lstm", "lstm", "softmax"),
    "glcm2_5d": ("lstm", "lstm", "relu_dense", "softmax"),
    "glcm3d": ("lstm", "lstm", "relu_dense", "softmax"),
}

_GATES = ("i", "f", "o", "g")
_LSTM_FIELDS = tuple(
    f"{kind}_{gate}" for kind in ("w", "u", "b") for gate in _GATES
)


@dataclass
class LstmLayerParams:
    """Per-gate weights of one LSTM cell (one timestep's set when unshared)."""

    w_i: np.ndarray
    w_f: np.ndarray
    w_o: np.ndarray
    w_g: np.ndarray
    u_i: np.ndarray
    u_f: np.ndarray
    u_o: np.ndarray
    u_g: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray
    activation: str = "relu"

    @property
    def input_size(self):
        return int(self.w_i.shape[1])

    @property
    def hidden_size(self):
        return int(self.w_i.shape[0])

    def arrays(self):
        return [(name, getattr(self, name)) for name in _LSTM_FIELDS]


@dataclass
class LstmLayer:
    """An LSTM layer: one shared parameter set, or one per timestep."""

    steps: list                 # list[LstmLayerParams]
    return_sequences: bool

    @property
    def shared(self):
        return len(self.steps) == 1

    @property
    def hidden_size(self):
        return self.steps[0].hidden_size

    @property
    def input_size(self):
        return self.steps[0].input_size

    @property
    def activation(self):
        return self.steps[0].activation

    def params_at(self, t):
        if self.shared:
            return self.steps[0]
        if t >= len(self.steps):
            raise DimError(
                f"unshared layer built for {len(self.steps)} timesteps, got index {t}"
            )
        return self.steps[t]


@dataclass
class DenseLayerParams:
    """Fully connected layer y = act(W x + b)."""

    weight: np.ndarray   # (out, in)
    bias: np.ndarray     # (out,)
    activation: str      # relu | softmax | identity

    @property
    def input_size(self):
        return int(self.weight.shape[1])

    @property
    def output_size(self):
        return int(self.weight.shape[0])

    def arrays(self):
        return [("weight", self.weight), ("bias", self.bias)]


@dataclass
class FusionModel:
    mode: str
    layers: list
    class_count: int = CLASS_COUNT

    @property
    def input_size(self):
        return self.layers[0].input_size


@dataclass
class TrainConfig:
    learning_rate: float = 1.0
    epochs: int = 60
    batch_size: int = 8
    seed: int = 0
    init_scale: float = 0.08

    def validate(self):
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")


def _init_lstm(rng, input_size, hidden_size, scale, activation):
    def mat(rows, cols):
        return rng.uniform(-scale, scale, size=(rows, cols))

    kwargs = {}
    for gate in _GATES:
        kwargs[f"w_{gate}"] = mat(hidden_size, input_size)
        kwargs[f"u_{gate}"] = mat(hidden_size, hidden_size)
        kwargs[f"b_{gate}"] = rng.uniform(-scale, scale, size=hidden_size)
    return LstmLayerParams(activation=activation, **kwargs)


def build_model(mode, feature_size, hidden_size=128, dense_size=32,
                cell_activation="relu", seed=0, init_scale=0.08,
                shared_weights=True, timesteps=None):
    """Construct the layer stack for one input mode with seeded init."""
    if mode not in MODE_LAYOUTS:
        raise ConfigError(f"unknown mode {mode!r}")
    if cell_activation not in ("relu", "tanh"):
        raise ConfigError(f"cell activation must be relu or tanh")
    if not shared_weights and (timesteps is None or timesteps < 1):
        raise ConfigError("unshared weights require a fixed timestep count")

    rng = np.random.default_rng(seed)
    layers = []
    n_steps = timesteps if not shared_weights else 1
    layers.append(LstmLayer(
        steps=[_init_lstm(rng, feature_size, hidden_size, init_scale, cell_activation)
               for _ in range(n_steps)],
        return_sequences=True,
    ))
    layers.append(LstmLayer(
        steps=[_init_lstm(rng, hidden_size, hidden_size, init_scale, cell_activation)],
        return_sequences=False,
    ))
    width = hidden_size
    for kind in MODE_LAYOUTS[mode][2:]:
        out = dense_size if kind == "relu_dense" else CLASS_COUNT
        act = "relu" if kind == "relu_dense" else "softmax"
        layers.append(DenseLayerParams(
            weight=rng.uniform(-init_scale, init_scale, size=(out, width)),
            bias=rng.uniform(-init_scale, init_scale, size=out),
            activation=act,
        ))
        width = out
    return FusionModel(mode=mode, layers=layers)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act(z, kind):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _act_deriv_from(z, a, kind):
    """Derivative of the cell activation, using value a = act(z)."""
    if kind == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(np.float64)


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def lstm_cell(x, h_prev, c_prev, params):
    """One recurrence step; returns the new (hidden, cell) state."""
    h, c, _ = _cell_forward(params, x, h_prev, c_prev)
    return h, c


def _cell_forward(p, x, h_prev, c_prev):
    if x.shape[0] != p.input_size or h_prev.shape[0] != p.hidden_size:
        raise DimError(
            f"cell expects input {p.input_size} / hidden {p.hidden_size}, "
            f"got {x.shape[0]} / {h_prev.shape[0]}"
        )
    gi = _sigmoid(p.w_i @ x + p.u_i @ h_prev + p.b_i)
    gf = _sigmoid(p.w_f @ x + p.u_f @ h_prev + p.b_f)
    go = _sigmoid(p.w_o @ x + p.u_o @ h_prev + p.b_o)
    zg = p.w_g @ x + p.u_g @ h_prev + p.b_g
    g = _act(zg, p.activation)
    c = gf * c_prev + gi * g
    ac = _act(c, p.activation)
    h = go * ac
    cache = (x, h_prev, c_prev, gi, gf, go, g, zg, c, ac)
    return h, c, cache


def _layer_forward(layer, xs, upto):
    hidden = layer.hidden_size
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    hs, caches = [], []
    for t in range(upto + 1):
        h, c, cache = _cell_forward(layer.params_at(t), xs[t], h, c)
        hs.append(h)
        caches.append(cache)
    return hs, caches


def _forward_full(model, seq):
    feats = np.asarray(seq.features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise DimError("sequence must have at least one timestep")
    if feats.shape[1] != model.input_size:
        raise DimError(
            f"model expects f={model.input_size}, sequence has f={feats.shape[1]}"
        )
    real = getattr(seq, "real", None)
    if real is None:
        real = np.ones(feats.shape[0], dtype=bool)
    if not real.any():
        raise DimError("sequence has no data-backed timestep")
    t_sel = int(np.flatnonzero(real)[-1])

    hs1, caches1 = _layer_forward(model.layers[0], feats, t_sel)
    hs2, caches2 = _layer_forward(model.layers[1], hs1, t_sel)
    x = hs2[-1]

    dense_caches = []
    for layer in model.layers[2:]:
        z = layer.weight @ x + layer.bias
        y = _softmax(z) if layer.activation == "softmax" else _act(z, layer.activation)
        dense_caches.append((x, z))
        x = y
    return x, (feats, t_sel, caches1, caches2, hs1, dense_caches)


def forward(model, seq):
    """Class probabilities for one sequence."""
    probs, _ = _forward_full(model, seq)
    return probs


def loss(probs, label):
    """Cross entropy -ln p[label], with the log argument floored at 1e-12."""
    if not 0 <= label < len(probs):
        raise LabelError(f"label {label} outside 0..{len(probs) - 1}")
    return float(-np.log(max(float(probs[label]), LOG_EPS)))


def predict(model, seq):
    """(label, probabilities); ties go to the lowest class index."""
    probs = forward(model, seq)
    return int(np.argmax(probs)), probs


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def zero_gradients(model):
    """Gradient containers mirroring the model's parameter structure."""
    grads = []
    for layer in model.layers:
        if isinstance(layer, LstmLayer):
            grads.append([
                {name: np.zeros_like(arr) for name, arr in step.arrays()}
                for step in layer.steps
            ])
        else:
            grads.append({name: np.zeros_like(arr) for name, arr in layer.arrays()})
    return grads


def parameter_pairs(model, grads):
    """Flat [(param_array, grad_array)] in a fixed traversal order."""
    pairs = []
    for layer, glayer in zip(model.layers, grads):
        if isinstance(layer, LstmLayer):
            for step, gstep in zip(layer.steps, glayer):
                for name, arr in step.arrays():
                    pairs.append((arr, gstep[name]))
        else:
            for name, arr in layer.arrays():
                pairs.append((arr, glayer[name]))
    return pairs


def _lstm_backward(layer, caches, dh_out, grads):
    """BPTT over one layer; dh_out[t] is the loss gradient at each output.

    Returns per-timestep gradients with respect to the layer inputs.
    """
    steps = len(caches)
    hidden = layer.hidden_size
    dxs = [None] * steps
    dh_rec = np.zeros(hidden)
    dc_rec = np.zeros(hidden)
    for t in range(steps - 1, -1, -1):
        p = layer.params_at(t)
        gstep = grads[0] if layer.shared else grads[t]
        x, h_prev, c_prev, gi, gf, go, g, zg, c, ac = caches[t]
        dh = dh_out[t] + dh_rec
        dc = dc_rec + dh * go * _act_deriv_from(c, ac, p.activation)
        dzo = dh * ac * go * (1.0 - go)
        dzi = dc * g * gi * (1.0 - gi)
        dzf = dc * c_prev * gf * (1.0 - gf)
        dzg = dc * gi * _act_deriv_from(zg, g, p.activation)

        dx = np.zeros_like(x)
        dh_prev = np.zeros(hidden)
        for gate, dz in (("i", dzi), ("f", dzf), ("o", dzo), ("g", dzg)):
            gstep[f"w_{gate}"] += np.outer(dz, x)
            gstep[f"u_{gate}"] += np.outer(dz, h_prev)
            gstep[f"b_{gate}"] += dz
            dx += getattr(p, f"w_{gate}").T @ dz
            dh_prev += getattr(p, f"u_{gate}").T @ dz
        dxs[t] = dx
        dh_rec = dh_prev
        dc_rec = dc * gf
    return dxs


def backward(model, seq, label):
    """Exact gradients of loss(forward(model, seq), label) for every parameter."""
    probs, (feats, t_sel, caches1, caches2, hs1, dense_caches) = _forward_full(model, seq)
    if not 0 <= label < model.class_count:
        raise LabelError(f"label {label} outside 0..{model.class_count - 1}")
    grads = zero_gradients(model)

    # softmax + cross entropy collapse to probs - onehot at the logits
    dvec = probs.copy()
    dvec[label] -= 1.0
    for li in range(len(model.layers) - 1, 1, -1):
        layer = model.layers[li]
        x, z = dense_caches[li - 2]
        if layer.activation == "relu":
            dvec = dvec * (z > 0.0)
        grads[li]["weight"] += np.outer(dvec, x)
        grads[li]["bias"] += dvec
        dvec = layer.weight.T @ dvec

    dh2 = [np.zeros(model.layers[1].hidden_size) for _ in range(t_sel + 1)]
    dh2[t_sel] = dvec
    dh1 = _lstm_backward(model.layers[1], caches2, dh2, grads[1])
    _lstm_backward(model.layers[0], caches1, dh1, grads[0])
    return grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def evaluate(model, dataset):
    """(mean loss, accuracy) of the model over (sequence, label) pairs."""
    total, correct = 0.0, 0
    for seq, label in dataset:
        probs = forward(model, seq)
        total += loss(probs, label)
        if int(np.argmax(probs)) == label:
            correct += 1
    n = len(dataset)
    return total / n, correct / n


def train(model, dataset, config):
    """Mini-batch gradient descent; returns per-epoch trace rows.

    Trace rows are (epoch, mean_loss, train_accuracy, elapsed_ms) where loss
    and accuracy are measured on the training set after the epoch's updates.
    The model is updated in place.
    """
    config.validate()
    if not dataset:
        raise ConfigError("empty training dataset")
    sizes = {s.features.shape[1] for s, _ in dataset}
    if len(sizes) != 1:
        raise DimError(f"mixed feature sizes in dataset: {sorted(sizes)}")
    rng = np.random.default_rng(config.seed)

    trace = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            total = zero_gradients(model)
            for idx in batch:
                seq, label = dataset[int(idx)]
                item = backward(model, seq, label)
                for (_, acc), (_, g) in zip(
                    parameter_pairs(model, total), parameter_pairs(model, item)
                ):
                    acc += g
            scale = config.learning_rate / len(batch)
            for param, grad in parameter_pairs(model, total):
                param -= scale * grad
        mean_loss, accuracy = evaluate(model, dataset)
        trace.append((epoch, mean_loss, accuracy, (time.perf_counter() - t0) * 1000.0))
    return trace


def parameter_count(model):
    grads = zero_gradients(model)
    return sum(p.size for p, _ in parameter_pairs(model, grads))


def lstm_parameter_count(input_size, hidden_size):
    """Closed form per shared-weight layer: 4*(h*in + h^2 + h)."""
    return 4 * (hidden_size * input_size + hidden_size * hidden_size + hidden_size)


# ---------------------------------------------------------------------------
# Checkpoints: text header then float64 LE parameter blocks
# ---------------------------------------------------------------------------

MAGIC = b"TFUSE01\n"


def save_model(model, path):
    lines = [f"mode={model.mode},layers={len(model.layers)}"]
    blocks = []
    for layer in model.layers:
        if isinstance(layer, LstmLayer):
            seq = "seq" if layer.return_sequences else "one"
            lines.append(
                f"lstm,input={layer.input_size},hidden={layer.hidden_size},"
                f"act={layer.activation},ret={seq},steps={len(layer.steps)}"
            )
            for step in layer.steps:
                blocks.extend(arr for _, arr in step.arrays())
        else:
            lines.append(
                f"dense,input={layer.input_size},out={layer.output_size},"
                f"act={layer.activation}"
            )
            blocks.extend(arr for _, arr in layer.arrays())
    lines.append("data")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(("\n".join(lines) + "\n").encode("ascii"))
            for arr in blocks:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _parse_fields(line, expected_kind):
    parts = line.split(",")
    if parts[0] != expected_kind:
        raise FormatError(f"expected {expected_kind} layer line, got {line!r}")
    fields = {}
    for part in parts[1:]:
        key, value = part.split("=", 1)
        fields[key] = value
    return fields


def load_model(path):
    try:
        with open(path, "rb") as fh:
            if fh.read(len(MAGIC)) != MAGIC:
                raise FormatError(f"{path}: bad checkpoint magic")
            lines = []
            while True:
                line = fh.readline().decode("ascii").strip()
                if line == "data":
                    break
                if not line:
                    raise FormatError(f"{path}: truncated checkpoint header")
                lines.append(line)
            payload = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    try:
        head = dict(part.split("=", 1) for part in lines[0].split(","))
        n_layers = int(head.get("layers", "0"))
    except ValueError as exc:
        raise FormatError(f"{path}: malformed checkpoint header: {exc}") from exc
    mode = head.get("mode")
    if mode not in MODE_LAYOUTS or n_layers != len(lines) - 1:
        raise FormatError(f"{path}: inconsistent checkpoint header")

    buf = np.frombuffer(payload, dtype="<f8")
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        if pos + n > buf.size:
            raise FormatError(f"{path}: checkpoint payload truncated")
        arr = buf[pos : pos + n].reshape(shape).copy()
        pos += n
        return arr

    layers = []
    for line in lines[1:]:
        kind = line.split(",", 1)[0]
        if kind == "lstm":
            fields = _parse_fields(line, "lstm")
            input_size = int(fields["input"])
            hidden = int(fields["hidden"])
            steps = []
            for _ in range(int(fields["steps"])):
                kwargs = {}
                for gate in _GATES:
                    kwargs[f"w_{gate}"] = take((hidden, input_size))
                for gate in _GATES:
                    kwargs[f"u_{gate}"] = take((hidden, hidden))
                for gate in _GATES:
                    kwargs[f"b_{gate}"] = take((hidden,))
                steps.append(LstmLayerParams(activation=fields["act"], **kwargs))
            layers.append(LstmLayer(steps=steps, return_sequences=fields["ret"] == "seq"))
        elif kind == "dense":
            fields = _parse_fields(line, "dense")
            out = int(fields["out"])
            inp = int(fields["input"])
            layers.append(DenseLayerParams(
                weight=take((out, inp)), bias=take((out,)), activation=fields["act"]
            ))
        else:
            raise FormatError(f"{path}: unknown layer kind {kind!r}")
    if pos != buf.size:
        raise FormatError(f"{path}: {buf.size - pos} trailing parameter values")
    return FusionModel(mode=mode, layers=layers)
