"""Coarse-grained forecasting of per-subgraph mean values.

Two forecasters share one interface: a persistence baseline (repeat the last
coarse mean) and a single-layer LSTM trained from scratch on the coarse-mean
series paired with each slot's weather.  The LSTM input row for slot tau is
[mu_tau, weather features of slot tau] (11 entries); the training target is
mu_{tau+1}.  Multi-step horizons are covered by iterated one-step rollout,
feeding each prediction back in as the next input.

Training standardizes inputs and targets internally for stability and then
folds those affine maps back into the gate weights and the output head, so
the returned parameters operate directly on raw series values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DataError, NumericalError, TrainingError
from .features import WEATHER_TYPES, WeatherRecord
from .model import WindowConfig

#: entries of the per-slot weather feature block (one-hot type, wind, direction, temp, humidity)
WEATHER_FEATURES = WEATHER_TYPES + 5
#: full LSTM input row width: the coarse mean plus the weather block
INPUT_SIZE = 1 + WEATHER_FEATURES
#: relative spread below which a series column counts as constant when standardizing
STD_FLOOR = 1e-9


def weather_features(record: WeatherRecord) -> np.ndarray:
    """Weather block of the forecaster input row for one slot."""
    vec = np.zeros(WEATHER_FEATURES)
    vec[record.weather_type] = 1.0
    vec[WEATHER_TYPES + 0] = record.wind_speed
    theta = math.radians(record.wind_dir_deg)
    vec[WEATHER_TYPES + 1] = math.sin(theta)
    vec[WEATHER_TYPES + 2] = math.cos(theta)
    vec[WEATHER_TYPES + 3] = record.temperature_c
    vec[WEATHER_TYPES + 4] = record.humidity_pct
    return vec


@dataclass(frozen=True)
class CoarseSeries:
    """Per-slot coarse means paired with that slot's weather, contiguous in time."""

    entries: tuple[tuple[int, float, WeatherRecord], ...]

    def __post_init__(self) -> None:
        slots = [slot for slot, _, _ in self.entries]
        for a, b in zip(slots, slots[1:]):
            if b != a + 1:
                raise ValueError(f"series slots must be contiguous, got {a} then {b}")
        for slot, mu, record in self.entries:
            if not math.isfinite(mu):
                raise ValueError(f"coarse mean for slot {slot} is not finite")
            if record.slot != slot:
                raise ValueError(
                    f"weather record for slot {record.slot} attached to series slot {slot}"
                )

    def __len__(self) -> int:
        return len(self.entries)

    def last_slot(self) -> int:
        if not self.entries:
            raise ValueError("empty series has no last slot")
        return self.entries[-1][0]

    def mu_values(self) -> np.ndarray:
        return np.array([mu for _, mu, _ in self.entries], dtype=float)

    def input_rows(self) -> np.ndarray:
        """One LSTM input row per series slot."""
        rows = np.zeros((len(self.entries), INPUT_SIZE))
        for idx, (_, mu, record) in enumerate(self.entries):
            rows[idx, 0] = mu
            rows[idx, 1:] = weather_features(record)
        return rows


def coarse_means(values: np.ndarray, window: WindowConfig) -> np.ndarray:
    """Per-subgraph mean of a full window vector, oldest subgraph first."""
    values = np.asarray(values, dtype=float)
    if values.shape != (window.n_nodes,):
        raise ValueError(f"expected {window.n_nodes} values, got {values.shape}")
    return values.reshape(window.n_subgraphs, window.l).mean(axis=1)


def persistence_forecast(series: CoarseSeries) -> float:
    """Baseline forecast: repeat the most recent coarse mean."""
    if len(series) == 0:
        raise ValueError("cannot forecast from an empty series")
    return float(series.entries[-1][1])


@dataclass
class LstmParams:
    """Single-layer LSTM weights plus a scalar linear head.

    Gate rows of w_x / w_h / b are stacked in the order input, forget,
    candidate, output (4 blocks of hidden_size rows each).  The head is
    linear in the hidden state and the current coarse mean,
    y = w_out . h + w_skip * x[0] + b_out; the skip term lets the net track
    the series level directly (a tanh-bounded hidden state alone cannot
    follow a drifting level outside its training range).
    """

    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray
    w_out: np.ndarray
    w_skip: float
    b_out: float

    def __post_init__(self) -> None:
        h = self.hidden_size
        if h < 1:
            raise ValueError("hidden size must be >= 1")
        if self.w_x.shape != (4 * h, self.input_size):
            raise ValueError("w_x shape does not match 4*hidden x input")
        if self.w_h.shape != (4 * h, h) or self.b.shape != (4 * h,):
            raise ValueError("w_h or b shape does not match hidden size")
        if self.w_out.shape != (h,):
            raise ValueError("w_out must have one entry per hidden unit")
        for arr in (self.w_x, self.w_h, self.b, self.w_out):
            if not np.all(np.isfinite(arr)):
                raise ValueError("parameters must be finite")
        if not (math.isfinite(self.b_out) and math.isfinite(self.w_skip)):
            raise ValueError("parameters must be finite")

    @property
    def hidden_size(self) -> int:
        return self.w_out.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_x.shape[1]

    def copy(self) -> "LstmParams":
        return LstmParams(self.w_x.copy(), self.w_h.copy(), self.b.copy(),
                          self.w_out.copy(), float(self.w_skip), float(self.b_out))

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmParams":
        return cls(
            w_x=np.zeros((4 * hidden_size, input_size)),
            w_h=np.zeros((4 * hidden_size, hidden_size)),
            b=np.zeros(4 * hidden_size),
            w_out=np.zeros(hidden_size),
            w_skip=0.0,
            b_out=0.0,
        )

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "LstmParams":
        """Seeded uniform [-0.1, 0.1] init with the forget-gate bias raised to +1.

        The skip weight starts at exactly 1 so the untrained net already maps
        the last observed value through to the output; training then learns
        corrections on top of that.
        """
        params = cls(
            w_x=rng.uniform(-0.1, 0.1, size=(4 * hidden_size, input_size)),
            w_h=rng.uniform(-0.1, 0.1, size=(4 * hidden_size, hidden_size)),
            b=rng.uniform(-0.1, 0.1, size=4 * hidden_size),
            w_out=rng.uniform(-0.1, 0.1, size=hidden_size),
            w_skip=1.0,
            b_out=float(rng.uniform(-0.1, 0.1)),
        )
        params.b[hidden_size : 2 * hidden_size] += 1.0
        return params


@dataclass(frozen=True)
class LstmConfig:
    """Trainer settings: width, step size, epoch budget, and the init seed."""

    hidden_size: int = 16
    learning_rate: float = 0.05
    epochs: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def _split_gates(z: np.ndarray, h: int):
    return z[0:h], z[h : 2 * h], z[2 * h : 3 * h], z[3 * h : 4 * h]


def _forward_cache(params: LstmParams, inputs: np.ndarray):
    """Run the recurrence keeping every intermediate needed for BPTT."""
    h_size = params.hidden_size
    steps = inputs.shape[0]
    h = np.zeros(h_size)
    c = np.zeros(h_size)
    outputs = np.zeros(steps)
    cache = []
    for t in range(steps):
        x = inputs[t]
        z = params.w_x @ x + params.w_h @ h + params.b
        zi, zf, zg, zo = _split_gates(z, h_size)
        gi = expit(zi)
        gf = expit(zf)
        gg = np.tanh(zg)
        go = expit(zo)
        c_prev = c
        h_prev = h
        c = gf * c_prev + gi * gg
        hc = np.tanh(c)
        h = go * hc
        outputs[t] = float(params.w_out @ h + params.w_skip * x[0] + params.b_out)
        cache.append((x, h_prev, c_prev, gi, gf, gg, go, c, hc, h))
    return outputs, (h, c), cache


def lstm_forward(params: LstmParams, inputs: np.ndarray):
    """Outputs (one scalar per input row) and the final (hidden, cell) state.

    Pure: repeated calls on the same inputs return identical results; the
    initial state is always zero.  Raises NumericalError when the recurrence
    produces non-finite values.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.size == 0:
        return np.zeros(0), (np.zeros(params.hidden_size), np.zeros(params.hidden_size))
    if inputs.shape[1] != params.input_size:
        raise ValueError(
            f"input rows have width {inputs.shape[1]}, parameters expect {params.input_size}"
        )
    outputs, state, _ = _forward_cache(params, inputs)
    if not (np.all(np.isfinite(outputs)) and np.all(np.isfinite(state[0]))):
        raise NumericalError("forward pass produced non-finite values")
    return outputs, state


def lstm_loss_and_grads(params: LstmParams, inputs: np.ndarray, targets: np.ndarray):
    """Mean squared one-step error and its analytic gradients via BPTT."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float)
    grads = LstmParams.zeros(params.input_size, params.hidden_size)
    if inputs.size == 0:
        return 0.0, grads
    steps = inputs.shape[0]
    if targets.shape != (steps,):
        raise ValueError("need one target per input row")
    outputs, _, cache = _forward_cache(params, inputs)
    residual = outputs - targets
    mse = float(residual @ residual) / steps
    h_size = params.hidden_size
    d_b_out = 0.0
    d_w_skip = 0.0
    dh_next = np.zeros(h_size)
    dc_next = np.zeros(h_size)
    for t in range(steps - 1, -1, -1):
        x, h_prev, c_prev, gi, gf, gg, go, c, hc, h = cache[t]
        dy = 2.0 * residual[t] / steps
        grads.w_out += dy * h
        d_w_skip += dy * x[0]
        d_b_out += dy
        dh = dy * params.w_out + dh_next
        do = dh * hc
        dc = dh * go * (1.0 - hc * hc) + dc_next
        df = dc * c_prev
        di = dc * gg
        dg = dc * gi
        dc_next = dc * gf
        dz = np.concatenate([
            di * gi * (1.0 - gi),
            df * gf * (1.0 - gf),
            dg * (1.0 - gg * gg),
            do * go * (1.0 - go),
        ])
        grads.w_x += np.outer(dz, x)
        grads.w_h += np.outer(dz, h_prev)
        grads.b += dz
        dh_next = params.w_h.T @ dz
    grads.w_skip = d_w_skip
    grads.b_out = d_b_out
    return mse, grads


def _numeric_grads(params: LstmParams, inputs: np.ndarray, targets: np.ndarray,
                   step: float = 1e-5) -> LstmParams:
    """Central finite differences of the training loss in every parameter."""
    numeric = LstmParams.zeros(params.input_size, params.hidden_size)

    def loss_at(p: LstmParams) -> float:
        mse, _ = lstm_loss_and_grads(p, inputs, targets)
        return mse

    for name in ("w_x", "w_h", "b", "w_out"):
        array = getattr(params, name)
        out = getattr(numeric, name)
        flat = array.reshape(-1)
        out_flat = out.reshape(-1)
        for idx in range(flat.size):
            probe = params.copy()
            probe_flat = getattr(probe, name).reshape(-1)
            probe_flat[idx] = flat[idx] + step
            up = loss_at(probe)
            probe_flat[idx] = flat[idx] - step
            down = loss_at(probe)
            out_flat[idx] = (up - down) / (2.0 * step)
    for name in ("w_skip", "b_out"):
        probe = params.copy()
        setattr(probe, name, getattr(params, name) + step)
        up = loss_at(probe)
        setattr(probe, name, getattr(params, name) - step)
        down = loss_at(probe)
        setattr(numeric, name, (up - down) / (2.0 * step))
    return numeric


def grad_check(params: LstmParams, inputs: np.ndarray, targets: np.ndarray,
               analytic: LstmParams | None = None) -> float:
    """Max relative discrepancy between BPTT and finite-difference gradients.

    The discrepancy of each parameter array is ||ga - gn|| / (||ga|| + ||gn||)
    (0 when both vanish); the maximum over arrays is returned.  `analytic`
    overrides the computed gradients, which lets tests confirm that a
    deliberately corrupted gradient is detected.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.size == 0:
        return 0.0
    if analytic is None:
        _, analytic = lstm_loss_and_grads(params, inputs, targets)
    numeric = _numeric_grads(params, inputs, targets)
    worst = 0.0
    for name in ("w_x", "w_h", "b", "w_out", "w_skip", "b_out"):
        ga = np.atleast_1d(np.asarray(getattr(analytic, name), dtype=float))
        gn = np.atleast_1d(np.asarray(getattr(numeric, name), dtype=float))
        denom = float(np.linalg.norm(ga) + np.linalg.norm(gn))
        if denom == 0.0:
            continue
        worst = max(worst, float(np.linalg.norm(ga - gn)) / denom)
    return worst


def _standardize(matrix: np.ndarray):
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    # Reduction rounding can report a tiny nonzero spread on a constant
    # column; dividing by it would blow ulp noise up into the folded weights,
    # so anything below rounding scale counts as constant.
    floor = STD_FLOOR * np.maximum(1.0, np.abs(mean))
    std = np.where(std > floor, std, 1.0)
    return (matrix - mean) / std, mean, std


def _fold_scaling(params: LstmParams, in_mean: np.ndarray, in_std: np.ndarray,
                  out_mean: float, out_std: float) -> LstmParams:
    """Absorb input/output standardization into the affine ends of the net.

    w_x @ ((x - m) / s) = (w_x / s) @ x - w_x @ (m / s), the skip term scales
    the same way in its single entry, and the scalar head unscales as
    y * out_std + out_mean, so every map folds exactly into the parameters.
    """
    folded = params.copy()
    folded.b = params.b - params.w_x @ (in_mean / in_std)
    folded.w_x = params.w_x / in_std
    folded.w_out = params.w_out * out_std
    folded.w_skip = params.w_skip * out_std / in_std[0]
    folded.b_out = (params.b_out - params.w_skip * in_mean[0] / in_std[0]) * out_std + out_mean
    return folded


def make_training_pairs(series: CoarseSeries):
    """Input rows for slots tau and targets mu_{tau+1} (one-step-ahead pairs)."""
    rows = series.input_rows()
    mus = series.mu_values()
    return rows[:-1], mus[1:]


def lstm_train(series: CoarseSeries, config: LstmConfig) -> LstmParams:
    """Fit the LSTM to one-step-ahead prediction on the series.

    Full-sequence backpropagation through time with plain gradient descent,
    deterministic given config.seed.  Raises TrainingError when the loss
    leaves the finite range or fails to come back below its starting value
    (try a smaller learning rate).
    """
    if len(series) < 4:
        raise ValueError(f"need a series of at least 4 slots, got {len(series)}")
    raw_inputs, raw_targets = make_training_pairs(series)
    inputs, in_mean, in_std = _standardize(raw_inputs)
    t_mean = float(raw_targets.mean())
    t_std = float(raw_targets.std())
    if t_std <= STD_FLOOR * max(1.0, abs(t_mean)):
        t_std = 1.0
    targets = (raw_targets - t_mean) / t_std
    rng = np.random.default_rng(config.seed)
    params = LstmParams.init(INPUT_SIZE, config.hidden_size, rng)
    first_loss = None
    last_loss = None
    for _ in range(config.epochs):
        mse, grads = lstm_loss_and_grads(params, inputs, targets)
        if not math.isfinite(mse):
            raise TrainingError(
                "training loss became non-finite; use a smaller learning rate"
            )
        if first_loss is None:
            first_loss = mse
        last_loss = mse
        lr = config.learning_rate
        params.w_x -= lr * grads.w_x
        params.w_h -= lr * grads.w_h
        params.b -= lr * grads.b
        params.w_out -= lr * grads.w_out
        params.w_skip -= lr * grads.w_skip
        params.b_out -= lr * grads.b_out
    if not all(np.all(np.isfinite(arr)) for arr in (params.w_x, params.w_h, params.b, params.w_out)):
        raise TrainingError("parameters became non-finite; use a smaller learning rate")
    if last_loss > first_loss * (1.0 + 1e-9):
        raise TrainingError(
            "training loss ended above its starting value; use a smaller learning rate"
        )
    return _fold_scaling(params, in_mean, in_std, t_mean, t_std)


def forecast_next(params: LstmParams, series: CoarseSeries) -> float:
    """One-step-ahead prediction from the end of the series."""
    if len(series) == 0:
        raise ValueError("cannot forecast from an empty series")
    outputs, _ = lstm_forward(params, series.input_rows())
    return float(outputs[-1])


def forecast_ahead(params: LstmParams, series: CoarseSeries, steps: int,
                   future_weather: list[WeatherRecord]) -> float:
    """Iterated one-step rollout `steps` slots past the series end.

    Each intermediate prediction is appended to the series (paired with that
    slot's weather) and fed back in; weather must be supplied for the
    intermediate slots (steps - 1 records beyond the first prediction).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if len(future_weather) < steps - 1:
        raise DataError(
            f"iterated rollout over {steps} steps needs {steps - 1} future weather records"
        )
    current = series
    value = forecast_next(params, current)
    for extra in range(steps - 1):
        slot = current.last_slot() + 1
        record = future_weather[extra]
        if record.slot != slot:
            raise DataError(f"future weather record is for slot {record.slot}, expected {slot}")
        current = CoarseSeries(current.entries + ((slot, value, record),))
        value = forecast_next(params, current)
    return value


FORMAT_LINE = "corrcast-lstm v1"


def save_lstm(params: LstmParams, path) -> None:
    """Write parameters to a plain-text shape-headed key-value file."""
    lines = [FORMAT_LINE]
    lines.append(f"input_size {params.input_size}")
    lines.append(f"hidden_size {params.hidden_size}")
    for name in ("w_x", "w_h", "b", "w_out"):
        array = np.atleast_2d(getattr(params, name))
        lines.append(f"{name} {array.shape[0]} {array.shape[1]}")
        for row in array:
            lines.append(" ".join(repr(float(v)) for v in row))
    for name in ("w_skip", "b_out"):
        lines.append(f"{name} 1 1")
        lines.append(repr(float(getattr(params, name))))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def load_lstm(path) -> LstmParams:
    """Read parameters written by save_lstm, rejecting unknown versions."""
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line.rstrip("\n") for line in handle]
    if not lines or lines[0] != FORMAT_LINE:
        raise DataError(f"unsupported forecaster file format: {lines[0] if lines else 'empty'!r}")
    cursor = 1

    def take() -> str:
        nonlocal cursor
        if cursor >= len(lines):
            raise DataError("forecaster file truncated")
        line = lines[cursor]
        cursor += 1
        return line

    header = dict([take().split() for _ in range(2)])
    arrays = {}
    for _ in range(6):
        name, rows, cols = take().split()
        rows, cols = int(rows), int(cols)
        data = np.array([[float(v) for v in take().split()] for _ in range(rows)])
        if data.shape != (rows, cols):
            raise DataError(f"array {name} has wrong shape in forecaster file")
        arrays[name] = data
    declared = (int(header["input_size"]), int(header["hidden_size"]))
    if arrays["w_x"].shape != (4 * declared[1], declared[0]):
        raise DataError("forecaster file header disagrees with stored array shapes")
    return LstmParams(
        w_x=arrays["w_x"],
        w_h=arrays["w_h"],
        b=arrays["b"].reshape(-1),
        w_out=arrays["w_out"].reshape(-1),
        w_skip=float(arrays["w_skip"][0, 0]),
        b_out=float(arrays["b_out"][0, 0]),
    )
