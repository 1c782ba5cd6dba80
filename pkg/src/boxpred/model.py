"""The PV-LSTM forecaster, its P-LSTM ablation, and the Zero-Vel baseline.

A pedestrian's 3D bounding box at one frame is the vector
(x, y, z, w, h, d): center in camera coordinates plus width, height, depth,
all in meters. Sequences of boxes are arrays of shape (..., T, 6).

PV-LSTM runs two encoders over an observed window, one on the raw boxes and
one on their frame-to-frame velocities, concatenates the final states into a
fused state (position part first), and decodes future velocities with a
closed-loop LSTM: the first decoder input is the last observed velocity and
every later input is the previous predicted velocity. Predicted velocities
integrate into absolute boxes from the last observed box. An optional second
decoder emits a per-step class distribution over pedestrian action
attributes via softmax. P-LSTM drops the velocity encoder; the fused state
is then just the position state.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import nn
from .linalg import ShapeError
from .nn import Affine, LstmParams, LstmState, StepCache

BOX_FIELDS = ("x", "y", "z", "w", "h", "d")
BOX_DIM = 6

CHECKPOINT_FORMAT = "boxpred-checkpoint-v1"

# Structural config fields that must agree between a checkpoint and a caller.
STRUCTURAL_FIELDS = ("hidden", "t_obs", "t_pred", "use_velocity_encoder", "n_attr_classes")


class ConfigError(ValueError):
    """Model configuration is inconsistent or a disabled component was used."""


class CheckpointError(ValueError):
    """Checkpoint file is malformed or disagrees with the requested config."""


@dataclass
class ModelConfig:
    t_obs: int
    t_pred: int
    hidden: int = 512
    use_velocity_encoder: bool = True  # True = PV-LSTM, False = P-LSTM
    n_attr_classes: int = 0  # 0 disables the attribute decoder
    seed: int = 0

    def __post_init__(self):
        if self.t_obs < 2:
            raise ConfigError(f"t_obs must be >= 2 (velocities need two frames), got {self.t_obs}")
        if self.t_pred < 1:
            raise ConfigError(f"t_pred must be >= 1, got {self.t_pred}")
        if self.hidden < 1:
            raise ConfigError(f"hidden must be >= 1, got {self.hidden}")
        if self.n_attr_classes == 1 or self.n_attr_classes < 0:
            raise ConfigError(f"n_attr_classes must be 0 or >= 2, got {self.n_attr_classes}")

    @property
    def fused_dim(self) -> int:
        return self.hidden * (2 if self.use_velocity_encoder else 1)

    def structural(self) -> dict:
        return {f: getattr(self, f) for f in STRUCTURAL_FIELDS}


@dataclass
class PvLstmModel:
    config: ModelConfig
    enc_p: LstmParams  # position encoder, D=6
    enc_v: LstmParams | None  # velocity encoder, D=6; None for P-LSTM
    dec_v: LstmParams  # velocity decoder, D=6, H=fused_dim
    fc_v: Affine  # fused_dim -> 6
    dec_a: LstmParams | None  # attribute decoder, D=6, H=fused_dim
    fc_a: Affine | None  # fused_dim -> n_attr_classes

    @property
    def fused_dim(self) -> int:
        return self.config.fused_dim

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        """Named parameter tensors in the fixed checkpoint order."""
        items = []
        lstms = (("enc_p", self.enc_p), ("enc_v", self.enc_v),
                 ("dec_v", self.dec_v), ("dec_a", self.dec_a))
        for name, p in lstms:
            if p is None:
                continue
            for f in ("w_ih", "w_hh", "b_ih", "b_hh"):
                items.append((f"{name}.{f}", getattr(p, f)))
        for name, fc in (("fc_v", self.fc_v), ("fc_a", self.fc_a)):
            if fc is None:
                continue
            items.append((f"{name}.w", fc.w))
            items.append((f"{name}.b", fc.b))
        return items

    def params(self) -> dict[str, np.ndarray]:
        """Live name -> array view of all parameters (mutations hit the model)."""
        return dict(self.param_items())


def init_model(config: ModelConfig) -> PvLstmModel:
    """Seeded initialization; each component draws from its own derived stream."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    seeds = [int(s) for s in rng.integers(0, 2**62, size=6)]
    fused = config.fused_dim
    return PvLstmModel(
        config=config,
        enc_p=nn.lstm_init(seeds[0], BOX_DIM, config.hidden),
        enc_v=nn.lstm_init(seeds[1], BOX_DIM, config.hidden) if config.use_velocity_encoder else None,
        dec_v=nn.lstm_init(seeds[2], BOX_DIM, fused),
        fc_v=nn.affine_init(seeds[4], fused, BOX_DIM),
        dec_a=nn.lstm_init(seeds[3], BOX_DIM, fused) if config.n_attr_classes else None,
        fc_a=nn.affine_init(seeds[5], fused, config.n_attr_classes) if config.n_attr_classes else None,
    )


def zero_model(config: ModelConfig) -> PvLstmModel:
    """All-zero parameters; predictions then repeat the last observed box."""
    fused = config.fused_dim
    return PvLstmModel(
        config=config,
        enc_p=LstmParams.zeros(BOX_DIM, config.hidden),
        enc_v=LstmParams.zeros(BOX_DIM, config.hidden) if config.use_velocity_encoder else None,
        dec_v=LstmParams.zeros(BOX_DIM, fused),
        fc_v=Affine.zeros(fused, BOX_DIM),
        dec_a=LstmParams.zeros(BOX_DIM, fused) if config.n_attr_classes else None,
        fc_a=Affine.zeros(fused, config.n_attr_classes) if config.n_attr_classes else None,
    )


def to_velocities(boxes) -> np.ndarray:
    """Frame-to-frame differences of box vectors; (.., T, 6) -> (.., T-1, 6)."""
    boxes = np.asarray(boxes, dtype=np.float64)
    if boxes.ndim < 2 or boxes.shape[-2] < 2:
        raise ValueError(f"need at least 2 boxes to form velocities, got shape {boxes.shape}")
    return np.diff(boxes, axis=-2)


def integrate(anchor, vels) -> np.ndarray:
    """Cumulative sum of velocities starting from (but excluding) the anchor box."""
    anchor = np.asarray(anchor, dtype=np.float64)
    vels = np.asarray(vels, dtype=np.float64)
    if vels.size == 0:
        return np.zeros(anchor.shape[:-1] + (0, anchor.shape[-1]))
    return anchor[..., None, :] + np.cumsum(vels, axis=-2)


def validate_boxes(boxes) -> np.ndarray:
    """Indices of boxes whose width/height/depth went negative (integration never clamps)."""
    boxes = np.asarray(boxes, dtype=np.float64)
    bad = (boxes[..., 3:] < 0.0).any(axis=-1)
    return np.flatnonzero(bad) if bad.ndim == 1 else bad


def _fuse(state_p: LstmState, state_v: LstmState | None) -> LstmState:
    if state_v is None:
        return state_p
    return LstmState(
        h=np.concatenate([state_p.h, state_v.h], axis=-1),
        c=np.concatenate([state_p.c, state_v.c], axis=-1),
    )


def _encode(model: PvLstmModel, window) -> tuple[LstmState, list[StepCache], list[StepCache]]:
    window = np.asarray(window, dtype=np.float64)
    if window.ndim < 2 or window.shape[-2] != model.config.t_obs:
        raise ValueError(
            f"window must hold t_obs={model.config.t_obs} boxes, got shape {window.shape}"
        )
    state_p, caches_p = nn.lstm_forward(model.enc_p, window)
    caches_v: list[StepCache] = []
    state_v = None
    if model.enc_v is not None:
        state_v, caches_v = nn.lstm_forward(model.enc_v, to_velocities(window))
    return _fuse(state_p, state_v), caches_p, caches_v


def encode(model: PvLstmModel, window) -> LstmState:
    """Run the encoder(s) over an observed window and return the fused state.

    Both encoders start from zero states. The fused state concatenates the
    position-encoder state with the velocity-encoder state (position first)
    on both h and c; for P-LSTM it is the position state alone.
    """
    fused, _, _ = _encode(model, window)
    return fused


def _decode_velocities(model: PvLstmModel, fused: LstmState, v_last):
    v_last = np.asarray(v_last, dtype=np.float64)
    if fused.h.shape[-1] != model.fused_dim:
        raise ShapeError(
            f"fused state has dim {fused.h.shape[-1]}, decoder expects {model.fused_dim}"
        )
    state = fused
    x = v_last
    outs = []
    caches = []
    for _ in range(model.config.t_pred):
        state, cache = nn.lstm_step(model.dec_v, state, x)
        x = nn.affine_apply(model.fc_v, state.h)
        outs.append(x)
        caches.append(cache)
    return np.stack(outs, axis=-2), caches


def decode_velocities(model: PvLstmModel, fused: LstmState, v_last) -> np.ndarray:
    """Closed-loop velocity decoding seeded by the last observed velocity.

    Step 1 consumes `v_last` with the fused state as the initial decoder
    state; every later step consumes the previous predicted velocity. Each
    hidden state maps through the linear head to one velocity.
    """
    vels, _ = _decode_velocities(model, fused, v_last)
    return vels


def _decode_attributes(model: PvLstmModel, fused: LstmState, v_last):
    if model.dec_a is None or model.fc_a is None:
        raise ConfigError("attribute decoder is disabled (n_attr_classes=0)")
    v_last = np.asarray(v_last, dtype=np.float64)
    state = fused
    probs = []
    logits = []
    caches = []
    for _ in range(model.config.t_pred):
        state, cache = nn.lstm_step(model.dec_a, state, v_last)
        z = nn.affine_apply(model.fc_a, state.h)
        probs.append(nn.softmax(z))
        logits.append(z)
        caches.append(cache)
    return np.stack(probs, axis=-2), np.stack(logits, axis=-2), caches


def decode_attributes(model: PvLstmModel, fused: LstmState, v_last) -> np.ndarray:
    """Per-step class distributions from the attribute decoder.

    Mirrors the velocity decoder but ends in a softmax. Having no velocity
    output to feed back, it consumes the last observed velocity at every
    step, which keeps it usable with or without the velocity decoder.
    """
    probs, _, _ = _decode_attributes(model, fused, v_last)
    return probs


def predict(model: PvLstmModel, window) -> tuple[np.ndarray, np.ndarray | None]:
    """Forecast t_pred future boxes (and attribute distributions when enabled).

    Composition: encode the window, decode future velocities closed-loop,
    then integrate from the last observed box.
    """
    window = np.asarray(window, dtype=np.float64)
    fused = encode(model, window)
    vels_obs = to_velocities(window)
    v_last = vels_obs[..., -1, :]
    pred_v = decode_velocities(model, fused, v_last)
    boxes = integrate(window[..., -1, :], pred_v)
    attrs = decode_attributes(model, fused, v_last) if model.dec_a is not None else None
    return boxes, attrs


def zero_vel_predict(window, t_pred: int) -> np.ndarray:
    """Repeat the last observed box for every future step."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim < 2 or window.shape[-2] < 1:
        raise ValueError(f"window must hold at least one box, got shape {window.shape}")
    return np.repeat(window[..., -1:, :], t_pred, axis=-2)


def save_checkpoint(model: PvLstmModel, path, meta: dict | None = None) -> Path:
    """Write a named-tensor snapshot as a single JSON document.

    Layout: format tag, the model config, optional metadata, and a map from
    parameter name to shape plus row-major values.
    """
    path = Path(path)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "meta": meta or {},
        "params": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]}
            for name, arr in self_items(model)
        },
    }
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def self_items(model: PvLstmModel):
    return model.param_items()


def load_checkpoint(path) -> tuple[PvLstmModel, dict]:
    """Load a checkpoint; shapes and the name set must match the stored config."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"unsupported checkpoint format {doc.get('format')!r} (expected {CHECKPOINT_FORMAT!r})"
        )
    try:
        config = ModelConfig(**doc["config"])
    except (KeyError, TypeError, ConfigError) as e:
        raise CheckpointError(f"bad config in checkpoint {path}: {e}") from e
    model = zero_model(config)
    stored = doc.get("params", {})
    expected = dict(model.param_items())
    missing = sorted(set(expected) - set(stored))
    extra = sorted(set(stored) - set(expected))
    if missing or extra:
        raise CheckpointError(f"parameter names mismatch: missing={missing}, extra={extra}")
    for name, arr in expected.items():
        entry = stored[name]
        if tuple(entry["shape"]) != arr.shape:
            raise CheckpointError(
                f"{name}: stored shape {entry['shape']} != expected {list(arr.shape)}"
            )
        values = np.asarray(entry["data"], dtype=np.float64)
        if values.size != arr.size:
            raise CheckpointError(f"{name}: {values.size} values for shape {list(arr.shape)}")
        arr[...] = values.reshape(arr.shape)
    return model, doc.get("meta", {})


def check_config(config: ModelConfig, requested: dict) -> None:
    """Raise when explicitly requested structural fields disagree with a config."""
    mismatches = {
        k: (getattr(config, k), v)
        for k, v in requested.items()
        if k in STRUCTURAL_FIELDS and getattr(config, k) != v
    }
    if mismatches:
        raise CheckpointError(
            "checkpoint config disagrees with requested config: "
            + ", ".join(f"{k}: checkpoint={a!r}, requested={b!r}" for k, (a, b) in mismatches.items())
            + f"; full checkpoint config: {asdict(config)}"
        )
