"""Glue between an :class:`ExperimentConfig` and the library: data, models, runs, CSV files."""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .attacks import AttackConfig
from .config import ConfigError, ExperimentConfig
from .data import Dataset, load_digits, load_idx, synth_dataset
from .network import SnnModel, init_model
from .neurons import NeuronParams, SurrogateSpec
from .training import METRIC_COLUMNS, OptimizerState, TrainMode, fit, stream

INIT_STREAM = 999


def load_data(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    """Train and test sets for the configured source."""
    d = cfg.dataset
    if d.kind == "digits":
        full = load_digits()
    elif d.kind == "idx":
        full = load_idx(d.images, d.labels)
        if d.test_images and d.test_labels:
            return full, load_idx(d.test_images, d.test_labels)
    else:
        full = synth_dataset(d.kind, d.n, d.classes, seed=d.split_seed, dim=d.dim)
    return full.split(d.test_fraction, d.split_seed)


def check_compatible(cfg: ExperimentConfig, data: Dataset) -> None:
    width = data.x.shape[1]
    if cfg.model.layer_sizes[0] != width:
        raise ConfigError(f"model.layer_sizes[0] = {cfg.model.layer_sizes[0]} but the data has {width} features")
    if len(data) and int(data.y.max()) >= cfg.model.n_classes:
        raise ConfigError(f"labels reach {int(data.y.max())} but model.n_classes = {cfg.model.n_classes}")


def build_model(cfg: ExperimentConfig) -> SnnModel:
    m = cfg.model
    neuron = NeuronParams(m.tau, m.v_th, m.v_reset, cfg.effective_noise_variance)
    return init_model(m.layer_sizes, m.n_classes, stream(cfg.seed, INIT_STREAM), t_steps=m.t_steps,
                      neuron=neuron, surrogate=SurrogateSpec(m.surrogate, m.surrogate_width), gain=m.gain,
                      decoder=m.decoder)


def build_optimizer(cfg: ExperimentConfig) -> OptimizerState:
    t = cfg.train
    return OptimizerState(t.learning_rate, t.momentum, t.epochs, t.weight_decay)


def train_mode(cfg: ExperimentConfig) -> TrainMode:
    t = cfg.train
    return TrainMode(t.mode, AttackConfig("pgd", t.at_epsilon, t.at_step, t.at_iterations))


def run_training(cfg: ExperimentConfig, data: Dataset, on_epoch=None):
    """Train from a fresh initialization; returns ``(model, optimizer, metric_rows)``."""
    check_compatible(cfg, data)
    model = build_model(cfg)
    opt = build_optimizer(cfg)
    model, rows = fit(model, data, train_mode(cfg), cfg.tgo, opt, cfg.train.epochs, cfg.seed,
                      cfg.train.batch_size, on_epoch)
    return model, opt, rows


# -------------------------------------------------------------------- CSV
def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(header, rows))
    return path


def read_csv(path) -> Tuple[List[str], List[List[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV (no header row)")
    width = len(rows[0])
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != width:
            raise ValueError(f"{path}: line {i} has {len(r)} fields, header has {width}")
    return rows[0], rows[1:]


def metrics_rows(rows: Sequence[Dict]) -> List[List]:
    return [[r[c] for c in METRIC_COLUMNS] for r in rows]


def write_matrix(path, matrix: np.ndarray, row_values: Sequence[float], col_values: Sequence[float],
                 corner: str = "row\\col") -> Path:
    header = [corner] + [_cell(float(c)) for c in col_values]
    return write_csv(path, header, [[float(r)] + [float(v) for v in line] for r, line in zip(row_values, matrix)])


def write_pgm(path, image: np.ndarray) -> Path:
    """8-bit binary graymap, linearly scaled so the largest value is white."""
    image = np.asarray(image, dtype=np.float64)
    top = image.max()
    scaled = np.zeros(image.shape) if top <= 0 else image / top
    pixels = np.round(255 * np.clip(scaled, 0, 1)).astype(np.uint8)
    rows, cols = pixels.shape
    path = Path(path)
    path.write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes())
    return path


def as_image(vec: np.ndarray) -> np.ndarray:
    """Square image if the length is a perfect square, else a single row."""
    n = vec.size
    side = int(round(np.sqrt(n)))
    return vec.reshape(side, side) if side * side == n else vec.reshape(1, n)
