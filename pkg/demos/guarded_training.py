"""Vanilla vs threshold-guarded training on the 8x8 digits (about 15 s).

Shows where membrane potentials end up relative to threshold and what that
does to clean and FGSM accuracy. Needs scikit-learn for the digits.
"""
import numpy as np

from snnguard import analysis, tgo
from snnguard.attacks import AttackConfig
from snnguard.config import ExperimentConfig
from snnguard.experiment import load_data, run_training
from snnguard.training import evaluate, recorded_forward, stream

base = ExperimentConfig()
train, test = load_data(base)
suite = [AttackConfig("fgsm", 0.1, name="fgsm 0.1")]

for mode in ("vanilla", "tgo"):
    cfg = ExperimentConfig()
    cfg.train.mode = mode
    model, _, rows = run_training(cfg, train)
    table = evaluate(model, test, suite)
    rec = recorded_forward(model, test.x, stream(0, 2000, 0))
    hist = analysis.membrane_histogram(rec, bins=10, value_range=(0.0, 2.0), v_th=1.0, margin=0.2)
    print(f"{mode}: final loss {rows[-1]['loss']:.3f}, clean {table['clean']:.1f}%, "
          f"fgsm {table['fgsm 0.1']:.1f}%, near threshold {tgo.threshold_neighbor_fraction(rec, 1.0, 0.2):.3f}")
    share = hist.counts / hist.total
    print(f"  below 0: {hist.underflow / hist.total:.3f}, above 2: {hist.overflow / hist.total:.3f}")
    for lo, f in zip(hist.edges[:-1], share):
        print(f"  [{lo:3.1f}, {lo + 0.2:3.1f})  {f:6.3f} {'#' * int(200 * f)}")
