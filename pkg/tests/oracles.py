"""Independent reference implementations shared by the unit and acceptance tests."""

import numpy as np

from bpmfusion.train_eval import compute_metrics, confusion_from_probabilities

ACCEPTANCE_LINES: list[str] = []  # one PASS/FAIL line per acceptance criterion, echoed after the run


def count_oracle(labels, preds):
    """Loop-based tally and float evaluation of the four metrics."""
    tp = tn = fp = fn = 0
    for y, p in zip(labels, preds):
        if y and p:
            tp += 1
        elif y:
            fn += 1
        elif p:
            fp += 1
        else:
            tn += 1
    sen = tp / (tp + fn) if tp + fn else 0.0
    spec = tn / (tn + fp) if tn + fp else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return (tp, tn, fp, fn), {"bacc": (sen + spec) / 2, "f1": f1, "sen": sen, "spec": spec}


def metric_mismatches(n_cases, seed=0, threshold=0.5):
    """Count random cases where thresholding plus metric evaluation disagrees with the oracle."""
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_cases):
        n = int(rng.integers(1, 40))
        labels = rng.integers(0, 2, n)
        probs = rng.uniform(size=n)
        probs[rng.uniform(size=n) < 0.1] = threshold  # exact ties predict BD
        counts, expected = count_oracle(labels.tolist(), [p >= threshold for p in probs.tolist()])
        c = confusion_from_probabilities(probs, labels, threshold)
        got = compute_metrics(c).as_dict()
        if (c.tp, c.tn, c.fp, c.fn) != counts or got != expected:
            bad += 1
    return bad
