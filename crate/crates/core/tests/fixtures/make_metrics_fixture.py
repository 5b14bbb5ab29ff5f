"""Writes metrics_fixture.json: fixed label/score sets and reference metrics.

References use exact rational arithmetic straight from the definitions
(confusion-matrix counts, pairwise AUROC), independent of the Rust code.
Run: python3 make_metrics_fixture.py > metrics_fixture.json
"""
import json
import random
from fractions import Fraction


def case(name, n_classes, n, seed, skill):
    rng = random.Random(seed)
    y_true, scores = [], []
    for i in range(n):
        y = i % n_classes if i < 2 * n_classes else rng.randrange(n_classes)
        raw = [rng.randrange(1, 100) for _ in range(n_classes)]
        raw[y] += skill
        total = sum(raw)
        # Six decimals; the oracle compares scores as exact decimal fractions.
        scores.append([round(r / total, 6) for r in raw])
        y_true.append(y)
    return name, n_classes, y_true, scores


def argmax(row):
    best = 0
    for i, v in enumerate(row):
        if v > row[best]:
            best = i
    return best


def reference(n_classes, y_true, scores):
    y_pred = [argmax(s) for s in scores]
    cm = [[0] * n_classes for _ in range(n_classes)]
    for t, p in zip(y_true, y_pred):
        cm[t][p] += 1
    n = len(y_true)
    support = [sum(r) for r in cm]
    predicted = [sum(cm[i][j] for i in range(n_classes)) for j in range(n_classes)]

    recalls = [Fraction(cm[i][i], support[i]) for i in range(n_classes) if support[i]]
    ba = sum(recalls) / len(recalls)

    f1 = Fraction(0)
    for i in range(n_classes):
        tp = cm[i][i]
        fp = predicted[i] - tp
        fn = support[i] - tp
        if 2 * tp + fp + fn:
            f1 += support[i] * Fraction(2 * tp, 2 * tp + fp + fn)
    wf1 = f1 / n

    po = Fraction(sum(cm[i][i] for i in range(n_classes)), n)
    pe = sum(Fraction(support[i] * predicted[i], n * n) for i in range(n_classes))
    kappa = (po - pe) / (1 - pe)

    def pairwise_auc(pos_flags, s):
        pos = [x for x, f in zip(s, pos_flags) if f]
        neg = [x for x, f in zip(s, pos_flags) if not f]
        if not pos or not neg:
            return None
        wins = Fraction(0)
        for a in pos:
            for b in neg:
                a_f, b_f = Fraction(str(a)), Fraction(str(b))
                wins += 1 if a_f > b_f else (Fraction(1, 2) if a_f == b_f else 0)
        return wins / (len(pos) * len(neg))

    if n_classes == 2:
        auc = pairwise_auc([y == 1 for y in y_true], [s[1] for s in scores])
    else:
        per = [pairwise_auc([y == c for y in y_true], [s[c] for s in scores]) for c in range(n_classes)]
        per = [a for a in per if a is not None]
        auc = sum(per) / len(per)

    return {
        "confusion_matrix": cm,
        "balanced_accuracy": float(ba),
        "weighted_f1": float(wf1),
        "cohens_kappa": float(kappa),
        "auroc": float(auc),
        "n_eval": n,
    }


cases = [case("six_class", 6, 90, 7, 60), case("binary", 2, 40, 3, 40)]
out = []
for name, k, y, s in cases:
    out.append({"name": name, "n_classes": k, "y_true": y, "scores": s, "expected": reference(k, y, s)})
print(json.dumps(out, indent=1))
