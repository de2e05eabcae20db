"""Independent oracle for the classification metrics and argmax rule.

Builds a confusion matrix per case and computes macro-F1 and accuracy with
exact fractions, then freezes the cases as a JSON fixture.
Run from the repo root: python3 scripts/metric_oracle.py
"""
import json
import random
from fractions import Fraction
from pathlib import Path

OUT = Path("crates/augmenta/tests/fixtures/metric_cases.json")


def confusion(gold, pred):
    labels = sorted(set(gold) | set(pred))
    m = {g: {p: 0 for p in labels} for g in labels}
    for g, p in zip(gold, pred):
        m[g][p] += 1
    return labels, m


def macro_f1(gold, pred):
    labels, m = confusion(gold, pred)
    total = Fraction(0)
    for c in labels:
        tp = m[c][c]
        fp = sum(m[g][c] for g in labels if g != c)
        fn = sum(m[c][p] for p in labels if p != c)
        if tp == 0:
            continue
        prec = Fraction(tp, tp + fp)
        rec = Fraction(tp, tp + fn)
        total += 2 * prec * rec / (prec + rec)
    return total / len(labels)


def accuracy(gold, pred):
    return Fraction(sum(g == p for g, p in zip(gold, pred)), len(gold))


def main():
    rng = random.Random(6)
    cases = [{"gold": ["A", "A", "B"], "pred": ["A", "B", "B"]}]
    while len(cases) < 50:
        k = rng.randint(1, 5)
        labels = [chr(ord("A") + i) for i in range(k)]
        n = rng.randint(1, 30)
        gold = [rng.choice(labels) for _ in range(n)]
        if rng.random() < 0.3:
            pred = [g if rng.random() < 0.7 else rng.choice(labels) for g in gold]
        else:
            pred = [rng.choice(labels) for _ in range(n)]
        cases.append({"gold": gold, "pred": pred})
    for c in cases:
        c["macro_f1"] = float(macro_f1(c["gold"], c["pred"]))
        c["accuracy"] = float(accuracy(c["gold"], c["pred"]))

    argmax_cases = []
    for _ in range(50):
        n = rng.randint(1, 8)
        scores = [float(rng.randint(-3, 3)) for _ in range(n)]
        if rng.random() < 0.5:
            scores = [s + rng.random() for s in scores]
        argmax_cases.append({"scores": scores, "expected": scores.index(max(scores))})

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps({"metrics": cases, "argmax": argmax_cases}, indent=1) + "\n")
    print(f"case 0 macro_f1 = {cases[0]['macro_f1']:.4f}")


if __name__ == "__main__":
    main()
