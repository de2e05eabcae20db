"""Writes the small offline task corpus used by configs/toy.toml.

Run from the repo root: python3 scripts/make_toy_tasks.py
"""
import json
import random
from pathlib import Path

OUT = Path("crates/augmenta/data/toy_tasks")
SIZES = {"train": 32, "dev": 16, "test": 64}

POS = ["great", "lovely", "superb", "charming", "delightful", "moving", "clever", "warm"]
NEG = ["dull", "awful", "clumsy", "tedious", "bland", "messy", "weak", "boring"]
SUBJ = ["the film", "this movie", "the story", "the acting", "the script", "the ending"]
FILL = ["honestly", "overall", "to me", "at times", "for sure", "in the end"]

TOPICS = {
    "sports": ["match", "goal", "coach", "team", "league", "score", "player"],
    "science": ["atom", "experiment", "theory", "lab", "molecule", "data", "physics"],
    "food": ["recipe", "soup", "bread", "spice", "oven", "dinner", "sauce"],
}
GLUE = ["the", "a", "new", "report", "about", "today", "local", "big", "was", "on"]

HABITATS = {
    "sea": ["shark", "whale", "octopus", "dolphin", "crab", "squid"],
    "forest": ["deer", "owl", "fox", "bear", "squirrel", "wolf"],
    "desert": ["camel", "scorpion", "lizard", "vulture", "jackal", "beetle"],
}
OPPOSITES = [
    ("hot", "cold"), ("big", "small"), ("fast", "slow"), ("happy", "sad"), ("early", "late"),
    ("light", "dark"), ("strong", "weak"), ("open", "closed"), ("young", "old"), ("rich", "poor"),
    ("high", "low"), ("full", "empty"), ("wet", "dry"), ("loud", "quiet"), ("hard", "soft"),
]


def sentiment(rng):
    label = rng.choice(["positive", "negative"])
    words = POS if label == "positive" else NEG
    text = f"{rng.choice(SUBJ)} was {rng.choice(words)} and {rng.choice(words)} {rng.choice(FILL)}"
    return text, label, ["positive", "negative"]


def topic(rng):
    label = rng.choice(sorted(TOPICS))
    words = rng.sample(TOPICS[label], 2) + rng.sample(GLUE, 4)
    rng.shuffle(words)
    return " ".join(words), label, sorted(TOPICS)


def habitat(rng):
    where = rng.choice(sorted(HABITATS))
    answer = rng.choice(HABITATS[where])
    others = [rng.choice(HABITATS[h]) for h in sorted(HABITATS) if h != where]
    options = [answer] + others
    rng.shuffle(options)
    return f"which animal lives in the {where} : {' , '.join(options)}", answer, options


def opposite(rng):
    a, b = rng.choice(OPPOSITES)
    if rng.random() < 0.5:
        a, b = b, a
    distract = rng.sample([w for p in OPPOSITES for w in p if w not in (a, b)], 2)
    options = [b] + distract
    rng.shuffle(options)
    return f"the opposite of {a} is", b, options


TASKS = [
    ("toy_sentiment", "classification", sentiment),
    ("toy_topic", "classification", topic),
    ("toy_habitat", "non_classification", habitat),
    ("toy_opposite", "non_classification", opposite),
]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for i, (name, kind, make) in enumerate(TASKS):
        rng = random.Random(1000 + i)
        (OUT / f"{name}.task.json").write_text(json.dumps({"task": name, "kind": kind}) + "\n")
        lines = []
        for split, n in SIZES.items():
            for _ in range(n):
                text, out, opts = make(rng)
                lines.append(json.dumps({"split": split, "input": text, "output": out, "options": opts}))
        (OUT / f"{name}.jsonl").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
