#!/usr/bin/env python3
"""Regenerates the synthetic flip benchmark under fixtures/flip_benchmark/.

The benchmark is a 40-instance dataset plus a trigram toy model built so
that, with clarifications appended after the option text:

  * 10 "easy" instances are answered correctly by the bare scorer,
  * 25 "flip" instances are answered wrongly by the bare scorer but
    correctly once the self-talk clarification ("<marker> is <good> ...")
    is appended: the clarification continues cheaply after the correct
    choice and expensively after the distractor,
  * 5 "hard" instances stay wrong: their clarification is expensive after
    either choice.

Baseline accuracy 25%, clarified accuracy 87.5%, 25 useful flips, 0
harmful. All generation walks have a single-token nucleus at the
configured top-p values, so the whole pipeline is deterministic for any
seed.
"""

import json
import math
import os

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "flip_benchmark")

N = 40
EASY = range(30, 40)   # baseline right
HARD = range(25, 30)   # baseline wrong, stays wrong
ANSWER_TAIL = ["really", "truly", "quite", "very", "much", "so",
               "indeed", "genuinely", "certainly"]
GENERIC_TAIL = ["fine", "and", "dandy", "all", "day", "long",
                "every", "single", "time", "always"]
SHARED = (["the", "tale", "of", "ends.", "what", "is", "it", "?", "pad", "<unk>"]
          + ANSWER_TAIL + GENERIC_TAIL)


def lg(p):
    return math.log2(p)


def main():
    markers = [f"m{i:02}" for i in range(N)]
    goods = [f"g{i:02}" for i in range(N)]
    bads = [f"b{i:02}" for i in range(N)]
    qmarkers = [m + "?" for m in markers]
    vocab = SHARED + markers + qmarkers + goods + bads

    contexts = {}

    def dist(entries):
        total = sum(entries.values())
        assert total < 1 + 1e-12, entries
        out = dict(entries)
        if total < 1 - 1e-12:
            out["pad"] = 1 - total
        assert abs(sum(out.values()) - 1) < 1e-9
        return {t: lg(p) for t, p in out.items()}

    # Uniform unigram over the whole vocabulary.
    contexts[""] = {t: lg(1 / len(vocab)) for t in vocab}

    # Shared scoring spine: "the tale of <m> ends. what is <m>? <choice>".
    contexts["the"] = dist({"tale": 0.5})
    contexts["the tale"] = dist({"of": 0.5})
    contexts["tale of"] = dist({m: 2 ** -6 for m in markers})
    contexts["ends. what"] = dist({"is": 0.5})
    contexts["what is"] = dist(
        {"it": 0.5, **{q: 2 ** -7 for q in qmarkers}})

    # Question generation: "... what is" -> "it ?" then padding.
    contexts["is it"] = dist({"?": 0.6})
    contexts["it ?"] = dist({"pad": 1.0})
    contexts["? pad"] = dist({"pad": 1.0})
    contexts["pad pad"] = dist({"pad": 1.0})

    # Generic clarification: "it is fine and dandy all day long every
    # single time always", cheap after either choice.
    contexts["it"] = dist({"is": 0.5})
    walk = ["it", "is"] + GENERIC_TAIL
    for a, b, c in zip(walk, walk[1:], walk[2:]):
        contexts[f"{a} {b}"] = dist({c: 0.6})

    # Shared tail of the instance clarifications.
    walk = ANSWER_TAIL
    for a, b, c in zip(walk, walk[1:], walk[2:]):
        contexts[f"{a} {b}"] = dist({c: 0.6})

    for i in range(N):
        m, g, b, q = markers[i], goods[i], bads[i], qmarkers[i]
        easy, hard = i in EASY, i in HARD
        contexts[f"of {m}"] = dist({"ends.": 0.5})
        contexts[f"{m} ends."] = dist({"what": 0.5})
        # Choice token: the distractor is the fluent one except on easy
        # instances.
        if easy:
            contexts[f"is {q}"] = dist({g: 2 ** -1, b: 2 ** -6})
        else:
            contexts[f"is {q}"] = dist({b: 2 ** -1, g: 2 ** -6})
        # Clarification onset after each choice. Hard instances make the
        # instance clarification expensive after the correct choice too.
        good_onset = 2 ** -12 if hard else 2 ** -1
        contexts[f"{q} {g}"] = dist({m: good_onset, "it": 2 ** -10})
        contexts[f"{q} {b}"] = dist({m: 2 ** -12, "it": 2 ** -10})
        contexts[f"{g} {m}"] = dist({"is": good_onset})
        contexts[f"{b} {m}"] = dist({"is": 2 ** -12})
        # Answer walk: "<m> is" -> "<g> really truly ... certainly".
        contexts[f"{m} is"] = dist({g: 0.6})
        contexts[f"is {g}"] = dist({"really": 0.6})
        contexts[f"{g} really"] = dist({"truly": 0.6})

    model = {
        "order": 3,
        "unk_token": "<unk>",
        "vocabulary": vocab,
        "contexts": contexts,
        "backoff": {},
    }

    instances = []
    for i in range(N):
        good_index = i % 2
        choices = [None, None]
        choices[good_index] = goods[i]
        choices[1 - good_index] = bads[i]
        instances.append({
            "id": f"s{i:02}",
            "context": f"the tale of {markers[i]} ends.",
            "question": f"What is {markers[i]}?",
            "choices": choices,
            "gold": good_index,
        })

    task = {
        "task_id": "custom",
        "combine_templates": {"default": "[context] [question] [choice]"},
        "prefix_pairs": [
            {"question_prefix": "What is", "answer_prefix_template": "_ is"}
        ],
    }

    os.makedirs(OUT, exist_ok=True)
    with open(os.path.join(OUT, "toy.model"), "w") as f:
        json.dump(model, f, indent=1, sort_keys=True)
        f.write("\n")
    with open(os.path.join(OUT, "dataset.jsonl"), "w") as f:
        for inst in instances:
            f.write(json.dumps(inst) + "\n")
    with open(os.path.join(OUT, "task.json"), "w") as f:
        json.dump(task, f, indent=2)
        f.write("\n")
    print(f"wrote {OUT}: {len(vocab)} tokens, {len(contexts)} contexts")


if __name__ == "__main__":
    main()
