"""Generates the bundled corpus fixtures and their expected bookkeeping.

Writes into crates/core/tests/fixtures/:
  tiny.bpc.json             two hand-written documents, three bridging pairs
  synthetic.bpc.json        seeded random corpus with engineered edge cases
  synthetic.manifest.json   counts and candidate sets computed here, by brute force
  standoff/                 one document in the standoff layout

The manifest is the oracle for the Rust filters and candidate builders, so
everything below is computed directly from the definitions.
"""

import json
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "crates", "core", "tests", "fixtures")


def sentence(words):
    tokens, text, off = [], [], 0
    for i, w in enumerate(words):
        if i:
            off += 1
        tokens.append({"text": w, "char_start": off, "char_end": off + len(w)})
        off += len(w)
    return {"text": " ".join(words), "tokens": tokens}


def mention(mid, s, first, last, head=None, is_np=True):
    return {"id": mid, "sentence": s, "first": first, "last": last, "head": head, "is_np": is_np}


def doc(did, sentences, mentions, links):
    return {
        "id": did,
        "sentences": [sentence(s.split()) for s in sentences],
        "mentions": mentions,
        "bridging": [{"anaphor": a, "antecedents": ants} for a, ants in links],
    }


def write_lines(path, docs):
    with open(path, "w") as f:
        for d in docs:
            f.write(json.dumps(d, separators=(",", ":")) + "\n")


def tiny():
    d1 = doc(
        "d1",
        [
            "Several small firms in the district were surveyed last year .",
            "Seventeen percent reported their customers being robbed .",
            "The police said the problem has grown .",
        ],
        [
            mention("m1", 0, 0, 5, 2),
            mention("m2", 0, 4, 5, 5),
            mention("m3", 0, 8, 9, 9),
            mention("m4", 1, 0, 1, 1),
            mention("m5", 1, 2, 4, 4),
            mention("m6", 2, 0, 1, 1),
            mention("m7", 2, 3, 4, 4),
        ],
        [("m4", ["m1"]), ("m7", ["m5"])],
    )
    d2 = doc(
        "d2",
        [
            "Poland is changing fast .",
            "The economy grew by five percent .",
            "Its currency gained against the euro .",
            "Investors welcomed the news .",
        ],
        [
            mention("e1", 0, 0, 0, 0),
            mention("e2", 1, 0, 1, 1),
            mention("e3", 1, 4, 5, 5),
            mention("e4", 2, 0, 1, 1),
            mention("e5", 2, 4, 5, 5),
            mention("e6", 3, 0, 0, 0),
            mention("e7", 3, 2, 3, 3),
        ],
        [("e2", ["e1"])],
    )
    return [d1, d2]


VOCAB = (
    "bank loan rate market city council plan school teacher court judge case "
    "company owner worker union strike price oil field farm crop river bridge "
    "road car driver report board member vote law tax budget office police "
    "officer house roof door window park tree station train ticket season team "
    "player coach game playing walked quickly payment government hearing"
).split()


def synthetic(seed=2024):
    rng = random.Random(seed)
    docs = []
    n_docs = 12
    for d in range(n_docs):
        # two documents long enough for distances above 10
        n_sent = 15 if d in (0, 5) else rng.randint(4, 10)
        sentences, mentions = [], []
        for s in range(n_sent):
            n_words = rng.randint(6, 11)
            words = [rng.choice(VOCAB) for _ in range(n_words)] + ["."]
            sentences.append(" ".join(words))
            pos = 0
            while pos < n_words:
                if rng.random() < 0.45:
                    length = min(rng.randint(1, 3), n_words - pos)
                    first, last = pos, pos + length - 1
                    head = rng.randint(first, last) if rng.random() < 0.6 else None
                    is_np = rng.random() < 0.85
                    mentions.append([s, first, last, head, is_np])
                    if length >= 2 and rng.random() < 0.3:
                        inner = rng.randint(first + 1, last)
                        mentions.append([s, inner, inner, inner, True])
                    pos = last + 2
                else:
                    pos += 1
        # ensure every sentence after the first has at least one mention
        for s in range(n_sent):
            if not any(m[0] == s for m in mentions):
                mentions.append([s, 0, 0, 0, True])
        mentions.sort(key=lambda m: (m[0], m[1], -m[2]))
        ments = [
            mention(f"m{i + 1}", s, first, last, head, is_np)
            for i, (s, first, last, head, is_np) in enumerate(mentions)
        ]
        links = []
        used = set()
        for a in ments:
            if a["sentence"] == 0 or rng.random() > 0.45:
                continue
            earlier = [m for m in ments if (m["sentence"], m["first"]) < (a["sentence"], a["first"])]
            if not earlier:
                continue
            far = [m for m in earlier if a["sentence"] - m["sentence"] > 10]
            if far and rng.random() < 0.5:
                pool = far
            else:
                pool = earlier
            k = 1 if rng.random() < 0.75 else 2
            ants = rng.sample(pool, min(k, len(pool)))
            links.append((a["id"], [m["id"] for m in ants]))
            used.add(a["id"])
        docs.append(
            {
                "id": f"s{d:02}",
                "sentences": [sentence(s.split()) for s in sentences],
                "mentions": ments,
                "bridging": [{"anaphor": a, "antecedents": ants} for a, ants in links],
            }
        )
    return docs


def start(m):
    return (m["sentence"], m["first"])


def in_window(ana_s, s):
    return s == 0 or (s <= ana_s and ana_s - s <= 2)


def cloze_bucket(distance, salient):
    if salient:
        return "salient"
    return str(distance) if distance <= 2 else ">2"


def attention_bucket(distance):
    if distance <= 2:
        return str(distance)
    if distance <= 5:
        return "3-5"
    if distance <= 10:
        return "6-10"
    return ">10"


def manifest(docs):
    out = {
        "documents": len(docs),
        "mentions": sum(len(d["mentions"]) for d in docs),
        "instances": 0,
        "np": 0,
        "not_np": 0,
        "window": 0,
        "np_outside_window": 0,
        "beyond_full_span": 0,
        "ante_in_context": {"anaphor": 0, "sentence": 0, "ante-ana": 0, "more": 0},
        "cloze_buckets": {},
        "attention_buckets": {},
        "candidates": {},
        "empty_salient": 0,
    }
    for d in docs:
        by_id = {m["id"]: m for m in d["mentions"]}
        order = sorted(
            range(len(d["mentions"])),
            key=lambda i: (d["mentions"][i]["sentence"], d["mentions"][i]["first"], -d["mentions"][i]["last"], i),
        )
        for link in d["bridging"]:
            a = by_id[link["anaphor"]]
            gold = [by_id[g] for g in link["antecedents"]]
            nearest = max(gold, key=start)
            distance = a["sentence"] - nearest["sentence"]
            salient = any(g["sentence"] == 0 for g in gold)
            np_ = any(g["is_np"] for g in gold)
            win = any(in_window(a["sentence"], g["sentence"]) for g in gold)
            out["instances"] += 1
            out["np"] += np_
            out["not_np"] += not np_
            out["window"] += np_ and win
            out["np_outside_window"] += np_ and not win
            out["beyond_full_span"] += distance > 10
            ctx = {
                "anaphor": set(),
                "sentence": {a["sentence"]},
                "ante-ana": {a["sentence"], nearest["sentence"]},
                "more": {0, max(a["sentence"] - 2, 0), max(a["sentence"] - 1, 0), a["sentence"]},
            }
            for scope, sents in ctx.items():
                out["ante_in_context"][scope] += any(g["sentence"] in sents for g in gold)
            cb = cloze_bucket(distance, salient)
            ab = attention_bucket(distance)
            out["cloze_buckets"][cb] = out["cloze_buckets"].get(cb, 0) + 1
            out["attention_buckets"][ab] = out["attention_buckets"].get(ab, 0) + 1
            cands = {"salient": [], "all": []}
            for i in order:
                m = d["mentions"][i]
                if m is a or not start(m) < start(a):
                    continue
                cands["all"].append(m["id"])
                if in_window(a["sentence"], m["sentence"]):
                    cands["salient"].append(m["id"])
            out["empty_salient"] += not cands["salient"]
            out["candidates"][f'{d["id"]}:{a["id"]}'] = cands
    return out


def standoff(root):
    words = "Poland is changing fast . The economy grew by five percent . Its currency gained against the euro .".split()
    sentences = [(1, 5), (6, 12), (13, 19)]
    # id, span, head word, np
    entities = [
        ("m1", "word_1", "word_1", "true"),
        ("m2", "word_6..word_7", "word_7", "true"),
        ("m3", "word_10..word_11", "word_11", "true"),
        ("m4", "word_13..word_14", "word_14", "true"),
        ("m5", "word_17..word_18", "word_18", "true"),
        ("m6", "word_13", "word_13", "false"),
        # refers to words that do not exist; dropped during conversion
        ("m9", "word_40..word_41", None, "true"),
    ]
    for sub in ("words", "markables", "links"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    with open(os.path.join(root, "words", "doc1.xml"), "w") as f:
        f.write('<?xml version="1.0" encoding="UTF-8"?>\n<words>\n')
        for i, w in enumerate(words, 1):
            f.write(f'  <word id="word_{i}">{w}</word>\n')
        f.write("</words>\n")
    with open(os.path.join(root, "markables", "doc1_sentence_level.xml"), "w") as f:
        f.write('<?xml version="1.0" encoding="UTF-8"?>\n<markables>\n')
        for i, (a, b) in enumerate(sentences):
            f.write(f'  <markable id="s{i}" span="word_{a}..word_{b}"/>\n')
        f.write("</markables>\n")
    with open(os.path.join(root, "markables", "doc1_entity_level.xml"), "w") as f:
        f.write('<?xml version="1.0" encoding="UTF-8"?>\n<markables>\n')
        for mid, span, head, np_ in entities:
            head = f' head="{head}"' if head else ""
            bridged = ' bridged_from="m2"' if mid == "m4" else ""
            f.write(f'  <markable id="{mid}" span="{span}"{head} np="{np_}"{bridged}/>\n')
        f.write("</markables>\n")
    with open(os.path.join(root, "links", "doc1_bridging.xml"), "w") as f:
        f.write('<?xml version="1.0" encoding="UTF-8"?>\n<links>\n')
        f.write('  <link anaphor="m2" antecedents="m1"/>\n')
        f.write('  <link anaphor="m5" antecedents="m9"/>\n')
        f.write("</links>\n")


def main():
    os.makedirs(OUT, exist_ok=True)
    write_lines(os.path.join(OUT, "tiny.bpc.json"), tiny())
    docs = synthetic()
    write_lines(os.path.join(OUT, "synthetic.bpc.json"), docs)
    with open(os.path.join(OUT, "synthetic.manifest.json"), "w") as f:
        json.dump(manifest(docs), f, indent=1, sort_keys=True)
        f.write("\n")
    standoff(os.path.join(OUT, "standoff"))


if __name__ == "__main__":
    main()
