#!/usr/bin/env python3
"""Regenerates the toy fixture set and the expected results committed next to it.

The expected numbers (preference record count, recall@10 per retrieval mode)
are computed here with an independent reimplementation of the scoring and
retrieval rules, never by running the C++ binary. The topic vocabulary is
constructed so that every search touches only a handful of documents, which
makes the committed recall values robust to rank-order details:

  * each turn has two gold passages, g1 built from the A keyword set and g2
    from the B keyword set;
  * the [REWRITE] and [RESPONSE] single-tag queries share tokens only with
    the A-side documents, the [RETRIEVAL] query only with the B-side ones,
    so every single-tag run finds exactly one of the two golds;
  * the concatenated query covers both sets and finds both golds;
  * filler passages use a disjoint pseudo-Latin vocabulary and are never hit.

Run from anywhere: paths are resolved relative to this file.
"""

import json
import math
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent

K1 = 0.9
B = 0.4
K_CANDIDATES = 4
DEPTH = 100

SAMPLING_INSTRUCTION = (
    "Please rewrite the last statement of the following dialogue to make it more complete. "
    "Just provide the rewritten sentence without any additional content."
)
REWRITE_INSTRUCTION = (
    "Please rewrite the last query of the following conversation to make it more complete."
)
RESPONSE_INSTRUCTION = (
    "Given a question, please answer the question in a sentence. "
    "The answer should be as informative as possible."
)
TAGS = ["[REWRITE]", "[RETRIEVAL]", "[RESPONSE]"]


def tokenize(text):
    tokens, cur = [], []
    for ch in text:
        if ch.isascii() and ch.isalnum() or ord(ch) > 127:
            cur.append(ch.lower())
        elif cur:
            tokens.append("".join(cur))
            cur = []
    if cur:
        tokens.append("".join(cur))
    return tokens


# ---------------------------------------------------------------- topics

TOPICS = [
    dict(conv="conv1", region="Penang", a=("durian", "orchard", "yield"),
         b=("bats", "nectar", "dusk")),
    dict(conv="conv2", region="Brittany", a=("lighthouse", "fresnel", "lens"),
         b=("keeper", "logbook", "beacon")),
    dict(conv="conv3", region="Patagonia", a=("glacier", "meltwater", "silt"),
         b=("turbidity", "sensor", "moraine")),
    dict(conv="conv4", region="Rio", a=("samba", "parade", "drums"),
         b=("costume", "sequins", "rehearsal")),
    dict(conv="conv5", region="Vermont", a=("beehive", "winter", "cluster"),
         b=("varroa", "mites", "brood")),
]


def build_turn(t):
    a1, a2, a3 = t["a"]
    b1, b2, b3 = t["b"]
    turn = dict(
        conv_id=t["conv"],
        turn_id=2,
        history=[(
            f"Which place is famous for {a1} {a2} culture?",
            f"{t['region']} leads {a1} {a2} activity worldwide.",
        )],
        query=f"How does the {a2} {a3} work?",
        match_token=a1,
        tag_rewrites={
            "[REWRITE]": f"How is {a1} {a2} happening?",
            "[RETRIEVAL]": f"{b1} {b2} {b3} process",
            "[RESPONSE]": f"What explains {a1} {a3}?",
        },
        variants=[
            f"How is the {a1} {a2} process working in detail?",
            f"How is the {a1} {a2} process working in practice?",
            f"How is {a1} {a2} working?",
            f"Why {b1}?",
        ],
        responses=[
            f"The {a1} {a2} works through {b1} and {b2} interaction.",
            f"The {a1} {a2} works through {b1} and {b2} cooperation.",
            f"{a1} {a2} relies on {b1}.",
            "Nobody knows.",
        ],
        docs=dict(
            g1=f"{a1} {a2} systems show steady {a3} gains across managed sites.",
            g2=f"{b1} {b2} activity rises sharply near {b3} zones during late season.",
            d1=f"{a1} cultivation manuals describe {a3} routines.",
            d2=f"{a2} measurement stations track seasonal variation.",
            d3=f"{b2} samples collected near managed sites.",
            d4=f"{a1} {b3} trade routes carried annual totals.",
        ),
    )
    turn["key"] = f"{turn['conv_id']}_{turn['turn_id']}"
    return turn


TURNS = [build_turn(t) for t in TOPICS]

FILLER_POOL = (
    "umbra tessera corvus lumen vela portus ignis silva ferrum astra nimbus petra "
    "flumen rota spica taurus ursa vitrum zephyr aurum cedrus dolium ensis fabula "
    "gleba hasta insula lapis merula nodus ortus pinus quercus ramus stella turris "
    "unda vomer arbor bruma calix draco echo fornax grus hydra iuncus kalium "
    "litus mare nix orbis pluma quies ripa sidus tellus vertex"
).split()

REWRITE_DEMOS = [
    ("Q: Who invented the telephone?\nA: Alexander Graham Bell patented it first.\n"
     "Q: Where was he born?",
     "Where was Alexander Graham Bell born?"),
    ("Q: Which opening begins with the king's pawn?\nA: That is the king's pawn opening.\n"
     "Q: Is it popular at top level?",
     "Is the king's pawn opening popular at top level chess?"),
    ("Q: What makes sourdough rise?\nA: Wild yeast and lactic bacteria leaven it.\n"
     "Q: How long does that take?",
     "How long does wild yeast take to leaven sourdough bread?"),
    ("Q: Which river flows through Vienna?\nA: The Danube passes through Vienna.\n"
     "Q: How long is it?",
     "How long is the Danube river?"),
    ("Q: Who composed the Four Seasons?\nA: Antonio Vivaldi composed it.\n"
     "Q: When did he write it?",
     "When did Antonio Vivaldi write the Four Seasons?"),
    ("Q: What is the tallest mountain?\nA: Mount Everest is the tallest.\n"
     "Q: How tall exactly?",
     "How tall exactly is Mount Everest?"),
]

RESPONSE_DEMOS = [
    ("What metal conducts electricity best?",
     "Silver conducts electricity better than any other metal."),
    ("Which planet has the shortest day?",
     "Jupiter has the shortest day of any planet, rotating once in about ten hours."),
    ("Who wrote the play Hamlet?",
     "William Shakespeare wrote the play Hamlet around 1600."),
    ("What gas do plants absorb?",
     "Plants absorb carbon dioxide from the air during photosynthesis."),
    ("Which ocean is the deepest?",
     "The Pacific Ocean is the deepest, reaching nearly eleven kilometres."),
    ("What language has the most native speakers?",
     "Mandarin Chinese has the most native speakers of any language."),
]


# ---------------------------------------------------------------- corpus

def build_corpus():
    rng = random.Random(20260816)
    topic_docs = []
    for turn in TURNS:
        for name in ("g1", "g2", "d1", "d2", "d3", "d4"):
            topic_docs.append((turn["key"], name, turn["docs"][name]))

    docs = []
    slot_of = {}
    topic_slots = {5 + 6 * i for i in range(len(topic_docs))}
    next_topic = 0
    for slot in range(200):
        pid = f"p{slot:03d}"
        if slot in topic_slots:
            key, name, text = topic_docs[next_topic]
            next_topic += 1
            slot_of[(key, name)] = pid
            docs.append((pid, text))
        else:
            words = rng.sample(FILLER_POOL, rng.randint(6, 11))
            docs.append((pid, " ".join(words).capitalize() + "."))
    assert next_topic == len(topic_docs)
    return docs, slot_of


# ------------------------------------------------------- retrieval oracle

class Bm25:
    def __init__(self, docs):
        self.postings = {}
        self.doc_len = {}
        for pid, text in docs:
            tokens = tokenize(text)
            self.doc_len[pid] = len(tokens)
            for tok in tokens:
                self.postings.setdefault(tok, {}).setdefault(pid, 0)
                self.postings[tok][pid] += 1
        self.n = len(docs)
        self.avgdl = sum(self.doc_len.values()) / self.n

    def search(self, query, k):
        acc = {}
        for tok in tokenize(query):
            plist = self.postings.get(tok)
            if not plist:
                continue
            df = len(plist)
            w = math.log(1.0 + (self.n - df + 0.5) / (df + 0.5)) * (K1 + 1.0)
            for pid, tf in plist.items():
                norm = 1.0 - B + B * self.doc_len[pid] / self.avgdl
                acc[pid] = acc.get(pid, 0.0) + w * tf / (tf + K1 * norm)
        ranked = sorted(acc.items(), key=lambda kv: (-kv[1], kv[0]))
        return [pid for pid, _ in ranked[:k]]


def f1_sim(a, b):
    if a == b:
        return 1.0
    ta, tb = tokenize(a), tokenize(b)
    if not ta or not tb:
        return 0.0
    counts = {}
    for t in ta:
        counts[t] = counts.get(t, 0) + 1
    overlap = 0
    for t in tb:
        if counts.get(t, 0) > 0:
            counts[t] -= 1
            overlap += 1
    return 2.0 * overlap / (len(ta) + len(tb))


def mean_excluding_self(row, i):
    vals = sorted(v for j, v in enumerate(row) if j != i)
    return sum(vals) / len(vals)


def select_pair(scores):
    chosen = rejected = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[chosen]:
            chosen = i
        if scores[i] < scores[rejected]:
            rejected = i
    if scores[chosen] == scores[rejected]:
        return None
    return chosen, rejected


def consistency_records(turn, index):
    rqs = turn["variants"]
    rss = turn["responses"]
    pid_lists = [index.search(rq, DEPTH) for rq in rqs]
    k = len(rqs)

    sim_q = [[f1_sim(rqs[i], rqs[j]) for j in range(k)] for i in range(k)]
    lens = [len(tokenize(rq)) for rq in rqs]
    max_len = max(lens)
    rw = [mean_excluding_self(sim_q[i], i) + lens[i] / max_len for i in range(k)]

    sets = [set(p) for p in pid_lists]
    rt = [sum(len(sets[i] & sets[j]) for j in range(k) if j != i) / (k - 1) for i in range(k)]

    sim_r = [[f1_sim(rss[i], rss[j]) for j in range(k)] for i in range(k)]
    rp = [mean_excluding_self(sim_r[i], i) for i in range(k)]

    emitted = 0
    for scores in (rw, rt, rp):
        pair = select_pair(scores)
        if pair and rqs[pair[0]] != rqs[pair[1]]:
            emitted += 1
    return emitted


def recall_at_10(index, queries, gold):
    total = 0.0
    for key, text in queries.items():
        top = index.search(text, DEPTH)[:10]
        rel = gold[key]
        total += len(rel & set(top)) / len(rel)
    return total / len(queries)


# ------------------------------------------------------------ validation

def check_vocabulary(docs, slot_of):
    filler = set(FILLER_POOL)
    doc_tokens = {pid: set(tokenize(text)) for pid, text in docs}
    topic_pids = set(slot_of.values())

    all_queries = []
    for turn in TURNS:
        all_queries.extend(turn["tag_rewrites"].values())
        all_queries.extend(turn["variants"])
    query_tokens = set()
    for q in all_queries:
        query_tokens |= set(tokenize(q))
    assert not query_tokens & filler, "filler vocabulary leaks into a query"
    for pid, toks in doc_tokens.items():
        if pid not in topic_pids:
            assert not toks & query_tokens, f"filler doc {pid} matches a query"

    for turn in TURNS:
        g1 = doc_tokens[slot_of[(turn["key"], "g1")]]
        g2 = doc_tokens[slot_of[(turn["key"], "g2")]]
        rw = set(tokenize(turn["tag_rewrites"]["[REWRITE]"]))
        rt = set(tokenize(turn["tag_rewrites"]["[RETRIEVAL]"]))
        rp = set(tokenize(turn["tag_rewrites"]["[RESPONSE]"]))
        assert rw & g1 and not rw & g2, f"{turn['key']}: [REWRITE] gold overlap wrong"
        assert rt & g2 and not rt & g1, f"{turn['key']}: [RETRIEVAL] gold overlap wrong"
        assert rp & g1 and not rp & g2, f"{turn['key']}: [RESPONSE] gold overlap wrong"

    # turn-unique canned match tokens must appear nowhere else
    demo_text = " ".join(i + " " + o for i, o in REWRITE_DEMOS + RESPONSE_DEMOS)
    for turn in TURNS:
        tok = turn["match_token"]
        assert tok in " ".join(q + " " + a for q, a in turn["history"]).lower()
        assert tok not in demo_text.lower(), f"match token {tok} leaks into a demo"
        for other in TURNS:
            if other is turn:
                continue
            hist = " ".join(q + " " + a for q, a in other["history"])
            blob = (hist + " " + other["query"] + " "
                    + " ".join(other["variants"]) + " "
                    + " ".join(other["tag_rewrites"].values())).lower()
            assert tok not in blob, f"match token {tok} leaks into {other['key']}"

    variant_texts = [v for turn in TURNS for v in turn["variants"]]
    assert len(set(variant_texts)) == len(variant_texts), "variant strings must be unique"
    for v in variant_texts:
        assert v not in demo_text, "variant string leaks into a demo"
        assert "[" not in demo_text, "tags must not appear in demos"


# ---------------------------------------------------------------- output

def jsonl(rows):
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def main():
    docs, slot_of = build_corpus()
    check_vocabulary(docs, slot_of)
    index = Bm25(docs)
    gold = {t["key"]: {slot_of[(t["key"], "g1")], slot_of[(t["key"], "g2")]} for t in TURNS}

    records = sum(consistency_records(t, index) for t in TURNS)
    assert records == 3 * len(TURNS), f"expected every dimension to emit, got {records}"

    tag_recall = {}
    for tag in TAGS:
        queries = {t["key"]: t["tag_rewrites"][tag] for t in TURNS}
        tag_recall[tag] = recall_at_10(index, queries, gold)
    concat_queries = {
        t["key"]: " ".join(t["tag_rewrites"][tag] for tag in TAGS) for t in TURNS
    }
    concat_recall = recall_at_10(index, concat_queries, gold)
    for tag, r in tag_recall.items():
        assert concat_recall > r, f"concat must strictly beat {tag} on this corpus"

    (HERE / "toy_corpus.jsonl").write_text(
        jsonl({"id": pid, "text": text} for pid, text in docs))
    (HERE / "toy_dialogues.jsonl").write_text(jsonl(
        {
            "conv_id": t["conv_id"],
            "turn_id": t["turn_id"],
            "query": t["query"],
            "history": [{"q": q, "a": a} for q, a in t["history"]],
        }
        for t in TURNS))

    qrels_lines = []
    for t in TURNS:
        qrels_lines.append(f"{t['key']} 0 {slot_of[(t['key'], 'g1')]} 1")
        qrels_lines.append(f"{t['key']} 0 {slot_of[(t['key'], 'g2')]} 1")
        qrels_lines.append(f"{t['key']} 0 {slot_of[(t['key'], 'd1')]} 0")
    (HERE / "toy_qrels.txt").write_text("\n".join(qrels_lines) + "\n")

    (HERE / "rewrite_demos.jsonl").write_text(
        jsonl({"input": i, "output": o} for i, o in REWRITE_DEMOS))
    (HERE / "response_demos.jsonl").write_text(
        jsonl({"input": i, "output": o} for i, o in RESPONSE_DEMOS))

    canned = []
    for t in TURNS:
        for i, v in enumerate(t["variants"]):
            canned.append({"contains": [v], "responses": [t["responses"][i]]})
    for t in TURNS:
        for tag in TAGS:
            canned.append({"contains": [tag, t["match_token"]],
                           "responses": [t["tag_rewrites"][tag]]})
    for t in TURNS:
        canned.append({
            "contains": [SAMPLING_INSTRUCTION, t["match_token"]],
            "responses": t["variants"],
        })
    (HERE / "toy_canned.json").write_text(json.dumps(canned, indent=2, sort_keys=True) + "\n")

    config = {
        "corpus": "fixtures/toy_corpus.jsonl",
        "dialogues": "fixtures/toy_dialogues.jsonl",
        "qrels": "fixtures/toy_qrels.txt",
        "rewrite_demos": "fixtures/rewrite_demos.jsonl",
        "response_demos": "fixtures/response_demos.jsonl",
        "output_dir": "out/toy",
        "seed": 7,
        "candidates": K_CANDIDATES,
        "retrieval_depth": DEPTH,
        "beta": 0.1,
        "workers": 2,
        "retriever": {"k1": K1, "b": B},
        "llm": {"base_url": "mock:fixtures/toy_canned.json", "max_concurrency": 2},
        "similarity": {"backend": "lexical"},
    }
    (HERE / "toy_config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")

    expected = {
        "turns": len(TURNS),
        "judged": len(TURNS),
        "preference_records": records,
        "concat_recall_at_10": concat_recall,
        "tag_recall_at_10": tag_recall,
    }
    (HERE / "expected_eval.json").write_text(
        json.dumps(expected, indent=2, sort_keys=True) + "\n")

    print(f"docs={len(docs)} records={records} concat_r10={concat_recall} "
          f"tag_r10={[round(v, 4) for v in tag_recall.values()]}")


if __name__ == "__main__":
    main()
