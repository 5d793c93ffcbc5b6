#!/usr/bin/env python3
"""Regenerates the synthetic fixture files in this directory.

Outputs dataset.jsonl, rephrases.jsonl, corpus.txt and vocab.txt. The
output is deterministic; rerun only when the fixture content changes and
refreeze any regression values that depend on it.
"""
import json
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent
rng = random.Random(20220516)

# (rationale, neutral rephrase) pairs per dimension.
BIASED = {
    "sexuality": [
        ("people like that should keep their lifestyle hidden", "people should live openly if they want"),
        ("those guys are all confused about who they are", "those guys know who they are"),
        ("that kind of couple is not a real family", "that couple is a real family"),
        ("they are only pretending to be into both", "they are honest about who they like"),
    ],
    "gender": [
        ("women are too emotional to lead a team", "anyone can lead a team well"),
        ("she only got the job because she is a girl", "she got the job because she was qualified"),
        ("men cannot be trusted with kids", "parents can be trusted with kids"),
        ("girls are bad at math anyway", "students vary in math skill"),
        ("a woman should stay in the kitchen", "a person can choose any role"),
    ],
    "race": [
        ("those people are naturally lazy", "those people work as hard as anyone"),
        ("you can tell from their skin that they are trouble", "you cannot judge anyone by their skin"),
        ("that whole race is dangerous", "no race is dangerous"),
        ("they all look the same to me", "they are all different people"),
    ],
    "religion": [
        ("every believer of that faith is a fanatic", "believers of that faith are diverse"),
        ("their religion breeds violence", "their religion is practiced peacefully by many"),
        ("those church folks are all hypocrites", "those church folks have their own views"),
        ("anyone who prays is an idiot", "people who pray have their reasons"),
    ],
    "age": [
        ("old people are useless with technology", "some people need help with technology"),
        ("boomers ruined everything for us", "every generation faced problems"),
        ("kids these days are all spoiled", "kids these days face new challenges"),
        ("he is too old to learn anything new", "he can still learn new things"),
    ],
    "nationality": [
        ("people from that country are all thieves", "people from that country are like anyone else"),
        ("send them back to where they came from", "they are welcome here"),
        ("immigrants from there only bring crime", "immigrants from there bring many skills"),
        ("that nation is full of liars", "that nation has honest people"),
    ],
    "ethnicity": [
        ("that tribe has always been primitive", "that tribe has a long history"),
        ("their ethnic group cannot be trusted", "their ethnic group is trustworthy"),
        ("those people and their weird customs", "those people and their customs"),
        ("that clan is full of criminals", "that clan has many good people"),
    ],
    "disability": [
        ("what a moron that guy is", "that guy made a mistake"),
        ("only a retard would think that", "not everyone would think that"),
        ("people in wheelchairs are a burden", "people in wheelchairs contribute a lot"),
        ("he is so crazy he belongs in an asylum", "he has views i disagree with"),
        ("that idea is insane and so are you", "that idea is unusual"),
    ],
    "profession": [
        ("cops are all corrupt thugs", "some officers act badly"),
        ("lawyers are parasites on society", "lawyers do necessary work"),
        ("journalists are paid liars", "some journalists make errors"),
        ("teachers are lazy and overpaid", "teachers work hard"),
    ],
    "political affiliation": [
        ("the libs want to destroy this country", "some people disagree about policy"),
        ("conservatives are all brainwashed fools", "conservatives hold different views"),
        ("this shit is riddled with progressive dogma", "this text holds progressive views"),
        ("every trump fan is a moron", "trump fans have their reasons"),
        ("leftists are enemies of freedom", "leftists care about freedom too"),
    ],
    "perceived negative groups": [
        ("incels are pathetic losers", "incels are lonely people"),
        ("feminists are all man haters", "feminists want equality"),
        ("those vegans are insufferable", "those vegans have strong views"),
        ("gamers are basement dwelling creeps", "gamers enjoy a hobby"),
    ],
}

PREFIXES = [
    "i was reading the comments on that post.",
    "saw this thread earlier today.",
    "my cousin said something at dinner.",
    "someone replied to me with this.",
    "this is what the top comment says.",
    "not sure what to make of this.",
]
SUFFIXES = [
    "anyway that is my take.",
    "the thread got locked after that.",
    "what do you all think?",
    "nobody pushed back on it.",
    "then the conversation moved on.",
    "",
]
NEUTRAL = [
    "the weather was great for a walk in the park today.",
    "i finally fixed the leak under my kitchen sink.",
    "does anyone know a good recipe for banana bread?",
    "the game last night went into overtime and we won.",
    "my cat keeps knocking things off the table.",
    "just finished a long book about the history of maps.",
    "the new update broke my favorite feature again.",
    "we planted tomatoes and peppers in the garden.",
    "the train was late but the ride was comfortable.",
    "i started learning to play the guitar this month.",
    "our team shipped the release on time for once.",
    "the museum has a new exhibit on ancient tools.",
    "coffee tastes better when someone else makes it.",
    "the library extended its hours for the summer.",
    "my neighbor gave us fresh eggs from her chickens.",
    "the hiking trail was muddy but the view was worth it.",
    "i watched a documentary about deep sea fish.",
    "we are painting the living room a pale green.",
    "the bakery on the corner sells amazing bread.",
    "my phone battery lasts two days now.",
    "the concert was loud and a lot of fun.",
    "it snowed for the first time this winter.",
]

DIMS = list(BIASED)


def biased_doc(dim, pair):
    pre = rng.choice(PREFIXES)
    suf = rng.choice(SUFFIXES)
    rationale = pair[0]
    text = " ".join(x for x in [pre, rationale + ".", suf] if x)
    return text, rationale


records = []
rephrases = []

# Train: every rationale of every dimension, plus neutral train docs.
for dim in DIMS:
    for i, pair in enumerate(BIASED[dim]):
        text, rationale = biased_doc(dim, pair)
        rid = f"tr-{dim.replace(' ', '_')}-{i}"
        records.append({"id": rid, "text": text, "label": dim, "rationale": rationale, "split": "train"})
        rephrases.append({"id": rid, "rephrase": pair[1]})
for i, t in enumerate(NEUTRAL[:12]):
    records.append({"id": f"tr-neutral-{i}", "text": t, "label": "Neutral", "split": "train"})

# Eval: 40 biased docs spread across dimensions, 10 neutral.
eval_biased = []
for k in range(40):
    dim = DIMS[k % len(DIMS)]
    pair = rng.choice(BIASED[dim])
    text, rationale = biased_doc(dim, pair)
    rid = f"ev-{k:02d}"
    eval_biased.append(rid)
    records.append({"id": rid, "text": text, "label": dim, "rationale": rationale, "split": "eval"})
    if k % 4 != 3:
        rephrases.append({"id": rid, "rephrase": pair[1]})
for i, t in enumerate(NEUTRAL[12:]):
    records.append({"id": f"ev-neutral-{i}", "text": t, "label": "Neutral", "split": "eval"})

# Train-only records that each trip one filtering rule.
filler = " ".join(NEUTRAL[:12])
records += [
    {"id": "tr-edge-no-rationale", "text": "women are too emotional to lead a team.", "label": "gender", "split": "train"},
    {"id": "tr-edge-misquoted", "text": "those people are naturally lazy.", "label": "race",
     "rationale": "those people are lazy", "split": "train"},
    {"id": "tr-edge-other", "text": "you are an idiot and everyone knows it.", "label": "PersonDirectedAbuse",
     "rationale": "you are an idiot", "split": "train"},
    {"id": "tr-edge-long", "text": f"{filler} {filler} boomers ruined everything for us.", "label": "age",
     "rationale": "boomers ruined everything for us", "split": "train"},
]

with open(HERE / "dataset.jsonl", "w") as f:
    for r in records:
        f.write(json.dumps(r) + "\n")
with open(HERE / "rephrases.jsonl", "w") as f:
    for r in rephrases:
        f.write(json.dumps(r) + "\n")

corpus_lines = [r["text"] for r in records] + [r["rephrase"] for r in rephrases]
with open(HERE / "corpus.txt", "w") as f:
    for line in corpus_lines:
        f.write(line + "\n")

# ---------------------------------------------------------------- vocab
# Chunking mirrors the word tokenizer: a single space attaches to the
# following word; every other whitespace character stands alone.
def chunks(text):
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == " " and i + 1 < len(text) and not text[i + 1].isspace():
            j = i + 1
            while j < len(text) and not text[j].isspace():
                j += 1
            out.append(text[i:j])
            i = j
        elif c.isspace():
            out.append(c)
            i += 1
        else:
            j = i
            while j < len(text) and not text[j].isspace():
                j += 1
            out.append(text[i:j])
            i = j
    return out


TEMPLATE_WORDS = (
    "Task: Question: Answer: Prompt: Is there bias in the previous text? Does above contain "
    "What is present The type of this Complete Finish complete finish following sentence statement "
    "sequence about aforementioned text. Generate generate Identify identify dimension type "
    "toxicity toxic biased most subsequence span from Extract extract Rephrase rephrase Convert "
    "convert to remove removes rephrase A that of targeting Yes No text text? bias? toxicity? "
    "bias. toxicity. is"
)
# Label words are deliberately left out of the whole-word table so that
# labels split into shared subword prefixes.
LABEL_WORDS = {"sexuality", "race", "religion", "nationality", "ethnicity", "disability",
               "profession", "political", "affiliation", "perceived", "negative", "groups"}
LABEL_PIECES = [
    " s", "exuality", " gender", " r", "ace", "eligion", " age", " n", "ationality",
    " e", "thnicity", " d", "isability", " p", "rofession", "olitical", " affiliation",
    "erceived", " negative", " groups",
    # unspaced forms
    "pol", "itical", "gender", "age",
]

surfaces = []
seen = set()


def add(s):
    if s not in seen:
        seen.add(s)
        surfaces.append(s)


add("<|endoftext|>")
for b in range(256):
    add(bytes([b]).decode("latin-1"))  # placeholder; written as \xHH below
byte_surfaces = set(surfaces[1:])
for p in LABEL_PIECES:
    add(p)
add("\n")
text_pool = corpus_lines + [TEMPLATE_WORDS, " " + TEMPLATE_WORDS]
words = set()
for line in text_pool:
    for ch in chunks(line) + chunks(" " + line):
        if ch.strip().strip(".?,!").lower() in LABEL_WORDS:
            continue
        words.add(ch)
for w in sorted(words):
    add(w)


def escape(s, is_byte):
    if is_byte:
        b = s.encode("latin-1")[0]
        if b == 0x09:
            return "\\t"
        if b == 0x0A:
            return "\\n"
        if b == 0x5C:
            return "\\\\"
        if 0x20 <= b < 0x7F:
            return chr(b)
        return "\\x%02x" % b
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


with open(HERE / "vocab.txt", "w") as f:
    for i, s in enumerate(surfaces):
        is_byte = 1 <= i <= 256
        f.write(f"{i}\t{escape(s, is_byte)}\n")

print(f"{len(records)} records, {len(rephrases)} rephrases, vocab {len(surfaces)}")
