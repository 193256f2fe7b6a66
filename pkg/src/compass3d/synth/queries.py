"""Intent-driven query templates and query-record generation.

Phrasings are goal statements that never name the target object; each
(category, affordance) intent carries distinctive content words (anchors)
shared across all of its seen and unseen phrasings, so held-out wordings
stay solvable without a pretrained language backbone. Seen and unseen
phrasing sets are disjoint at the string level (validated). Negative-only
concepts describe functions no template affords.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import templates

# (category, affordance) -> {"seen": [...], "unseen": [...]}
POSITIVE_PHRASES = {
    ("kitchen_knife", "cut"): {
        "seen": ["i need to slice some vegetables thin",
                 "slice these vegetables for dinner",
                 "prepare thin vegetable slices for the salad",
                 "chop and slice the fresh vegetables"],
        "unseen": ["slice the vegetables into thin pieces",
                   "these vegetables need a thin slice"],
    },
    ("shears", "cut"): {
        "seen": ["i want to cut this sheet of paper",
                 "trim the paper into neat pieces",
                 "cut the paper along the line",
                 "snip the paper sheet into shapes"],
        "unseen": ["cut this paper sheet neatly for me",
                   "trim the sheet of paper down"],
    },
    ("hatchet", "cut"): {
        "seen": ["split some firewood for the stove",
                 "chop these logs into kindling",
                 "split the firewood logs in half",
                 "chop the firewood for tonight"],
        "unseen": ["split the firewood logs for the fire",
                   "chop some logs into firewood"],
    },
    ("saw", "cut"): {
        "seen": ["cut straight through the wooden plank",
                 "shorten this lumber plank to size",
                 "cut the plank of lumber in two",
                 "make a straight cut across the plank"],
        "unseen": ["cut the wooden plank to size",
                   "this lumber plank needs a straight cut"],
    },
    ("mug", "contain"): {
        "seen": ["i would like to drink some hot coffee",
                 "serve a warm coffee drink for me",
                 "i need my morning coffee to sip",
                 "make me a hot coffee drink"],
        "unseen": ["a hot coffee drink would be perfect",
                   "sip some warm morning coffee"],
    },
    ("bowl", "contain"): {
        "seen": ["fill something with warm soup for lunch",
                 "i want to eat cereal with milk",
                 "serve the warm soup for lunch",
                 "pour milk over my breakfast cereal"],
        "unseen": ["eat the warm soup with a spoon",
                   "have some cereal and milk for breakfast"],
    },
    ("storage_box", "contain"): {
        "seen": ["store these spare parts away",
                 "keep the workshop parts organized inside",
                 "pack the spare workshop parts away",
                 "store the loose parts from the workshop"],
        "unseen": ["store the spare workshop parts away",
                   "pack away these spare parts"],
    },
    ("basket", "contain"): {
        "seen": ["collect the laundry from the floor",
                 "carry the dirty laundry to the washer",
                 "gather the dirty laundry pile",
                 "haul the laundry over to the washer"],
        "unseen": ["carry all the dirty laundry away",
                   "collect the laundry pile for washing"],
    },
    ("kettle", "pour"): {
        "seen": ["pour boiling water for my tea",
                 "boil water and pour it for tea",
                 "pour the boiling water into the teapot",
                 "get boiling water poured for the tea"],
        "unseen": ["pour the boiling water into my tea",
                   "boil and pour water for some tea"],
    },
    ("pitcher", "pour"): {
        "seen": ["pour cold juice into the glasses",
                 "serve everyone a glass of juice",
                 "pour the cold juice for the guests",
                 "fill the glasses with cold juice"],
        "unseen": ["pour the cold juice for everyone",
                   "serve cold juice in every glass"],
    },
    ("chair", "support"): {
        "seen": ["i need somewhere to sit at the desk",
                 "take a seat and work at the desk",
                 "sit down at the desk to work",
                 "a place to sit while i work"],
        "unseen": ["i want to sit at the desk",
                   "sit and work at the desk for a while"],
    },
    ("bed", "support"): {
        "seen": ["i want to lie down for a nap",
                 "somewhere soft to lie and sleep",
                 "lie down and sleep for a while",
                 "take a nap lying down"],
        "unseen": ["lie down for a soft nap",
                   "lie back and sleep a little"],
    },
    ("frying_pan", "grasp"): {
        "seen": ["hold it steady to flip the pancakes",
                 "grab it to cook pancakes on the stove",
                 "flip the pancakes over the stove",
                 "hold on and flip the pancakes"],
        "unseen": ["hold it to flip pancakes on the stove",
                   "grab hold and flip some pancakes"],
    },
    ("suitcase", "grasp"): {
        "seen": ["carry my packed clothes to the airport",
                 "grab the packed clothes for the trip",
                 "carry the packed clothes through the airport",
                 "haul my packed clothes on the trip"],
        "unseen": ["carry the packed clothes for my trip",
                   "grab my packed clothes for the airport"],
    },
    ("hammer", "hit"): {
        "seen": ["drive these nails into the wall",
                 "hit the nails in straight",
                 "drive the nails in with a few hits",
                 "knock the nails straight into the wall"],
        "unseen": ["drive the nails into the wall firmly",
                   "hit these nails in straight and deep"],
    },
    ("mallet", "hit"): {
        "seen": ["tap the tent stakes into the ground",
                 "pound the tent stakes down gently",
                 "tap the stakes for the tent into place",
                 "pound each tent stake into the ground"],
        "unseen": ["tap the tent stakes down into the dirt",
                   "pound the stakes in to pitch the tent"],
    },
}

# concept -> {"seen": [...], "unseen": [...]}; nothing in the template
# bank affords any of these
NEGATIVE_PHRASES = {
    "play_music": {
        "seen": ["i want to play some relaxing music",
                 "put on a cheerful song for me",
                 "play a happy song out loud"],
        "unseen": ["play a relaxing song for me",
                   "put some music on to relax"],
    },
    "illuminate": {
        "seen": ["brighten up this dark room",
                 "i need more light in here",
                 "turn on some light in the dark"],
        "unseen": ["bring more light into this dark room",
                   "light up the room a bit"],
    },
    "telephone": {
        "seen": ["make a phone call to my friend",
                 "dial my friend for a quick chat",
                 "call my friend on the phone tonight"],
        "unseen": ["call my friend on the phone now",
                   "dial the phone and chat with my friend"],
    },
    "weigh": {
        "seen": ["check how heavy this package is",
                 "weigh the package before shipping",
                 "see what the package weighs first"],
        "unseen": ["check the package weight before shipping",
                   "weigh how heavy the package is"],
    },
}


@dataclass
class QueryBank:
    positives: dict
    negatives: dict

    def validate(self):
        seen, unseen = set(), set()
        banks = list(self.positives.items()) + list(self.negatives.items())
        for key, phr in banks:
            if len(phr["seen"]) < 2 or len(phr["unseen"]) < 1:
                raise ValueError(f"{key}: need >= 2 seen and >= 1 unseen phrasings")
            seen.update(phr["seen"])
            unseen.update(phr["unseen"])
        overlap = seen & unseen
        if overlap:
            raise ValueError(f"seen/unseen phrasings overlap: {sorted(overlap)}")
        for (cat, _aff), phr in self.positives.items():
            token = cat.replace("_", " ")
            for text in phr["seen"] + phr["unseen"]:
                if token in text or cat in text.split():
                    raise ValueError(f"query names its object: {text!r} for {cat}")
        return self

    def vocabulary(self) -> list:
        words = set()
        for phr in list(self.positives.values()) + list(self.negatives.values()):
            for text in phr["seen"] + phr["unseen"]:
                words.update(tokenize(text))
        return sorted(words)


def default_bank() -> QueryBank:
    return QueryBank(POSITIVE_PHRASES, NEGATIVE_PHRASES).validate()


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list:
    return _TOKEN_RE.findall(text.lower())


def scene_queries(pair: templates.ConfusingPairSpec, member_object_indices,
                  bank: QueryBank, rng, unseen: bool):
    """Build the per-scene query set: one positive per pair member plus one
    negative whose concept no scene object supports.

    Returns a list of dicts (text, polarity, target, split) in a fixed
    order; ids and mask paths are attached by the dataset writer.
    """
    split = "unseen" if unseen else "seen"
    out = []
    for cat, obj_idx in zip((pair.category_a, pair.category_b), member_object_indices):
        phrases = bank.positives[(cat, pair.shared_affordance)][split]
        text = phrases[int(rng.integers(len(phrases)))]
        out.append({
            "text": text,
            "polarity": "positive",
            "target": {"object_index": int(obj_idx),
                       "affordance": pair.shared_affordance},
            "split": split,
        })
    concepts = sorted(bank.negatives)
    if not concepts:
        raise ValueError("no negative concept available for this scene")
    concept = concepts[int(rng.integers(len(concepts)))]
    phrases = bank.negatives[concept][split]
    out.append({
        "text": phrases[int(rng.integers(len(phrases)))],
        "polarity": "negative",
        "target": None,
        "split": split,
    })
    return out
