"""Self-consistent synthetic datasets: scene graphs, features, questions.

Every record carries a question, its symbolic program, the converted
module program, the oracle answer, and per-node supervision targets. The
question templates jointly exercise all sixteen modules; binary templates
are balanced to roughly half yes by counter-driven rejection sampling.

Frame features are sums of fixed random per-item embeddings over the
items active in that frame, plus Gaussian noise, so the mappings the
modules must learn exist by construction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import dsl
from .data import write_features, write_jsonl
from .scenegraph import (
    ActionSpan,
    ObjectTrack,
    SceneGraph,
    convert_sg_to_nmn,
    derive_intermediate_targets,
    exec_sg_program,
)

OBJECTS = (
    "bag", "blanket", "book", "bottle", "box", "broom", "chair", "clothes",
    "cup", "dish", "door", "food", "laptop", "mirror", "phone", "picture",
    "pillow", "sandwich", "shoe", "sofa", "table", "towel", "vacuum", "window",
)
VERBS = ("carry", "close", "cook", "eat", "hold", "open", "read", "take", "throw", "tidy", "wash", "watch")
RELATIONS = ("above", "behind", "beneath", "beside", "near", "under")

YES, NO = "yes", "no"


def answer_vocabulary(objects=OBJECTS, verbs=VERBS):
    """The fixed answer set: items plus yes/no."""
    return list(objects) + list(verbs) + [YES, NO]


def item_vocabulary(objects=OBJECTS, verbs=VERBS):
    """Retrieval candidates (open answers)."""
    return list(objects) + list(verbs)


@dataclass
class GenConfig:
    n_train: int = 5000
    n_valid: int = 500
    n_test: int = 1000
    questions_per_video: int = 5
    t_frames: int = 16
    d_raw: int = 64
    sigma: float = 0.1
    seed: int = 0
    objects: tuple = OBJECTS
    verbs: tuple = VERBS
    relations: tuple = RELATIONS


# -- scene graph sampling ------------------------------------------------------


def sample_scene_graph(rng, T=16, objects=OBJECTS, verbs=VERBS, relations=RELATIONS):
    """2-5 actions on a timeline with mostly non-overlapping spans.

    Objects are unique per video and present at least during the spans of
    the actions that touch them; verbs and relation words are unique per
    video, which keeps open answers unambiguous.
    """
    if T < 4:
        raise ValueError("need at least 4 frames")
    n_act = int(rng.integers(2, 6))
    verbs_pick = rng.choice(len(verbs), size=n_act, replace=False)
    n_extra = int(rng.integers(1, 4))
    obj_pick = rng.choice(len(objects), size=n_act + n_extra, replace=False)

    actions = []
    cursor = 0
    for i in range(n_act):
        start = cursor + int(rng.integers(0, 3))
        length = int(rng.integers(2, 6))
        if start + 2 > T:  # out of room: drop remaining actions
            break
        end = min(start + length, T)
        actions.append(ActionSpan(verbs[verbs_pick[i]], objects[obj_pick[i]], (start, end)))
        cursor = end
    if len(actions) < 2:  # retry with a fresh layout
        return sample_scene_graph(rng, T, objects, verbs, relations)

    tracks = []
    for i, a in enumerate(actions):
        s, e = a.span
        s = max(0, s - int(rng.integers(0, 3)))
        e = min(T, e + int(rng.integers(0, 3)))
        tracks.append(ObjectTrack(a.object, [(s, e)]))
    for j in range(n_extra):
        name = objects[obj_pick[len(actions) + j]] if len(actions) + j < len(obj_pick) else None
        if name is None:
            break
        s = int(rng.integers(0, T - 2))
        e = min(T, s + int(rng.integers(2, 8)))
        tracks.append(ObjectTrack(name, [(s, e)]))

    rels = []
    n_rel = int(rng.integers(1, 4))
    rel_pick = rng.choice(len(relations), size=n_rel, replace=False)
    for k in range(n_rel):
        tr = tracks[int(rng.integers(0, len(tracks)))]
        s, e = tr.spans[0]
        if e - s > 2:
            rs = int(rng.integers(s, e - 1))
            re = min(e, rs + int(rng.integers(2, 5)))
        else:
            rs, re = s, e
        rels.append(ActionSpan(relations[rel_pick[k]], tr.name, (rs, re)))

    sg = SceneGraph(num_frames=T, objects=tracks, actions=actions, relations=rels)
    sg.validate()
    return sg


# -- features -----------------------------------------------------------------


def item_embeddings(seed, d_raw, objects=OBJECTS, verbs=VERBS, relations=RELATIONS):
    """Fixed per-item embedding table, keyed by item name."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xFEA7]))
    names = list(objects) + list(verbs) + list(relations)
    table = rng.normal(0.0, 1.0 / np.sqrt(d_raw), size=(len(names), d_raw))
    return {n: table[i].astype(np.float32) for i, n in enumerate(names)}


def active_items(sg, frame):
    items = [o.name for o in sg.objects if any(s <= frame < e for s, e in o.spans)]
    items += [a.verb for a in sg.actions if a.span[0] <= frame < a.span[1]]
    items += [r.verb for r in sg.relations if r.span[0] <= frame < r.span[1]]
    return items


def render_features(sg, embeddings, sigma, rng):
    """(T, D_raw) float32 clip: sum of active item embeddings plus noise."""
    d = len(next(iter(embeddings.values())))
    out = np.zeros((sg.num_frames, d), dtype=np.float32)
    for f in range(sg.num_frames):
        for name in active_items(sg, f):
            out[f] += embeddings[name]
    if sigma > 0:
        out += rng.normal(0.0, sigma, size=out.shape).astype(np.float32)
    return out


# -- question templates --------------------------------------------------------


@dataclass
class Instance:
    template: str
    question: str
    sg_program: list
    answer: str
    answer_type: str


def _regions(sg, action, switch):
    m = np.zeros(sg.num_frames, dtype=bool)
    s, e = action.span
    if switch == "before":
        m[:s] = True
    elif switch == "after":
        m[e:] = True
    else:
        m[s:e] = True
    return m


def _objects_in(sg, mask):
    return [o.name for o in sg.objects if any(mask[s:e].any() for s, e in o.spans)]


def _verb_entries(sg):
    return list(sg.actions) + list(sg.relations)


def _sole_action_overlapping(sg, mask, exclude=None):
    hits = [a for a in sg.actions if mask[a.span[0] : a.span[1]].any() and a is not exclude]
    return hits[0] if len(hits) == 1 else None


def _pick(rng, seq):
    return seq[int(rng.integers(0, len(seq)))]


def _separated_pairs(sg, min_gap):
    pairs = []
    for a in sg.actions:
        for b in sg.actions:
            if a is not b and a.span[1] + min_gap <= b.span[0]:
                pairs.append((a, b))
    return pairs


def _isolated(sg, action):
    """No other action shares frames with `action`."""
    s, e = action.span
    return all(o is action or o.span[1] <= s or o.span[0] >= e for o in sg.actions)


def _fake_pair(sg, rng, verbs, objects):
    used = {a.verb for a in sg.actions}
    free = [v for v in verbs if v not in used]
    if not free:
        return None
    return _pick(rng, free), _pick(rng, list(objects))


class Templates:
    """Instantiates question templates against a scene graph.

    Binary templates take `want_yes`; open templates ignore it. Returns
    None when the graph cannot support the requested instance.
    """

    def __init__(self, config: GenConfig):
        self.cfg = config

    # T1: Filter[verb] o Temporal o Localize
    def t_what_switch(self, sg, rng, want_yes=None):
        sw = _pick(rng, ("before", "after", "while"))
        anchors = list(sg.actions)
        rng.shuffle(anchors)
        for anchor in anchors:
            region = _regions(sg, anchor, sw)
            if not region.any():
                continue
            cands = [
                v for v in _verb_entries(sg)
                if v.verb != anchor.verb and region[v.span[0] : v.span[1]].any()
            ]
            if not cands:
                continue
            pick = _pick(rng, cands)
            q = f"what did they {pick.verb} {sw} they {anchor.phrase}"
            prog = ["filter_by_verb", pick.verb, ["temporal_select", sw, ["localize_action", anchor.phrase]]]
            return Instance("T1", q, prog, pick.object, "open")
        return None

    # T2: Exists o Filter[objects] o Temporal o Localize
    def t_exists_switch(self, sg, rng, want_yes=True):
        sw = _pick(rng, ("before", "after", "while"))
        anchors = list(sg.actions)
        rng.shuffle(anchors)
        for anchor in anchors:
            region = _regions(sg, anchor, sw)
            if not region.any():
                continue
            inside = _objects_in(sg, region)
            if want_yes:
                if not inside:
                    continue
                obj = _pick(rng, inside)
            else:
                video_objs = [o.name for o in sg.objects if o.name not in inside]
                pool = video_objs or [o for o in self.cfg.objects if o not in inside]
                if not pool:
                    continue
                obj = _pick(rng, pool)
            q = f"is there a {obj} {sw} they {anchor.phrase}"
            prog = [
                "exists_item", obj,
                ["filter_items", "obj", ["temporal_select", sw, ["localize_action", anchor.phrase]]],
            ]
            return Instance("T2", q, prog, YES if want_yes else NO, "binary")
        return None

    # T3: Filter[actions] o AttnVideo o ExistsFrame o FilterFrame[objects]
    def t_while_object(self, sg, rng, want_yes=None):
        objs = list(sg.objects)
        rng.shuffle(objs)
        for track in objs:
            mask = sg.object_mask(track.name)
            sole = _sole_action_overlapping(sg, mask)
            if sole is None:
                continue
            q = f"what did they do while the {track.name} was there"
            prog = ["filter_items", "act", ["exists_frame", track.name, "obj"]]
            return Instance("T3", q, prog, sole.verb, "open")
        return None

    # T3b: Filter[verb] o AttnVideo o ExistsFrame o FilterFrame[actions]
    def t_verb_while_action(self, sg, rng, want_yes=None):
        anchors = list(sg.actions)
        rng.shuffle(anchors)
        for anchor in anchors:
            mask = sg.verb_mask(anchor.verb)
            cands = [
                v for v in _verb_entries(sg)
                if v.verb != anchor.verb and mask[v.span[0] : v.span[1]].any()
            ]
            if not cands:
                continue
            pick = _pick(rng, cands)
            q = f"what did they {pick.verb} while they {anchor.phrase}"
            prog = ["filter_by_verb", pick.verb, ["exists_frame", anchor.verb, "act"]]
            return Instance("T3b", q, prog, pick.object, "open")
        return None

    # T13: Filter[actions] o Temporal(while) o ExistsFrame o FilterFrame[verb]
    def t_while_relation(self, sg, rng, want_yes=None):
        rels = list(sg.relations)
        rng.shuffle(rels)
        for rel in rels:
            mask = sg.pair_mask(rel.verb, rel.object)
            sole = _sole_action_overlapping(sg, mask)
            if sole is None:
                continue
            q = f"what did they do while they were {rel.verb} the {rel.object}"
            prog = [
                "filter_items", "act",
                ["temporal_select", "while", ["exists_frame", rel.object, rel.verb]],
            ]
            return Instance("T13", q, prog, sole.verb, "open")
        return None

    # T4: Exists o (ToAction, Filter[actions])
    def t_did_they(self, sg, rng, want_yes=True):
        if want_yes:
            a = _pick(rng, list(sg.actions))
            verb, obj = a.verb, a.object
        else:
            fake = _fake_pair(sg, rng, self.cfg.verbs, self.cfg.objects)
            if fake is None:
                return None
            verb, obj = fake
        q = f"did they {verb} the {obj}"
        prog = ["exists_item", ["to_action", verb, obj], ["filter_items", "act", "video"]]
        return Instance("T4", q, prog, YES if want_yes else NO, "binary")

    # T5: Equals o Filter[verb]
    def t_equals_relation(self, sg, rng, want_yes=True):
        if not sg.relations:
            return None
        rel = _pick(rng, list(sg.relations))
        if want_yes:
            obj = rel.object
        else:
            others = [o.name for o in sg.objects if o.name != rel.object]
            if not others:
                return None
            obj = _pick(rng, others)
        q = f"is the {obj} the thing they were {rel.verb}"
        prog = ["equals_items", ["filter_by_verb", rel.verb, "video"], obj]
        return Instance("T5", q, prog, YES if want_yes else NO, "binary")

    # T6: Superlative
    def t_superlative(self, sg, rng, want_yes=None):
        pairs = [
            (a, b)
            for a in sg.actions
            for b in sg.actions
            if a is not b and (a.span[1] - a.span[0]) != (b.span[1] - b.span[0])
        ]
        if not pairs:
            return None
        a, b = _pick(rng, pairs)
        sw = _pick(rng, ("max", "min"))
        la, lb = a.span[1] - a.span[0], b.span[1] - b.span[0]
        winner = (a if la > lb else b) if sw == "max" else (a if la < lb else b)
        word = "more" if sw == "max" else "less"
        q = f"which took {word} time {a.phrase} or {b.phrase}"
        prog = ["superlative", sw, a.phrase, b.phrase]
        return Instance("T6", q, prog, winner.verb, "open")

    # T7: Filter[actions] o AttnVideo o Relate o XorFrame o (Localize, Localize)
    def t_first_last(self, sg, rng, want_yes=None):
        pairs = [(a, b) for a, b in _separated_pairs(sg, 1) if _isolated(sg, a) and _isolated(sg, b)]
        if not pairs:
            return None
        first, last = _pick(rng, pairs)
        sw = _pick(rng, ("fwd", "bkwd"))
        answer = first.verb if sw == "fwd" else last.verb
        word = "first" if sw == "fwd" else "last"
        shown = [first, last]
        rng.shuffle(shown)
        q = f"which did they do {word} {shown[0].phrase} or {shown[1].phrase}"
        prog = [
            "filter_items", "act",
            ["relate", sw, ["xor_frames",
                            ["localize_action", shown[0].phrase],
                            ["localize_action", shown[1].phrase]]],
        ]
        return Instance("T7", q, prog, answer, "open")

    # T8 / T9: And / Xor over two Exists
    def _two_statements(self, sg, rng, truth):
        reals = list(sg.actions)
        rng.shuffle(reals)
        parts = []
        for want in truth:
            if want:
                if not reals:
                    return None
                a = reals.pop()
                parts.append((a.verb, a.object))
            else:
                fake = _fake_pair(sg, rng, self.cfg.verbs, self.cfg.objects)
                if fake is None:
                    return None
                parts.append(fake)
        return parts

    def t_and(self, sg, rng, want_yes=True):
        truth = (True, True) if want_yes else _pick(rng, [(True, False), (False, True), (False, False)])
        parts = self._two_statements(sg, rng, truth)
        if parts is None:
            return None
        (v1, o1), (v2, o2) = parts
        q = f"did they {v1} the {o1} and also {v2} the {o2}"
        ex = lambda v, o: ["exists_item", ["to_action", v, o], ["filter_items", "act", "video"]]
        prog = ["and", ex(v1, o1), ex(v2, o2)]
        return Instance("T8", q, prog, YES if want_yes else NO, "binary")

    def t_xor(self, sg, rng, want_yes=True):
        truth = _pick(rng, [(True, False), (False, True)]) if want_yes else _pick(rng, [(True, True), (False, False)])
        parts = self._two_statements(sg, rng, truth)
        if parts is None:
            return None
        (v1, o1), (v2, o2) = parts
        q = f"did they {v1} the {o1} or {v2} the {o2} but not both"
        ex = lambda v, o: ["exists_item", ["to_action", v, o], ["filter_items", "act", "video"]]
        prog = ["xor", ex(v1, o1), ex(v2, o2)]
        return Instance("T9", q, prog, YES if want_yes else NO, "binary")

    # T10: Choose o Filter[verb]
    def t_choose(self, sg, rng, want_yes=None):
        entries = _verb_entries(sg)
        rng.shuffle(entries)
        for entry in entries:
            others = [o.name for o in sg.objects if o.name != entry.object]
            if not others:
                continue
            distractor = _pick(rng, others)
            shown = [entry.object, distractor]
            rng.shuffle(shown)
            q = f"which did they {entry.verb} the {shown[0]} or the {shown[1]}"
            prog = ["choose", ["filter_by_verb", entry.verb, "video"], shown[0], shown[1]]
            return Instance("T10", q, prog, entry.object, "open")
        return None

    # T11: Compare o (Exists, Exists)
    def t_which_there(self, sg, rng, want_yes=None):
        present = [o.name for o in sg.objects]
        absent = [o for o in self.cfg.objects if o not in present]
        if not present or not absent:
            return None
        o_true, o_false = _pick(rng, present), _pick(rng, absent)
        shown = [o_true, o_false]
        rng.shuffle(shown)
        q = f"which is there the {shown[0]} or the {shown[1]}"
        ex = lambda o: ["exists_item", o, ["filter_items", "obj", "video"]]
        prog = ["choose", ex(shown[0]), ex(shown[1])]
        return Instance("T11", q, prog, o_true, "open")

    # T12: Exists o Filter[objects] o Temporal(between)
    def t_between(self, sg, rng, want_yes=True):
        pairs = _separated_pairs(sg, 1)
        if not pairs:
            return None
        a, b = _pick(rng, pairs)
        region = np.zeros(sg.num_frames, dtype=bool)
        region[a.span[1] : b.span[0]] = True
        inside = _objects_in(sg, region)
        if want_yes:
            if not inside:
                return None
            obj = _pick(rng, inside)
        else:
            pool = [o.name for o in sg.objects if o.name not in inside] or [
                o for o in self.cfg.objects if o not in inside
            ]
            obj = _pick(rng, pool)
        shown = [a, b]
        rng.shuffle(shown)
        q = f"is there a {obj} between {shown[0].phrase} and {shown[1].phrase}"
        prog = [
            "exists_item", obj,
            ["filter_items", "obj",
             ["temporal_select", "between",
              ["localize_action", shown[0].phrase],
              ["localize_action", shown[1].phrase]]],
        ]
        return Instance("T12", q, prog, YES if want_yes else NO, "binary")


TEMPLATE_WEIGHTS = {
    "T1": 0.20, "T2": 0.10, "T3": 0.07, "T3b": 0.07, "T13": 0.09,
    "T4": 0.10, "T5": 0.08, "T6": 0.03, "T7": 0.07, "T8": 0.04,
    "T9": 0.03, "T10": 0.04, "T11": 0.04, "T12": 0.04,
}

_TEMPLATE_FNS = {
    "T1": "t_what_switch", "T2": "t_exists_switch", "T3": "t_while_object",
    "T3b": "t_verb_while_action", "T13": "t_while_relation", "T4": "t_did_they",
    "T5": "t_equals_relation", "T6": "t_superlative", "T7": "t_first_last",
    "T8": "t_and", "T9": "t_xor", "T10": "t_choose", "T11": "t_which_there",
    "T12": "t_between",
}

BINARY_TEMPLATES = ("T2", "T4", "T5", "T8", "T9", "T12")


def template_of(sg_program):
    """Recover the template family from a program's shape (for audits)."""
    fn = sg_program[0]
    if fn == "filter_by_verb":
        src = sg_program[2][0]
        return {"temporal_select": "T1", "exists_frame": "T3b"}[src]
    if fn == "filter_items":
        src = sg_program[2][0]
        if src == "exists_frame":
            return "T3"
        if src == "temporal_select":
            return "T13"
        return "T7"
    if fn == "exists_item":
        if isinstance(sg_program[1], list) and sg_program[1][0] == "to_action":
            return "T4"
        inner = sg_program[2][2]
        return "T12" if inner[1] == "between" else "T2"
    if fn == "equals_items":
        return "T5"
    if fn == "superlative":
        return "T6"
    if fn == "and":
        return "T8"
    if fn == "xor":
        return "T9"
    if fn == "choose":
        return "T10" if len(sg_program) == 4 else "T11"
    raise ValueError(f"unrecognized program shape {sg_program[0]!r}")


@dataclass
class Balancer:
    counts: dict = field(default_factory=dict)

    def want_yes(self, template):
        yes, no = self.counts.get(template, (0, 0))
        return yes <= no

    def record(self, template, answer):
        yes, no = self.counts.get(template, (0, 0))
        self.counts[template] = (yes + (answer == YES), no + (answer == NO))


def generate_record(sg, templates, rng, balancer, template_name=None):
    """One question for a scene graph; verifies the answer with the oracle."""
    names = list(TEMPLATE_WEIGHTS)
    weights = np.array([TEMPLATE_WEIGHTS[n] for n in names])
    weights = weights / weights.sum()
    for _attempt in range(64):
        name = template_name or names[int(rng.choice(len(names), p=weights))]
        fn = getattr(templates, _TEMPLATE_FNS[name])
        want_yes = balancer.want_yes(name) if name in BINARY_TEMPLATES else None
        inst = fn(sg, rng, want_yes)
        if inst is None:
            if template_name is not None:
                return None
            continue
        result = exec_sg_program(sg, inst.sg_program)
        if result.answer != inst.answer:
            raise AssertionError(
                f"template {name} disagrees with oracle: {inst.answer!r} vs {result.answer!r}"
            )
        if name in BINARY_TEMPLATES:
            balancer.record(name, inst.answer)
        tree, corr = convert_sg_to_nmn(inst.sg_program)
        dsl.infer_types(tree)  # every emitted program must type-check
        targets = derive_intermediate_targets(result, corr)
        return {
            "question": inst.question,
            "answer": inst.answer,
            "answer_type": inst.answer_type,
            "sg_program": inst.sg_program,
            "nmn_program": dsl.program_to_text(tree),
            "targets": targets,
        }
    return None


def emit_split(split, n_records, config, feature_dir, seed_seq):
    """Generate one split; returns (records, {video_id: scene graph})."""
    templates = Templates(config)
    balancer = Balancer()
    embeddings = item_embeddings(config.seed, config.d_raw, config.objects, config.verbs, config.relations)
    n_videos = max(1, n_records // config.questions_per_video)
    video_rng = np.random.default_rng(seed_seq.spawn(1)[0])
    record_rng = np.random.default_rng(seed_seq.spawn(1)[0])

    videos = []
    for i in range(n_videos):
        vid = f"{split}-v{i:05d}"
        sg = sample_scene_graph(video_rng, config.t_frames, config.objects, config.verbs, config.relations)
        feats = render_features(sg, embeddings, config.sigma, video_rng)
        write_features(os.path.join(feature_dir, f"{vid}.bin"), feats)
        videos.append((vid, sg))

    records = []
    i = 0
    while len(records) < n_records:
        vid, sg = videos[i % len(videos)]
        rec = generate_record(sg, templates, record_rng, balancer)
        i += 1
        if rec is None:
            continue
        rec["id"] = f"{split}-q{len(records):06d}"
        rec["video_id"] = vid
        records.append(rec)
    return records, dict(videos)


def emit_dataset(config, out_dir):
    """Write train/valid/test JSONL plus feature files; returns file paths.

    Splits use disjoint video pools (disjoint id prefixes and independent
    seed streams). Identical configs produce byte-identical outputs.
    """
    from .config import config_hash as _hash_fn

    os.makedirs(out_dir, exist_ok=True)
    feature_dir = os.path.join(out_dir, "features")
    os.makedirs(feature_dir, exist_ok=True)
    counts = {"train": config.n_train, "valid": config.n_valid, "test": config.n_test}
    cfg_dict = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(config).items()}
    cfg_blob = json.dumps(cfg_dict, sort_keys=True)
    import hashlib

    cfg_hash = hashlib.sha256(cfg_blob.encode()).hexdigest()[:12]
    paths = {}
    scene_graphs = {}
    for split_idx, (split, n) in enumerate(counts.items()):
        seq = np.random.SeedSequence([config.seed, split_idx])
        records, videos = emit_split(split, n, config, feature_dir, seq)
        scene_graphs.update({vid: sg.to_dict() for vid, sg in videos.items()})
        header = {
            "kind": "videonmn-dataset",
            "version": 1,
            "split": split,
            "seed": config.seed,
            "config_hash": cfg_hash,
            "config": cfg_dict,
            "objects": list(config.objects),
            "verbs": list(config.verbs),
            "relations": list(config.relations),
            "answers": answer_vocabulary(config.objects, config.verbs),
            "t_frames": config.t_frames,
            "d_raw": config.d_raw,
        }
        path = os.path.join(out_dir, f"{split}.jsonl")
        write_jsonl(path, header, records)
        paths[split] = path
    with open(os.path.join(out_dir, "scene_graphs.json"), "w") as f:
        json.dump(scene_graphs, f, sort_keys=True)
    return paths
