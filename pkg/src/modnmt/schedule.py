"""Training schedules: which directions train, and what stays frozen.

A schedule lists every ordered language pair once, in nested-loop order,
each tagged with a freeze mode:

    n-n  train source encoder and target decoder
    f-n  source encoder frozen, only the target decoder learns
    n-f  target decoder frozen, only the source encoder learns

The far/close presets for {de,en,es,fr} are stored verbatim as data.
The generic generator takes a perfect matching of "fully trained" pairs
and freezes the rest so that the frozen-pair learning relation forms a
single directed cycle over all languages: every language learns from
exactly one frozen neighbour and serves as the frozen side for exactly
one other.
"""

from dataclasses import dataclass, field
from enum import Enum


class FreezeMode(Enum):
    NONE = "n-n"
    FREEZE_SRC_ENCODER = "f-n"
    FREEZE_TGT_DECODER = "n-f"


_MODE_BY_LABEL = {m.value: m for m in FreezeMode}
_FILE_LABEL = {FreezeMode.NONE: "nn", FreezeMode.FREEZE_SRC_ENCODER: "fn",
               FreezeMode.FREEZE_TGT_DECODER: "nf"}
_MODE_BY_FILE_LABEL = {v: k for k, v in _FILE_LABEL.items()}


@dataclass(frozen=True)
class Direction:
    src: str
    tgt: str
    mode: FreezeMode = FreezeMode.NONE

    def __post_init__(self):
        if self.src == self.tgt:
            raise ValueError("direction src and tgt must differ")


@dataclass(frozen=True)
class TrainingSchedule:
    langs: tuple
    directions: tuple

    def __post_init__(self):
        seen = set()
        for d in self.directions:
            if (d.src, d.tgt) in seen:
                raise ValueError(f"duplicate direction {d.src}->{d.tgt}")
            seen.add((d.src, d.tgt))

    def mode(self, src, tgt):
        for d in self.directions:
            if d.src == src and d.tgt == tgt:
                return d.mode
        raise KeyError(f"no direction {src}->{tgt} in schedule")

    def with_modes(self, modes):
        """Copy with modes replaced from a {(src,tgt): FreezeMode} map."""
        dirs = tuple(Direction(d.src, d.tgt, modes.get((d.src, d.tgt), d.mode))
                     for d in self.directions)
        return TrainingSchedule(self.langs, dirs)


# Table of preset freeze labels for the four-language setup. "Far" leaves
# the linguistically distant pairs fully unfrozen, "close" the close ones
# (de-en and es-fr).
FAR_PRESET = {
    ("de", "en"): "n-f", ("de", "es"): "n-f", ("de", "fr"): "n-n",
    ("en", "de"): "f-n", ("en", "es"): "n-n", ("en", "fr"): "f-n",
    ("es", "de"): "f-n", ("es", "en"): "n-n", ("es", "fr"): "f-n",
    ("fr", "de"): "n-n", ("fr", "en"): "n-f", ("fr", "es"): "f-n",
}
CLOSE_PRESET = {
    ("de", "en"): "n-n", ("de", "es"): "f-n", ("de", "fr"): "n-f",
    ("en", "de"): "n-n", ("en", "es"): "n-f", ("en", "fr"): "f-n",
    ("es", "de"): "n-f", ("es", "en"): "f-n", ("es", "fr"): "n-n",
    ("fr", "de"): "f-n", ("fr", "en"): "n-f", ("fr", "es"): "n-n",
}
PRESETS = {"far": FAR_PRESET, "close": CLOSE_PRESET}
PRESET_LANGS = ("de", "en", "es", "fr")


def basic_schedule(langs):
    """All N(N-1) directions, nothing frozen, nested-loop order."""
    langs = tuple(langs)
    if len(langs) < 2:
        raise ValueError("a schedule needs at least two languages")
    dirs = tuple(Direction(a, b) for a in langs for b in langs if a != b)
    return TrainingSchedule(langs, dirs)


def frozen_schedule(langs, preset=None, unfrozen_pairs=None):
    """Freezing-based schedule, from a named preset or a matching.

    With `preset` ("far"/"close") the language set must be exactly the
    four preset languages and the modes are copied verbatim. With
    `unfrozen_pairs`, a perfect matching over an even number of
    languages, matched pairs train unfrozen and the remaining pairs are
    frozen along a single cycle; any pair in neither the matching nor
    the cycle (possible for six or more languages) freezes the target
    decoder in both of its directions, splitting the frozen side between
    its two languages.
    """
    if (preset is None) == (unfrozen_pairs is None):
        raise ValueError("give exactly one of preset / unfrozen_pairs")
    base = basic_schedule(langs)

    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset '{preset}'")
        if sorted(base.langs) != sorted(PRESET_LANGS):
            raise ValueError(
                f"preset '{preset}' is defined for languages "
                f"{sorted(PRESET_LANGS)}, got {sorted(base.langs)}")
        modes = {pair: _MODE_BY_LABEL[label]
                 for pair, label in PRESETS[preset].items()}
        return base.with_modes(modes)

    langs = base.langs
    if len(langs) % 2 != 0:
        raise ValueError("matching-based schedules need an even language count")
    index = {lang: i for i, lang in enumerate(langs)}
    matching = []
    seen = set()
    for pair in unfrozen_pairs:
        a, b = pair
        if a not in index or b not in index or a == b:
            raise ValueError(f"bad pair {pair!r}")
        if a in seen or b in seen:
            raise ValueError("unfrozen_pairs is not a matching: "
                             f"language reused in {pair!r}")
        seen.update(pair)
        matching.append(tuple(sorted(pair, key=index.get)))
    if len(seen) != len(langs):
        raise ValueError("unfrozen_pairs must cover every language exactly once")
    matching.sort(key=lambda p: (index[p[0]], index[p[1]]))

    modes = {}
    for a, b in matching:
        modes[(a, b)] = FreezeMode.NONE
        modes[(b, a)] = FreezeMode.NONE

    # Cycle visiting first members of all matched pairs, then second
    # members: no cycle edge can coincide with a matching edge (for a
    # single pair there is no cycle at all). In edge (L, F) the language
    # F is frozen on both directions of that pair.
    if len(matching) >= 2:
        ring = [p[0] for p in matching] + [p[1] for p in matching]
        for m in range(len(ring)):
            learner, frozen = ring[m], ring[(m + 1) % len(ring)]
            modes[(learner, frozen)] = FreezeMode.FREEZE_TGT_DECODER
            modes[(frozen, learner)] = FreezeMode.FREEZE_SRC_ENCODER

    # Leftover pairs (six or more languages): freeze the target decoder
    # both ways so neither side can drift a shared representation.
    for a in langs:
        for b in langs:
            if a != b and (a, b) not in modes:
                modes[(a, b)] = FreezeMode.FREEZE_TGT_DECODER
    return base.with_modes(modes)


def adaptive_update(current, avg_valid_loss):
    """Re-pick the unfrozen matching from per-direction validation loss.

    Unordered pairs are ranked by the mean of their two directional
    losses (ties broken by pair name); the matching is filled greedily
    with the worst still-disjoint pairs, and everything else is frozen
    by the cycle construction.
    """
    langs = current.langs
    scores = []
    for i, a in enumerate(langs):
        for b in langs[i + 1:]:
            for d in ((a, b), (b, a)):
                if d not in avg_valid_loss:
                    raise ValueError(f"loss map missing direction {d[0]}->{d[1]}")
            mean = (avg_valid_loss[(a, b)] + avg_valid_loss[(b, a)]) / 2.0
            scores.append((-mean, tuple(sorted((a, b))), (a, b)))
    scores.sort()
    matching = []
    used = set()
    for _, _, (a, b) in scores:
        if a in used or b in used:
            continue
        matching.append((a, b))
        used.update((a, b))
        if len(used) == len(langs):
            break
    return frozen_schedule(langs, unfrozen_pairs=matching)


@dataclass
class ValidationReport:
    fully_trained: list                 # unordered pairs with n-n both ways
    mixed_pairs: list                   # pairs whose frozen side differs per direction
    learning_edges: list                # (learner, frozen) where one side is frozen both ways
    in_degree: dict
    out_degree: dict
    cycle_ok: bool = None               # None when there are no frozen pairs
    all_langs_learn: bool = True
    notes: list = field(default_factory=list)

    def summary(self):
        lines = [f"fully_trained={len(self.fully_trained)} "
                 f"({', '.join('-'.join(p) for p in self.fully_trained) or 'none'})"]
        if self.cycle_ok is None:
            lines.append("frozen learning cycle: not applicable")
        else:
            lines.append(f"frozen learning cycle: "
                         f"{'ok' if self.cycle_ok else 'VIOLATED'}")
        if self.mixed_pairs:
            lines.append("mixed frozen sides: "
                         + ", ".join("-".join(p) for p in self.mixed_pairs))
        lines.append(f"every language learns somewhere: "
                     f"{'yes' if self.all_langs_learn else 'NO'}")
        lines.extend(self.notes)
        return "\n".join(lines)


def validate_schedule(schedule, langs=None):
    """Pure analysis of freezing structure; never raises on content."""
    langs = tuple(langs) if langs else schedule.langs
    modes = {(d.src, d.tgt): d.mode for d in schedule.directions}

    fully, mixed, edges = [], [], []
    for i, a in enumerate(langs):
        for b in langs[i + 1:]:
            ab = modes.get((a, b))
            ba = modes.get((b, a))
            if ab is None or ba is None:
                continue
            # which language does each direction freeze, if any
            frozen_ab = {FreezeMode.FREEZE_SRC_ENCODER: a,
                         FreezeMode.FREEZE_TGT_DECODER: b}.get(ab)
            frozen_ba = {FreezeMode.FREEZE_SRC_ENCODER: b,
                         FreezeMode.FREEZE_TGT_DECODER: a}.get(ba)
            if frozen_ab is None and frozen_ba is None:
                fully.append((a, b))
            elif frozen_ab == frozen_ba:
                frozen = frozen_ab
                learner = b if frozen == a else a
                edges.append((learner, frozen))
            else:
                mixed.append((a, b))

    in_deg = {l: 0 for l in langs}
    out_deg = {l: 0 for l in langs}
    for learner, frozen in edges:
        out_deg[learner] += 1
        in_deg[frozen] += 1

    cycle_ok = None
    if edges:
        cycle_ok = (all(v == 1 for v in in_deg.values())
                    and all(v == 1 for v in out_deg.values()))
        if cycle_ok:
            # walk it: one cycle must visit every language
            succ = dict(edges)
            node = edges[0][0]
            seen = set()
            while node not in seen:
                seen.add(node)
                node = succ[node]
            cycle_ok = len(seen) == len(langs)

    frozen_everywhere = set()
    for lang in langs:
        learns = any(
            (d.src == lang and d.mode != FreezeMode.FREEZE_SRC_ENCODER)
            or (d.tgt == lang and d.mode != FreezeMode.FREEZE_TGT_DECODER)
            for d in schedule.directions)
        if not learns:
            frozen_everywhere.add(lang)

    return ValidationReport(
        fully_trained=fully,
        mixed_pairs=mixed,
        learning_edges=edges,
        in_degree=in_deg,
        out_degree=out_deg,
        cycle_ok=cycle_ok,
        all_langs_learn=not frozen_everywhere,
        notes=[f"language {l} never learns" for l in sorted(frozen_everywhere)],
    )


# ---------------------------------------------------------------------------
# schedule files: one "src tgt mode" line per direction, mode in {nn,fn,nf}


def schedule_to_text(schedule):
    return "".join(f"{d.src} {d.tgt} {_FILE_LABEL[d.mode]}\n"
                   for d in schedule.directions)


def schedule_from_text(text):
    dirs = []
    langs = []
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        try:
            src, tgt, label = ln.split()
            mode = _MODE_BY_FILE_LABEL[label]
        except (ValueError, KeyError):
            raise ValueError(f"bad schedule line: {ln!r}")
        dirs.append(Direction(src, tgt, mode))
        for lang in (src, tgt):
            if lang not in langs:
                langs.append(lang)
    if not dirs:
        raise ValueError("empty schedule file")
    return TrainingSchedule(tuple(langs), tuple(dirs))
