import itertools

import pytest

from modnmt.schedule import (CLOSE_PRESET, FAR_PRESET, PRESET_LANGS,
                             Direction, FreezeMode, TrainingSchedule,
                             adaptive_update, basic_schedule, frozen_schedule,
                             schedule_from_text, schedule_to_text,
                             validate_schedule)

LANGS4 = ("de", "en", "es", "fr")


def modes_of(schedule):
    return {(d.src, d.tgt): d.mode.value for d in schedule.directions}


def test_direction_rejects_self_pair():
    with pytest.raises(ValueError):
        Direction("en", "en")


def test_schedule_rejects_duplicates():
    with pytest.raises(ValueError, match="duplicate"):
        TrainingSchedule(("a", "b"),
                         (Direction("a", "b"), Direction("a", "b")))


def test_basic_schedule_shape():
    s = basic_schedule(LANGS4)
    assert len(s.directions) == 12
    assert all(d.mode is FreezeMode.NONE for d in s.directions)
    # nested-loop order
    expect = [(a, b) for a in LANGS4 for b in LANGS4 if a != b]
    assert [(d.src, d.tgt) for d in s.directions] == expect


def test_basic_needs_two_languages():
    with pytest.raises(ValueError):
        basic_schedule(["de"])


class TestPresets:
    def test_far_matches_table(self):
        s = frozen_schedule(LANGS4, preset="far")
        assert modes_of(s) == FAR_PRESET

    def test_close_matches_table(self):
        s = frozen_schedule(LANGS4, preset="close")
        assert modes_of(s) == CLOSE_PRESET

    def test_close_keeps_close_pairs_unfrozen(self):
        m = modes_of(frozen_schedule(LANGS4, preset="close"))
        for a, b in (("de", "en"), ("en", "de"), ("es", "fr"), ("fr", "es")):
            assert m[(a, b)] == "n-n"

    def test_far_keeps_far_pairs_unfrozen(self):
        m = modes_of(frozen_schedule(LANGS4, preset="far"))
        for a, b in (("de", "fr"), ("fr", "de"), ("en", "es"), ("es", "en")):
            assert m[(a, b)] == "n-n"

    def test_preset_requires_the_four_languages(self):
        with pytest.raises(ValueError):
            frozen_schedule(("a", "b", "c", "d"), preset="far")
        with pytest.raises(ValueError):
            frozen_schedule(LANGS4, preset="nope")

    def test_exactly_one_selection_mode(self):
        with pytest.raises(ValueError):
            frozen_schedule(LANGS4)
        with pytest.raises(ValueError):
            frozen_schedule(LANGS4, preset="far",
                            unfrozen_pairs=[("de", "fr"), ("en", "es")])


def langs_n(n):
    return tuple(f"l{i}" for i in range(n))


def pairs_n(langs):
    it = iter(langs)
    return [(a, b) for a, b in zip(it, it)]


class TestGenericConstruction:
    @pytest.mark.parametrize("n", [4, 6, 8])
    def test_matching_is_fully_trained_and_cycle_holds(self, n):
        langs = langs_n(n)
        matching = pairs_n(langs)
        s = frozen_schedule(langs, unfrozen_pairs=matching)
        report = validate_schedule(s)
        assert sorted(report.fully_trained) == sorted(matching)
        assert report.cycle_ok is True
        assert all(v == 1 for v in report.in_degree.values())
        assert all(v == 1 for v in report.out_degree.values())
        assert report.all_langs_learn

    @pytest.mark.parametrize("n", [4, 6, 8])
    def test_every_direction_present_once(self, n):
        langs = langs_n(n)
        s = frozen_schedule(langs, unfrozen_pairs=pairs_n(langs))
        assert len(s.directions) == n * (n - 1)
        assert len({(d.src, d.tgt) for d in s.directions}) == n * (n - 1)

    def test_two_languages_degenerate(self):
        s = frozen_schedule(("a", "b"), unfrozen_pairs=[("a", "b")])
        assert modes_of(s) == {("a", "b"): "n-n", ("b", "a"): "n-n"}
        assert validate_schedule(s).cycle_ok is None

    def test_matching_validation(self):
        with pytest.raises(ValueError, match="matching"):
            frozen_schedule(langs_n(4),
                            unfrozen_pairs=[("l0", "l1"), ("l1", "l2")])
        with pytest.raises(ValueError, match="every language"):
            frozen_schedule(langs_n(4), unfrozen_pairs=[("l0", "l1")])
        with pytest.raises(ValueError, match="even"):
            frozen_schedule(langs_n(3), unfrozen_pairs=[("l0", "l1")])
        with pytest.raises(ValueError, match="bad pair"):
            frozen_schedule(langs_n(4), unfrozen_pairs=[("l0", "zz"),
                                                        ("l1", "l2")])

    def test_matching_edges_never_reused_by_cycle(self):
        for n in (4, 6, 8):
            langs = langs_n(n)
            matching = pairs_n(langs)
            m = modes_of(frozen_schedule(langs, unfrozen_pairs=matching))
            for a, b in matching:
                assert m[(a, b)] == "n-n" and m[(b, a)] == "n-n"


def test_validate_far_report():
    report = validate_schedule(frozen_schedule(LANGS4, preset="far"))
    assert sorted(report.fully_trained) == [("de", "fr"), ("en", "es")]
    assert report.mixed_pairs == [("es", "fr")]
    assert report.cycle_ok is False  # in-degree 2 at en
    assert report.all_langs_learn
    text = report.summary()
    assert "fully_trained=2" in text
    assert "es-fr" in text


def test_validate_close_report():
    report = validate_schedule(frozen_schedule(LANGS4, preset="close"))
    assert sorted(report.fully_trained) == [("de", "en"), ("es", "fr")]
    assert report.all_langs_learn


def test_adaptive_picks_worst_disjoint_pairs():
    s = basic_schedule(LANGS4)
    loss = {(a, b): 1.0 for a in LANGS4 for b in LANGS4 if a != b}
    loss[("de", "fr")] = loss[("fr", "de")] = 9.0
    loss[("en", "es")] = loss[("es", "en")] = 8.0
    out = adaptive_update(s, loss)
    report = validate_schedule(out)
    assert sorted(report.fully_trained) == [("de", "fr"), ("en", "es")]
    assert report.cycle_ok is True


def test_adaptive_overlapping_worst_pairs():
    # worst two pairs share 'de'; the second pick must skip to a disjoint one
    s = basic_schedule(LANGS4)
    loss = {(a, b): 1.0 for a in LANGS4 for b in LANGS4 if a != b}
    loss[("de", "fr")] = loss[("fr", "de")] = 9.0
    loss[("de", "en")] = loss[("en", "de")] = 8.5
    loss[("en", "es")] = loss[("es", "en")] = 2.0
    out = adaptive_update(s, loss)
    assert sorted(validate_schedule(out).fully_trained) == [
        ("de", "fr"), ("en", "es")]


def test_adaptive_tie_breaks_on_pair_name():
    s = basic_schedule(LANGS4)
    loss = {(a, b): 1.0 for a in LANGS4 for b in LANGS4 if a != b}
    out1 = adaptive_update(s, loss)
    out2 = adaptive_update(s, loss)
    assert out1 == out2  # deterministic under full ties
    assert sorted(validate_schedule(out1).fully_trained) == [
        ("de", "en"), ("es", "fr")]  # lexicographically first disjoint pairs


def test_adaptive_requires_full_loss_map():
    s = basic_schedule(LANGS4)
    with pytest.raises(ValueError, match="missing"):
        adaptive_update(s, {("de", "en"): 1.0})


def test_schedule_text_roundtrip():
    for sched in (basic_schedule(LANGS4),
                  frozen_schedule(LANGS4, preset="far"),
                  frozen_schedule(LANGS4, preset="close")):
        text = schedule_to_text(sched)
        again = schedule_from_text(text)
        assert modes_of(again) == modes_of(sched)
        assert tuple(sorted(again.langs)) == tuple(sorted(sched.langs))


def test_schedule_text_format():
    text = schedule_to_text(frozen_schedule(LANGS4, preset="far"))
    assert "de en nf\n" in text
    assert "en de fn\n" in text
    assert "de fr nn\n" in text


def test_schedule_from_text_errors():
    with pytest.raises(ValueError, match="bad schedule line"):
        schedule_from_text("de en frozen\n")
    with pytest.raises(ValueError, match="empty"):
        schedule_from_text("# only a comment\n")


def test_schedule_from_text_skips_comments():
    s = schedule_from_text("# heading\nde en nn\n\nen de fn\n")
    assert len(s.directions) == 2
    assert s.mode("en", "de") is FreezeMode.FREEZE_SRC_ENCODER


def test_generic_mode_distribution():
    # matching pairs: n-n both ways. cycle pairs: one n-f + one f-n.
    # anything left over (possible from six languages up): n-f both ways.
    for n in (4, 6, 8):
        langs = langs_n(n)
        s = frozen_schedule(langs, unfrozen_pairs=pairs_n(langs))
        m = {(d.src, d.tgt): d.mode for d in s.directions}
        kinds = {"nn": 0, "cycle": 0, "leftover": 0}
        for a, b in itertools.combinations(langs, 2):
            ab, ba = m[(a, b)], m[(b, a)]
            if ab is FreezeMode.NONE:
                assert ba is FreezeMode.NONE
                kinds["nn"] += 1
            elif FreezeMode.FREEZE_SRC_ENCODER in (ab, ba):
                assert {ab, ba} == {FreezeMode.FREEZE_SRC_ENCODER,
                                    FreezeMode.FREEZE_TGT_DECODER}
                kinds["cycle"] += 1
            else:
                assert ab is ba is FreezeMode.FREEZE_TGT_DECODER
                kinds["leftover"] += 1
        assert kinds["nn"] == n // 2
        assert kinds["cycle"] == (n if n > 2 else 0)
        assert kinds["leftover"] == n * (n - 1) // 2 - kinds["nn"] - kinds["cycle"]
