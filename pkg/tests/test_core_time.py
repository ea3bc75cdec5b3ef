from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timeguard.core_time import (
    TamperAction,
    TimelineEntry,
    ValidationMode,
    ViolationReason,
    VirtualClock,
    clock_read,
    clock_tamper,
    validate_timeline,
)

ARRIVAL = ValidationMode.ARRIVAL_ORDER
SORTED = ValidationMode.ORDINAL_SORTED


@pytest.mark.parametrize(
    "clock, now, expected",
    [
        (VirtualClock(0, 0, 1), 5000, 5000),
        (VirtualClock(0, 10_000, 1), 5000, 15_000),
        (VirtualClock(0, 0, 2), 5000, 10_000),
        (VirtualClock(1000, 0, Fraction(1, 2)), 1001, 1),  # 0.5 rounds half up
        (VirtualClock(0, 0, Fraction(1, 3)), 1, 0),
        (VirtualClock(0, 0, Fraction(2, 3)), 1, 1),
        (VirtualClock(0, 0, 1), -250, -250),
    ],
)
def test_clock_read(clock, now, expected):
    assert clock_read(clock, now) == expected


def test_clock_rejects_non_positive_rate():
    with pytest.raises(ValueError):
        VirtualClock(0, 0, 0)
    with pytest.raises(ValueError):
        VirtualClock(0, 0, Fraction(-1, 2))


def test_backward_jump():
    c = clock_tamper(VirtualClock.identity(), TamperAction.jump(-60_000), 100_000)
    assert clock_read(c, 100_000) == 40_000
    assert clock_read(c, 130_000) == 70_000


def test_zero_jump_and_unit_rate_are_no_ops():
    ident = VirtualClock.identity()
    j = clock_tamper(ident, TamperAction.jump(0), 12_345)
    r = clock_tamper(ident, TamperAction.rate_change(1), 12_345)
    for t in (0, 1, 12_345, 10**9):
        assert clock_read(j, t) == clock_read(ident, t)
        assert clock_read(r, t) == clock_read(ident, t)


def test_rate_change_is_continuous_at_now():
    c = clock_tamper(VirtualClock(0, 500, 1), TamperAction.rate_change(Fraction(1, 2)), 10_000)
    assert clock_read(c, 10_000) == 10_500
    assert clock_read(c, 12_000) == 11_500


def test_rate_change_rejects_non_positive():
    with pytest.raises(ValueError):
        TamperAction.rate_change(0)
    with pytest.raises(ValueError):
        TamperAction.rate_change(-2)


rates = st.fractions(min_value=Fraction(1, 100), max_value=100, max_denominator=1000)
times = st.integers(-10**12, 10**12)


@given(rates, times, times, st.integers(-10**9, 10**9), st.integers(-10**9, 10**9))
def test_clock_read_monotone(rate, anchor_v, anchor_r, t1, t2):
    c = VirtualClock(anchor_v, anchor_r, rate)
    lo, hi = sorted((t1, t2))
    assert clock_read(c, lo) <= clock_read(c, hi)


@given(rates, times, times, times, st.integers(-10**9, 10**9), st.lists(times, max_size=10))
def test_jump_then_inverse_restores_readings(rate, av, ar, now, d, probes):
    c = VirtualClock(av, ar, rate)
    back = clock_tamper(clock_tamper(c, TamperAction.jump(d), now), TamperAction.jump(-d), now)
    for t in probes + [now]:
        assert clock_read(back, t) == clock_read(c, t)


# --- validation ------------------------------------------------------------


def test_empty_timeline():
    assert validate_timeline([], ARRIVAL) == []
    assert validate_timeline([], SORTED) == []


@pytest.mark.parametrize("mode", list(ValidationMode))
def test_strictly_increasing_is_clean(mode):
    assert validate_timeline([(1, 100), (2, 200), (3, 300)], mode) == []


@pytest.mark.parametrize("mode", list(ValidationMode))
def test_decrease_is_flagged(mode):
    (v,) = validate_timeline([(1, 100), (2, 90)], mode)
    assert v.at_ordinal == 2 and v.prev_ordinal == 1
    assert v.reason is ViolationReason.NON_INCREASING_TIMESTAMP


@pytest.mark.parametrize("mode", list(ValidationMode))
def test_equal_timestamps_are_flagged(mode):
    (v,) = validate_timeline([(1, 100), (2, 100)], mode)
    assert v.at_ordinal == 2


def test_reorder_divergence_between_modes():
    # hand-evaluated: arrival max after (2,200) is 200, so (1,100) is flagged;
    # sorted by ordinal the sequence is 100 < 200 < 300
    entries = [(2, 200), (1, 100), (3, 300)]
    (v,) = validate_timeline(entries, ARRIVAL)
    assert (v.at_ordinal, v.prev_ordinal) == (1, 2)
    assert validate_timeline(entries, SORTED) == []


@pytest.mark.parametrize("mode", list(ValidationMode))
def test_duplicate_ordinal_is_flagged(mode):
    out = validate_timeline([(1, 100), (2, 200), (2, 300)], mode)
    assert [(v.at_ordinal, v.reason) for v in out] == [(2, ViolationReason.DUPLICATE_ORDINAL)]


def test_entry_ordinals_start_at_one():
    with pytest.raises(ValueError):
        TimelineEntry(0, 5)


def test_violation_ordinals_differ():
    for mode in ValidationMode:
        for v in validate_timeline([(3, 10), (1, 20), (2, 5), (2, 6), (5, 1)], mode):
            assert v.at_ordinal != v.prev_ordinal


# --- oracles ---------------------------------------------------------------


def all_pairs_violators(entries):
    """Ordinals o_j with some o_i < o_j and ts_i >= ts_j."""
    return {
        oj for oi, ti in entries for oj, tj in entries if oi < oj and ti >= tj
    }


def arrival_violators(entries):
    return {
        entries[j][0] for j in range(len(entries)) for i in range(j) if entries[i][1] >= entries[j][1]
    }


unique_entries = st.lists(
    st.tuples(st.integers(1, 200), st.integers(-1000, 1000)), max_size=50, unique_by=lambda e: e[0]
)
any_entries = st.lists(st.tuples(st.integers(1, 30), st.integers(-1000, 1000)), max_size=50)


@settings(max_examples=300)
@given(unique_entries)
def test_sorted_mode_matches_all_pairs_oracle(entries):
    flagged = {v.at_ordinal for v in validate_timeline(entries, SORTED)}
    assert flagged == all_pairs_violators(entries)


@settings(max_examples=300)
@given(any_entries)
def test_sorted_mode_is_subset_of_oracle_with_duplicates(entries):
    dupes = {o for o in (e[0] for e in entries) if sum(1 for x in entries if x[0] == o) > 1}
    flagged = {v.at_ordinal for v in validate_timeline(entries, SORTED)
               if v.reason is ViolationReason.NON_INCREASING_TIMESTAMP}
    assert flagged <= all_pairs_violators(entries) | dupes


@settings(max_examples=300)
@given(unique_entries)
def test_arrival_mode_matches_quadratic_oracle(entries):
    flagged = {v.at_ordinal for v in validate_timeline(entries, ARRIVAL)}
    assert flagged == arrival_violators(entries)


@given(st.lists(st.integers(1, 10**6), unique=True, max_size=50), st.integers(-10**6, 10**6))
def test_good_timeline_in_order_is_clean(steps, start):
    ts = start
    entries = []
    for i, step in enumerate(sorted(steps), start=1):
        ts += step
        entries.append((i, ts))
    assert validate_timeline(entries, ARRIVAL) == []
    assert validate_timeline(entries, SORTED) == []


@given(unique_entries, st.randoms(use_true_random=False))
def test_sorted_mode_ignores_arrival_order(entries, rnd):
    shuffled = list(entries)
    rnd.shuffle(shuffled)
    a = {v.at_ordinal for v in validate_timeline(entries, SORTED)}
    b = {v.at_ordinal for v in validate_timeline(shuffled, SORTED)}
    assert a == b


@given(any_entries, st.sampled_from(list(ValidationMode)))
def test_violation_never_names_itself(entries, mode):
    for v in validate_timeline(entries, mode):
        assert v.at_ordinal != v.prev_ordinal
