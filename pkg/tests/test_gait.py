"""Trot schedule timing contracts."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from quadlab.gait import GaitSchedule

times = st.floats(0.0, 100.0, allow_nan=False)


def test_period_and_fraction():
    g = GaitSchedule()
    assert g.period == 0.26
    assert g.stance_fraction == 0.5


@settings(max_examples=100, deadline=None)
@given(t=times)
def test_diagonal_pairs_alternate(t):
    g = GaitSchedule()
    c = g.contact_at(t)
    assert c[0] == c[3]  # FR with RL
    assert c[1] == c[2]  # FL with RR
    assert c[0] != c[1]  # no flight, no four-stance


@settings(max_examples=100, deadline=None)
@given(t=times)
def test_periodicity(t):
    g = GaitSchedule()
    assert np.array_equal(g.contact_at(t), g.contact_at(t + g.period))


@settings(max_examples=100, deadline=None)
@given(t=times)
def test_swing_progress_bounds(t):
    g = GaitSchedule()
    prog = g.swing_progress(t)
    assert np.all(prog >= 0.0)
    assert np.all(prog < 1.0 + 1e-12)
    assert np.all(prog[g.contact_at(t)] == 0.0)


@settings(max_examples=100, deadline=None)
@given(t=times)
def test_stance_time_remaining_bounds(t):
    g = GaitSchedule()
    rem = g.stance_time_remaining(t)
    c = g.contact_at(t)
    assert np.all(rem[c] > 0.0)
    assert np.all(rem[c] <= g.stance_duration + 1e-12)
    assert np.all(rem[~c] == 0.0)


def test_stance_time_remaining_counts_down():
    g = GaitSchedule()
    t = 0.02
    rem0 = g.stance_time_remaining(t)[0]
    rem1 = g.stance_time_remaining(t + 0.01)[0]
    assert rem1 == rem0 - 0.01 or rem1 == 0.0


def test_contact_table_matches_pointwise():
    g = GaitSchedule()
    table = g.contact_table(0.037, 26, 0.01)
    assert table.shape == (27, 4)
    for k in range(27):
        assert np.array_equal(table[k], g.contact_at(0.037 + 0.01 * k))


def test_swing_progress_reaches_touchdown():
    g = GaitSchedule()
    # FR enters swing at t = stance_duration
    t0 = g.stance_duration
    eps = 1e-9
    assert g.swing_progress(t0 + eps)[0] < 1e-6
    assert g.swing_progress(t0 + g.swing_duration - eps)[0] > 1.0 - 1e-6
