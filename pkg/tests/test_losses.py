from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from se3flow.errors import InvalidArgumentError
from se3flow.field import FlowField
from se3flow.losses import LossWeights, loss_weight, per_iteration_loss, remaining_iterations, total_loss

H, W = 5, 6
ZERO_F = np.zeros((H, W, 2))
ZERO_D = np.zeros((H, W))
ALL = np.ones((H, W), bool)


def test_default_weights():
    w = LossWeights()
    assert (w.w_d, w.w_rev, w.gamma) == (250.0, 0.2, 0.8)
    for bad in ({"w_d": -1.0}, {"gamma": 0.0}, {"gamma": 1.5}, {"reduction": "max"}):
        with pytest.raises(InvalidArgumentError):
            LossWeights(**bad)


def test_per_iteration_examples():
    assert per_iteration_loss(ZERO_F, ZERO_D, ZERO_F, ZERO_F, ZERO_D, ALL) == 0.0
    off = ZERO_F + [1.0, 0.0]
    assert per_iteration_loss(off, ZERO_D, ZERO_F, ZERO_F, ZERO_D, ALL) == 1.0
    assert per_iteration_loss(ZERO_F, ZERO_D + 0.01, ZERO_F, ZERO_F, ZERO_D, ALL) == pytest.approx(2.5, abs=1e-12)
    assert per_iteration_loss(ZERO_F, ZERO_D, off, ZERO_F, ZERO_D, ALL) == pytest.approx(0.2, abs=1e-15)


def test_per_iteration_mask_and_reduction():
    f = np.zeros((H, W, 2))
    f[0, 0] = [3.0, -1.0]
    mask = np.zeros((H, W), bool)
    mask[0, :2] = True
    assert per_iteration_loss(f, ZERO_D, ZERO_F, ZERO_F, ZERO_D, mask) == 2.0
    assert per_iteration_loss(f, ZERO_D, ZERO_F, ZERO_F, ZERO_D, mask, LossWeights(reduction="sum")) == 4.0
    with pytest.raises(InvalidArgumentError):
        per_iteration_loss(f, ZERO_D, ZERO_F, ZERO_F, ZERO_D, np.zeros((H, W), bool))


def test_remaining_iterations_examples():
    sched = [4, 6, 8]
    assert remaining_iterations(1, 1, sched) == 17
    assert remaining_iterations(3, 8, sched) == 0
    assert loss_weight(3, 8, sched) == 1.0
    assert remaining_iterations(2, 3, [4, 5, 5, 6]) == 13
    seq = [remaining_iterations(s, i, sched) for s, n in enumerate(sched, 1) for i in range(1, n + 1)]
    assert seq == list(range(17, -1, -1))
    for bad in ((0, 1), (4, 1), (1, 0), (1, 5)):
        with pytest.raises(InvalidArgumentError):
            remaining_iterations(*bad, sched)


@given(st.lists(st.integers(1, 9), min_size=1, max_size=5))
def test_remaining_iterations_counts_down(sched):
    seq = [remaining_iterations(s, i, sched) for s, n in enumerate(sched, 1) for i in range(1, n + 1)]
    assert seq[-1] == 0
    assert all(a - b == 1 for a, b in zip(seq, seq[1:]))


def fake_trace(schedule, flow_offset):
    records = []
    for s, n in enumerate(schedule, 1):
        for i in range(1, n + 1):
            records.append(
                SimpleNamespace(
                    scale=s,
                    iteration=i,
                    flow=FlowField(ZERO_F + [flow_offset, 0.0], ZERO_D.copy()),
                    revision=ZERO_F.copy(),
                    valid=ALL,
                )
            )
    return SimpleNamespace(records=records, schedule=list(schedule))


def test_total_loss_geometric_sum():
    c = 0.37
    tr = fake_trace([4, 6, 8], c)
    got = total_loss(tr, ZERO_F, ZERO_D, ALL)
    assert abs(got - c * (1 - 0.8**18) / 0.2) < 1e-12


def test_total_loss_gamma_one_is_plain_sum():
    tr = fake_trace([2, 3], 1.5)
    assert total_loss(tr, ZERO_F, ZERO_D, ALL, LossWeights(gamma=1.0)) == pytest.approx(5 * 1.5, abs=1e-12)


def test_total_loss_single_iteration_equals_per_iteration():
    tr = fake_trace([1], 0.25)
    r = tr.records[0]
    assert total_loss(tr, ZERO_F, ZERO_D, ALL) == per_iteration_loss(
        r.flow.flow, r.flow.dchange, r.revision, ZERO_F, ZERO_D, ALL
    )


def test_total_loss_weights_increase():
    sched = [4, 6, 8]
    ws = [loss_weight(s, i, sched) for s, n in enumerate(sched, 1) for i in range(1, n + 1)]
    assert all(b > a for a, b in zip(ws, ws[1:]))


def test_total_loss_incomplete_trace():
    tr = fake_trace([4, 6, 8], 1.0)
    tr.records.pop(5)
    with pytest.raises(InvalidArgumentError):
        total_loss(tr, ZERO_F, ZERO_D, ALL)
    with pytest.raises(InvalidArgumentError):
        total_loss(tr.records, ZERO_F, ZERO_D, ALL)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_loss_nonnegative_and_zero_iff_exact(seed):
    rng = np.random.default_rng(seed)
    f, d, r = rng.standard_normal((H, W, 2)), rng.standard_normal((H, W)), rng.standard_normal((H, W, 2))
    mask = rng.random((H, W)) < 0.5
    mask[0, 0] = True
    assert per_iteration_loss(f, d, r, ZERO_F, ZERO_D, mask) > 0
    assert per_iteration_loss(f, d, f, f, d, mask) == 0
