import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradcheck import check
from subtasknet import numcore as nc
from subtasknet import tcn
from subtasknet.errors import ConfigError, ParameterError, UsageError


def test_schedules():
    assert tcn.make_schedule("fibonacci", 10).dilations == (1, 2, 3, 5, 8, 13, 21, 34, 55, 89)
    assert tcn.make_schedule("exponential", 4).dilations == (1, 2, 4, 8)
    with pytest.raises(ParameterError):
        tcn.make_schedule("linear", 3)


def test_fibonacci_sequence_oracle():
    a, b, seq = 1, 1, []
    for _ in range(20):
        seq.append(a)
        a, b = b, a + b
    assert [tcn.fibonacci(n) for n in range(1, 21)] == seq


@given(st.integers(1, 16), st.sampled_from([3, 5, 7]))
def test_receptive_field_closed_forms(L, k):
    fib = tcn.receptive_field(tcn.make_schedule("fibonacci", L), k)
    exp = tcn.receptive_field(tcn.make_schedule("exponential", L), k)
    # sum_{i=1..n} F_i = F_{n+2} - 1, shifted by the missing leading F_1
    assert fib == 1 + (k - 1) * (tcn.fibonacci(L + 3) - 2)
    assert exp == 1 + (k - 1) * (2**L - 1)


@pytest.mark.parametrize("kind", tcn.SCHEDULE_KINDS)
@pytest.mark.parametrize("L", [1, 3, 6])
def test_probed_receptive_field_equals_analytic(kind, L):
    rng = np.random.default_rng(L)
    sched = tcn.make_schedule(kind, L)
    rf = tcn.receptive_field(sched, 3)
    stage = tcn.StageParams.init(2, 4, 3, L, 3, rng, dropout=0.0)
    for b in stage.conv_b:
        b.data[:] = 1.0
    T = rf + 10
    lo, hi = tcn.probe_receptive_field(stage, sched, T, T // 2)
    assert hi - lo + 1 == rf


def test_stage_output_shapes_and_probabilities(rng):
    params = tcn.MultiStageParams.init(5, 8, 4, S=3, L=4, k=3, rng=rng, dropout=0.5)
    sched = tcn.make_schedule("fibonacci", 4)
    outs = tcn.multistage_forward(nc.tensor(rng.standard_normal((30, 5))), params, sched)
    assert len(outs) == 3
    for p in outs:
        assert p.shape == (30, 4) and np.allclose(p.data.sum(axis=1), 1.0)


def test_later_stages_consume_class_probabilities(rng):
    params = tcn.MultiStageParams.init(5, 8, 4, S=2, L=2, k=3, rng=rng)
    assert params.stages[1].in_width == 4


def test_eval_forward_is_deterministic_and_training_needs_rng(rng):
    params = tcn.MultiStageParams.init(3, 6, 2, S=2, L=3, k=3, rng=rng, dropout=0.5)
    sched = tcn.make_schedule("exponential", 3)
    x = nc.tensor(rng.standard_normal((12, 3)))
    a = tcn.multistage_forward(x, params, sched)[-1].data
    b = tcn.multistage_forward(x, params, sched)[-1].data
    assert np.array_equal(a, b)
    with pytest.raises(UsageError):
        tcn.multistage_forward(x, params, sched, training=True)


def test_layer_count_mismatch(rng):
    params = tcn.StageParams.init(3, 4, 2, 3, 3, rng)
    with pytest.raises(ConfigError):
        tcn.stage_forward(nc.tensor(np.ones((5, 3))), params, tcn.make_schedule("fibonacci", 4))


def test_even_kernel_rejected(rng):
    with pytest.raises(ParameterError):
        tcn.StageParams.init(3, 4, 2, 2, 4, rng)


def test_stage_gradient_through_whole_stack():
    rng = np.random.default_rng(5)
    params = tcn.StageParams.init(2, 3, 3, 2, 3, rng, dropout=0.0)
    for b in params.conv_b:
        b.data[:] = 0.5  # keeps pre-activations off the ReLU kink
    sched = tcn.make_schedule("fibonacci", 2)
    probe = nc.tensor(rng.standard_normal((7, 3)))
    x = rng.standard_normal((7, 2))

    def build(inp, pw):
        params.proj_W = pw
        _, p = tcn.stage_forward(inp, params, sched)
        return nc.sum(nc.mul(p, probe))

    assert check(build, [x, params.proj_W.data.copy()]) < 1e-5
