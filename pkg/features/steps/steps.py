import math

import numpy as np
from behave import given, then, when

from src.amfusion.dataio import quantize, to_tensor
from src.amfusion.errors import NumericError
from src.amfusion.fusion import parse_strategy
from src.amfusion.metrics import METRIC_NAMES, evaluate_pair, normalized_index, ranking_rows
from src.amfusion.nn.blocks import autoencode, fuse_forward
from src.amfusion.nn.params import ArchConfig, init_params
from src.amfusion.synthetic import make_pair


@given("the metric means")
def step_given_metric_means(context):
    context.table_values = {
        row["method"]: {name: float(row[name]) for name in METRIC_NAMES} for row in context.table
    }


@when("I compute the normalized index")
def step_when_compute_index(context):
    context.error = None
    try:
        context.index = normalized_index(context.table_values)
    except NumericError as exc:
        context.error = exc


@then("the index of each method is within {tolerance:g} of")
def step_then_index_matches(context, tolerance):
    assert context.error is None, context.error
    for row in context.table:
        got = context.index[row["method"]]
        assert abs(got - float(row["xi"])) <= tolerance, f"{row['method']}: {got:.4f} vs {row['xi']}"


@then('"{method}" is ranked first')
def step_then_ranked_first(context, method):
    assert ranking_rows(context.table_values)[0][0] == method


@then("the computation fails with a numeric error")
def step_then_numeric_error(context):
    assert isinstance(context.error, NumericError)


@given("a freshly initialized model with base width {width:d} and seed {seed:d}")
def step_given_model(context, width, seed):
    context.params = init_params(ArchConfig(base_channels=width, ca_reduction=4, image_side=32), seed)


@given("a synthetic infrared/visible pair of side {side:d} with seed {seed:d}")
def step_given_pair(context, side, seed):
    ir, vis = make_pair(side=side, seed=seed)
    context.ir, context.vis = ir, vis
    context.fused = []


def _fuse(context, first, second, strategy):
    out = fuse_forward(to_tensor(first), to_tensor(second), context.params, parse_strategy(strategy))
    context.fused.append(quantize(out))


@when('I fuse the infrared frame with itself using the "{strategy}" strategy')
def step_when_fuse_self(context, strategy):
    _fuse(context, context.ir, context.ir, strategy)


@when('I fuse the pair using the "{strategy}" strategy')
def step_when_fuse_pair(context, strategy):
    _fuse(context, context.ir, context.vis, strategy)


@when('I fuse the pair in swapped order using the "{strategy}" strategy')
def step_when_fuse_swapped(context, strategy):
    _fuse(context, context.vis, context.ir, strategy)


@then("the fused image equals the reconstruction of the infrared frame")
def step_then_equals_reconstruction(context):
    expected = quantize(autoencode(to_tensor(context.ir), context.params))
    assert np.array_equal(context.fused[-1], expected)


@then("both fused images are equal within one gray level")
def step_then_symmetric(context):
    first, second = (f.astype(np.int16) for f in context.fused[-2:])
    assert np.max(np.abs(first - second)) <= 1


@then("all nine metrics of the fused image are finite")
def step_then_metrics_finite(context):
    values = evaluate_pair(context.ir, context.vis, context.fused[-1])
    assert set(values) == set(METRIC_NAMES)
    assert all(math.isfinite(v) for v in values.values())
