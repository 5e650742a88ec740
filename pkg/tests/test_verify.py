import io
import json
import time

import numpy as np

from samplewise_rnnt import loss as loss_mod
from samplewise_rnnt.verify import SCALES, suite_finite_differences, suite_memory_scaling, verify


def mutated_gradient(h, log_den, alpha, beta, y, t_len=None):
    # blank-edge term nudged by 1e-3 at every cell
    dh = loss_mod.loss_gradient(h, log_den, alpha, beta, y, t_len)
    dh.data[..., loss_mod.BLANK] += 1e-3
    return dh


def test_small_scale_passes_quickly():
    out = io.StringIO()
    start = time.perf_counter()
    assert verify("small", out=out) == 0
    assert time.perf_counter() - start < 60
    lines = out.getvalue().splitlines()
    assert [line.split()[0] for line in lines] == ["loss_oracle", "finite_differences", "engine_equivalence", "memory_release"]
    assert all(line.split()[1] == "PASS" for line in lines)


def test_mutation_is_caught():
    out = io.StringIO()
    assert verify("small", grad_fn=mutated_gradient, out=out) == 1
    text = out.getvalue()
    assert "finite_differences   FAIL" in text
    dump = json.loads(text.splitlines()[-1])
    assert dump["stage"] == "loss_gradient" and "h" in dump and "labels" in dump


def test_mutation_suite_directly():
    rng = np.random.default_rng(SCALES["small"]["seed"])
    assert not suite_finite_differences(rng, 3, mutated_gradient).passed


def test_memory_scaling_suite():
    result = suite_memory_scaling(np.random.default_rng(0), 1)
    assert result.passed and result.cases == 4


def test_medium_includes_memory_scaling():
    out = io.StringIO()
    assert verify("medium", out=out) == 0
    assert out.getvalue().splitlines()[-1].startswith("memory_scaling       PASS  cases=4")
