import numpy as np
import pytest

from jointse.autodiff import Tensor
from jointse.autodiff.tensor import make_node
from jointse.gradcheck import RTOL, case_names, check, run_case, run_suite
from jointse.gradcheck import _registry


def test_registry_covers_every_required_block():
    names = set(case_names())
    required = {"add", "mul", "div", "matmul", "exp", "log", "tanh", "sigmoid", "relu", "softmax",
                "log_softmax", "conv1d", "depthwise_conv1d", "stft", "istft", "logmel", "mish",
                "swish", "meta_acon", "lstm", "blstm", "lstm_cell", "multi_head_attention",
                "layer_norm", "conformer_block", "se_chain_preserve", "se_chain_discard",
                "se_network", "ctc", "attention_loss", "asr_loss", "singleton_broadcast"}
    assert required <= names
    assert len(names) == len(case_names())


def test_each_case_has_three_shapes():
    assert all(len(c.variants) == 3 for c in _registry())


def cube_with_bug(x, bug):
    out = x.data ** 3
    scale = 3.0 if not bug else 3.003
    return make_node(out, (x,), lambda g: (g * scale * x.data ** 2,))


def test_checker_passes_correct_and_flags_wrong_backward(rng):
    x = Tensor(rng.uniform(0.5, 1.5, size=(3, 2)), requires_grad=True)
    good, n = check(lambda: cube_with_bug(x, False), [x], rng)
    bad, _ = check(lambda: cube_with_bug(x, True), [x], rng)
    assert n == 6
    assert good < 1e-8
    assert bad > RTOL


def test_a_few_cases_pass(rng):
    for name in ("tanh", "ctc", "blstm"):
        case = next(c for c in _registry() if c.name == name)
        assert all(r.passed for r in run_case(case))


def test_unknown_case_name():
    with pytest.raises(KeyError):
        run_suite(["nope"])


def test_result_line_format():
    (res, *_) = run_suite(["add"])
    assert res.line().startswith("PASS add")
