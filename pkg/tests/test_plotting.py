import numpy as np
import pytest

from signmimic import plotting
from signmimic.retarget import CeilingReport

PNG = b"\x89PNG\r\n\x1a\n"


def is_png(path):
    return path.read_bytes()[:8] == PNG


def test_moving_average():
    np.testing.assert_allclose(plotting.moving_average([1, 2, 3, 4, 5], 3), [2, 3, 4])
    np.testing.assert_array_equal(plotting.moving_average([1, 2], 5), [1, 2])


def test_figures_render(tmp_path):
    curve = [{"step": 100 * i, "reward_mean": 0.1 * i} for i in range(1, 8)]
    rep = CeilingReport("demo", "pd_tracked", np.linspace(0.9, 1.0, 50))
    rows = [{"step": i, **{k: 0.9 for k in ("r_pb", "r_ph", "r_vb", "r_vh", "r_e", "total")}} for i in range(10)]
    paths = [
        plotting.learning_curves({"seed 1": curve, "seed 2": curve[:3]}, tmp_path / "lc.png"),
        plotting.ceiling_series([rep], tmp_path / "sub" / "ceil.png"),
        plotting.term_bars({"a": 0.2, "b": 0.8}, tmp_path / "bars.png"),
        plotting.step_response(np.linspace(0, 1, 20), {"kd 6": np.linspace(0, 1, 20)}, tmp_path / "step.png", 1.0),
        plotting.eval_terms(rows, tmp_path / "eval.png"),
    ]
    for p in paths:
        assert p.exists() and is_png(p)


def test_renders_are_byte_stable(tmp_path):
    curve = [{"step": i, "reward_mean": float(np.sin(i))} for i in range(30)]
    a = plotting.learning_curves({"x": curve}, tmp_path / "a.png").read_bytes()
    b = plotting.learning_curves({"x": curve}, tmp_path / "b.png").read_bytes()
    assert a == b


@pytest.mark.parametrize("empty", [{}, []])
def test_empty_inputs_still_render(tmp_path, empty):
    fn = plotting.learning_curves if isinstance(empty, dict) else plotting.ceiling_series
    assert is_png(fn(empty, tmp_path / "empty.png"))
