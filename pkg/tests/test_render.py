import re

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from latentcarto.cartogram import identity_transform
from latentcarto.contours import marching_squares
from latentcarto.errors import InputError
from latentcarto.geometry import distance_field, straight_path
from latentcarto.grid import EmbeddingSet, GridSpec, MeasureField
from latentcarto.render import PALETTE, RenderSpec, contrast_map, label_colors, ramp_color, render_scene

SPEC = GridSpec(-1.0, 1.0, -1.0, 1.0, 40, 40)


def fills(svg):
    return re.findall(r'<rect x="[^"]*" y="[^"]*" width="[^"]*" height="[^"]*" fill="(#[0-9a-f]{6})"/>', svg)[1:]


def test_renderspec_validation():
    with pytest.raises(InputError):
        RenderSpec(width=32)
    with pytest.raises(InputError):
        RenderSpec(contrast="log")
    with pytest.raises(InputError):
        RenderSpec(contour_levels=(0.2, 0.1))
    with pytest.raises(InputError):
        RenderSpec(contour_levels=(0.0, 0.1))
    with pytest.raises(InputError):
        RenderSpec(layers=("heatmap", "labels"))
    with pytest.raises(InputError):
        RenderSpec(colormap="rainbow")


def test_constant_measure_single_color():
    svg = render_scene(MeasureField(SPEC, np.full((40, 40), 2.0)), spec=RenderSpec(width=200, height=200))
    f = fills(svg)
    assert len(f) == 40 * 40
    assert len(set(f)) == 1


def test_blocks_when_cells_exceed_pixels():
    spec = GridSpec(0, 1, 0, 1, 150, 90)
    svg = render_scene(MeasureField(spec, np.ones((150, 90))), spec=RenderSpec(width=64, height=64))
    assert len(fills(svg)) == 50 * 45  # block sizes 3 x 2


def test_sqrt_contrast_monotone():
    v = np.array([0.0, 0.01, 0.25, 1.0, 4.0])
    s = contrast_map(v, "sqrt")
    assert np.allclose(s, np.sqrt(v / 4.0))
    assert np.all(np.diff(s) > 0)
    shades = [ramp_color(x, "black") for x in s]
    # darker means smaller channel values on the white-to-black ramp
    assert [int(c[1:3], 16) for c in shades] == sorted([int(c[1:3], 16) for c in shades], reverse=True)


def test_sqrt_and_linear_differ_only_in_fill():
    vals = np.random.default_rng(0).random((40, 40)) ** 3
    m = MeasureField(SPEC, vals)
    a = render_scene(m, spec=RenderSpec(width=128, height=128, contrast="linear"))
    b = render_scene(m, spec=RenderSpec(width=128, height=128, contrast="sqrt"))
    strip = lambda s: re.sub(r'fill="#[0-9a-f]{6}"', "", s)  # noqa: E731
    assert a != b
    assert strip(a) == strip(b)


def test_scatter_colors_follow_sorted_labels():
    assert label_colors(["b", "a", "c", "a"]) == {"a": PALETTE[0], "b": PALETTE[1], "c": PALETTE[2]}
    E = EmbeddingSet(np.array([[0.0, 0.0], [0.5, 0.5]]), ("zz", "aa"))
    svg = render_scene(embeddings=E, spec=RenderSpec(width=100, height=100, layers=("scatter",)))
    circles = re.findall(r'fill="(#[0-9a-f]{6})"/>', svg)[1:]
    assert circles == [PALETTE[1], PALETTE[0]]


def test_render_is_deterministic():
    m = MeasureField(SPEC, np.random.default_rng(1).random((40, 40)))
    E = EmbeddingSet(np.random.default_rng(2).uniform(-1, 1, (50, 2)), tuple("ab"[i % 2] for i in range(50)))
    I = identity_transform(SPEC)
    D = distance_field(I, (0.1, 0.2))
    p = [straight_path(I, (-0.5, -0.5), (0.5, 0.4), 9)]
    spec = RenderSpec(width=300, height=200, contour_levels=(0.3, 0.6), contrast="sqrt")
    a = render_scene(m, E, p, D, spec)
    b = render_scene(m, E, p, D, spec)
    assert a == b
    assert a.startswith('<?xml version="1.0" encoding="UTF-8"?>\n<svg xmlns="http://www.w3.org/2000/svg" version="1.1"')
    for gid in ("heatmap", "contours", "paths", "scatter"):
        assert f'<g id="{gid}"' in a


def test_render_errors():
    with pytest.raises(InputError):
        render_scene(spec=RenderSpec())
    m = MeasureField(SPEC, np.ones((40, 40)))
    other = MeasureField(GridSpec(-1, 1, -1, 1, 20, 20), np.ones((20, 20)))
    with pytest.raises(InputError):
        render_scene(m, dist=other, spec=RenderSpec(contour_levels=(0.5,)))
    # requested layers without data are an error too
    with pytest.raises(InputError):
        render_scene(m, spec=RenderSpec(layers=("scatter",)))


# marching squares ----------------------------------------------------------------


def test_circle_contour_accuracy():
    z0 = np.array([0.13, -0.07])
    D = distance_field(identity_transform(SPEC), z0)
    r = 0.55
    lines = marching_squares(SPEC, D.values, r)
    assert len(lines) == 1
    pts, closed = lines[0]
    assert closed
    half_diag = 0.5 * np.hypot(SPEC.dz_1, SPEC.dz_2)
    assert np.max(np.abs(np.linalg.norm(pts - z0, axis=1) - r)) <= half_diag


def test_contour_cut_by_boundary_is_open():
    D = distance_field(identity_transform(SPEC), (0.9, 0.0))
    lines = marching_squares(SPEC, D.values, 0.5)
    assert len(lines) == 1 and not lines[0][1]
    ends = lines[0][0][[0, -1]]
    lo = SPEC.min_1 + 0.5 * SPEC.dz_1
    hi = SPEC.max_1 - 0.5 * SPEC.dz_1
    on_edge = np.isclose(ends, lo) | np.isclose(ends, hi)
    assert on_edge.any(axis=1).all()


def test_saddle_average_rule():
    spec = GridSpec(0, 2, 0, 2, 2, 2)
    v = np.array([[1.0, 0.0], [0.0, 1.0]])  # diagonal highs
    hi = marching_squares(spec, v, 0.4)  # corner mean 0.5 > level: highs connect
    lo = marching_squares(spec, v, 0.6)  # corner mean < level: lows connect
    assert len(hi) == 2 and len(lo) == 2
    # with the highs joined, each segment cuts off one low corner
    cut_hi = sorted(tuple(np.round(p.mean(axis=0), 6)) for p, _ in hi)
    cut_lo = sorted(tuple(np.round(p.mean(axis=0), 6)) for p, _ in lo)
    assert cut_hi != cut_lo


@given(hnp.arrays(np.float64, (7, 6), elements=st.integers(0, 8).map(float)), st.sampled_from([0.5, 2.5, 4.5, 7.5]))
def test_contours_have_no_dangling_segments(vals, level):
    spec = GridSpec(0, 7, 0, 6, 7, 6)
    lo1, hi1 = 0.5, 6.5
    lo2, hi2 = 0.5, 5.5
    for pts, closed in marching_squares(spec, vals, level):
        if closed:
            assert np.allclose(pts[0], pts[-1])
            continue
        for x, y in pts[[0, -1]]:
            assert np.isclose(x, lo1) or np.isclose(x, hi1) or np.isclose(y, lo2) or np.isclose(y, hi2)
