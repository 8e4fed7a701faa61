import xml.etree.ElementTree as ET

import numpy as np

from quantour import svg

NS = "{http://www.w3.org/2000/svg}"


def _chart():
    square = np.log10([[500, 20], [900, 20], [900, 26], [500, 26]])
    return svg.envelope_chart([("p=0.1", square), ("empty", np.empty((0, 2)))],
                              lines=[("upper", 0.35, 1 / 3)], points=square, title="GA <b> & co")


def test_chart_is_well_formed_and_deterministic():
    text = _chart()
    assert text == _chart()
    root = ET.fromstring(text.split("\n", 1)[1])
    assert root.get("viewBox") == "0 0 800 600"
    polys = root.findall(f".//{NS}polyline")
    # closed polygon repeats its first vertex; the tangent line has two points
    assert len(polys) == 2
    assert len(polys[0].get("points").split()) == 5
    assert polys[1].get("stroke-dasharray") == "6,4"
    texts = [t.text for t in root.iter(f"{NS}text")]
    assert "GA <b> & co" in texts and "empty" in texts


def test_polygon_inside_frame():
    root = ET.fromstring(_chart().split("\n", 1)[1])
    pts = np.array([[float(v) for v in p.split(",")]
                    for p in root.find(f".//{NS}polyline").get("points").split()])
    l, r, t, b = svg.MARGIN[0], svg.WIDTH - svg.MARGIN[1], svg.MARGIN[2], svg.HEIGHT - svg.MARGIN[3]
    assert np.all((pts[:, 0] >= l) & (pts[:, 0] <= r) & (pts[:, 1] >= t) & (pts[:, 1] <= b))


def test_ticks_on_natural_scale():
    ticks = svg._nice_ticks(np.log10(400), np.log10(1300))
    assert ticks[0] >= 400 and ticks[-1] <= 1300 and len(ticks) >= 3
    steps = np.diff(ticks)
    assert np.allclose(steps, steps[0])


def test_all_empty_input_still_renders():
    text = svg.envelope_chart([("none", np.empty((0, 2)))])
    assert text.startswith("<?xml") and text.endswith("</svg>\n")
