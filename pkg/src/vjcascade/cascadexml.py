"""Cascade model files: traincascade-style XML and canonical JSON.

XML stumps store ``internalNodes = 0 -1 <feature> <t>`` and
``leafValues = l0 l1``; a window adds ``l0`` when the feature value is below
``t`` and ``l1`` otherwise, and a stage passes when the sum reaches
``stageThreshold``.  The in-memory model is a vote ``alpha`` per stump, so on
reading:

* ``l0 >= l1``: polarity +1, threshold ``t``, alpha ``l0 - l1``, offset ``l1``;
* ``l0 < l1``: polarity -1, threshold = the float just below ``t`` (so
  ``v > threshold`` is ``v >= t``), alpha ``l1 - l0``, offset ``l0``;

and the stage threshold becomes ``stageThreshold - sum(offsets)``.  Writing
uses zero offsets (leaves ``alpha 0`` or ``0 alpha``), so write-then-read
reproduces every field exactly.
"""

from __future__ import annotations

import json
import math
import xml.etree.ElementTree as ET
from functools import lru_cache
from importlib import resources

import numpy as np

from .boost import StrongClassifier, WeakClassifier
from .cascade import Cascade, Stage
from .errors import (MalformedJson, MalformedXml, SchemaViolation, UnsupportedFeatureType,
                     UnsupportedModelFormat, UnsupportedTreeShape)
from .haar import FeatureKind, HaarFeature
from .imagecore import Rect

JSON_FORMAT = "vjcascade-cascade"
JSON_VERSION = 1


def _num(x) -> str:
    """Shortest decimal that reads back to the same double."""
    return repr(float(x))


# --------------------------------------------------------------------------
# XML reading


def _child(el, tag, ctx):
    c = el.find(tag)
    if c is None:
        raise SchemaViolation(f"{ctx}: missing <{tag}>")
    return c


def _text(el, tag, ctx) -> str:
    return (_child(el, tag, ctx).text or "").strip()


def _int(tok: str, ctx) -> int:
    try:
        return int(tok)
    except (TypeError, ValueError):
        raise SchemaViolation(f"{ctx}: expected an integer, got {tok[:40]!r}") from None


def _float(tok: str, ctx) -> float:
    try:
        v = float(tok)
    except (TypeError, ValueError):
        raise SchemaViolation(f"{ctx}: expected a number, got {tok[:40]!r}") from None
    if not math.isfinite(v):
        raise SchemaViolation(f"{ctx}: non-finite number {tok[:40]!r}")
    return v


def _items(el):
    return el.findall("_")


def _legacy_root(root):
    for child in root:
        if child.get("type_id") == "opencv-haar-classifier" or (
                child.find("size") is not None and child.find("stages") is not None):
            return child.tag
    return None


def _parse_feature(el, idx, win_w, win_h) -> HaarFeature:
    ctx = f"feature {idx}"
    tilted = el.find("tilted")
    if tilted is not None and _int((tilted.text or "").strip(), ctx) != 0:
        raise UnsupportedFeatureType(f"{ctx}: tilted (45 degree) features are not supported")
    rects = []
    for k, r in enumerate(_items(_child(el, "rects", ctx))):
        toks = (r.text or "").split()
        if len(toks) != 5:
            raise SchemaViolation(f"{ctx} rect {k}: expected 'x y w h weight', got {len(toks)} fields")
        x, y, w, h = (_int(t, f"{ctx} rect {k}") for t in toks[:4])
        rect = Rect(x, y, w, h)
        if not rect.fits(win_w, win_h):
            raise SchemaViolation(f"{ctx} rect {k}: {tuple(rect)} outside {win_w}x{win_h} window")
        rects.append((rect, _float(toks[4], f"{ctx} rect {k}")))
    if not rects:
        raise SchemaViolation(f"{ctx}: no rects")
    f = HaarFeature(None, tuple(rects), win_w, win_h)
    if not f.is_zero_mean():
        raise SchemaViolation(f"{ctx}: weighted rect areas do not sum to zero")
    return f


def _stump_from_leaves(feature, t, l0, l1):
    if l0 >= l1:
        return WeakClassifier(feature, t, 1, l0 - l1), l1
    return WeakClassifier(feature, float(np.nextafter(t, -np.inf)), -1, l1 - l0), l0


def parse_cascade_xml(data: bytes) -> Cascade:
    """Read a new-style HAAR/BOOST cascade with stump weak classifiers."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    try:
        root = ET.fromstring(data)
    except (ET.ParseError, ValueError, LookupError, RecursionError) as exc:
        raise MalformedXml(f"not well-formed XML: {exc}") from None
    if root.tag != "opencv_storage":
        raise SchemaViolation(f"root element is <{root.tag}>, expected <opencv_storage>")
    casc = root.find("cascade")
    if casc is None:
        legacy = _legacy_root(root)
        if legacy is not None:
            raise UnsupportedModelFormat(
                f"legacy haartraining cascade <{legacy}> is not supported; "
                "convert it with a traincascade-era tool")
        raise SchemaViolation("missing <cascade>")
    ctx = "cascade"
    feature_type = _text(casc, "featureType", ctx)
    if feature_type.upper() != "HAAR":
        raise UnsupportedFeatureType(f"featureType {feature_type[:40]!r} is not supported (HAAR only)")
    stage_type = _text(casc, "stageType", ctx)
    if stage_type != "BOOST":
        raise SchemaViolation(f"stageType {stage_type[:40]!r}, expected BOOST")
    win_w = _int(_text(casc, "width", ctx), "width")
    win_h = _int(_text(casc, "height", ctx), "height")
    if win_w < 1 or win_h < 1:
        raise SchemaViolation(f"window {win_w}x{win_h} is empty")
    stage_num = _int(_text(casc, "stageNum", ctx), "stageNum")
    stage_els = _items(_child(casc, "stages", ctx))
    if stage_num != len(stage_els):
        raise SchemaViolation(f"stageNum {stage_num} but {len(stage_els)} stages present")
    feat_el = casc.find("features")
    feat_items = _items(feat_el) if feat_el is not None else []

    @lru_cache(maxsize=None)
    def feature(idx):
        return _parse_feature(feat_items[idx], idx, win_w, win_h)

    stages = []
    for si, st in enumerate(stage_els):
        sctx = f"stage {si}"
        stage_thr = _float(_text(st, "stageThreshold", sctx), f"{sctx} stageThreshold")
        weak_els = _items(_child(st, "weakClassifiers", sctx))
        if not weak_els:
            raise SchemaViolation(f"{sctx}: no weak classifiers")
        mwc = st.find("maxWeakCount")
        if mwc is not None and _int((mwc.text or "").strip(), f"{sctx} maxWeakCount") != len(weak_els):
            raise SchemaViolation(f"{sctx}: maxWeakCount disagrees with {len(weak_els)} weak classifiers")
        weak, offset = [], 0.0
        for wi, w in enumerate(weak_els):
            wctx = f"{sctx} weak {wi}"
            nodes = _text(w, "internalNodes", wctx).split()
            leaves = _text(w, "leafValues", wctx).split()
            if len(nodes) != 4 or len(leaves) != 2:
                raise UnsupportedTreeShape(
                    f"{wctx}: {len(nodes)} node fields / {len(leaves)} leaves; only stumps are supported")
            if (_int(nodes[0], wctx), _int(nodes[1], wctx)) != (0, -1):
                raise UnsupportedTreeShape(f"{wctx}: child links {nodes[0]} {nodes[1]} are not a stump")
            idx = _int(nodes[2], wctx)
            if not 0 <= idx < len(feat_items):
                raise SchemaViolation(
                    f"{wctx}: feature index {idx} out of range (table has {len(feat_items)})")
            t = _float(nodes[3], wctx)
            l0, l1 = _float(leaves[0], wctx), _float(leaves[1], wctx)
            wc, off = _stump_from_leaves(feature(idx), t, l0, l1)
            weak.append(wc)
            offset += off
        stages.append(Stage(StrongClassifier(tuple(weak), stage_thr - offset)))
    return Cascade(win_w, win_h, tuple(stages))


# --------------------------------------------------------------------------
# XML writing


def _opencv_rects(f: HaarFeature):
    """Rects in at most three entries; 2x2 checkerboards become one outer
    rect plus two weighted cells, which sums to the same integer value."""
    rects = list(f.rects)
    if len(rects) == 4:
        (tl, a), (tr, b), (bl, c), (br, d) = rects
        cell = (tl.w, tl.h)
        tiled = (all((r.w, r.h) == cell for r in (tr, bl, br))
                 and (tr.x, tr.y) == (tl.x + tl.w, tl.y) and (bl.x, bl.y) == (tl.x, tl.y + tl.h)
                 and (br.x, br.y) == (tl.x + tl.w, tl.y + tl.h))
        if tiled and a == d and b == c == -a and float(a).is_integer():
            outer = Rect(tl.x, tl.y, 2 * tl.w, 2 * tl.h)
            return [(outer, a), (tr, -2 * a), (bl, -2 * a)]
    return rects


def write_cascade_xml(c: Cascade) -> bytes:
    """Serialise ``c``; identical cascades give identical bytes."""
    feat_index: dict = {}
    features: list[HaarFeature] = []
    for si, st in enumerate(c.stages):
        if not st.classifier.weak:
            raise SchemaViolation(f"stage {si} has no weak classifiers")
        for wc in st.classifier.weak:
            key = (wc.feature.rects, wc.feature.norm)
            if key not in feat_index:
                if (wc.feature.base_w, wc.feature.base_h) != (c.base_w, c.base_h) or wc.feature.norm != 1.0:
                    raise SchemaViolation("cascade features must be at base scale")
                feat_index[key] = len(features)
                features.append(wc.feature)
    max_weak = max((len(st.classifier.weak) for st in c.stages), default=0)
    out = [
        '<?xml version="1.0"?>',
        "<opencv_storage>",
        '<cascade type_id="opencv-cascade-classifier">',
        "  <stageType>BOOST</stageType>",
        "  <featureType>HAAR</featureType>",
        f"  <height>{c.base_h}</height>",
        f"  <width>{c.base_w}</width>",
        "  <stageParams>",
        "    <boostType>DAB</boostType>",
        f"    <maxWeakCount>{max_weak}</maxWeakCount></stageParams>",
        "  <featureParams>",
        "    <maxCatCount>0</maxCatCount>",
        "    <featSize>1</featSize>",
        "    <mode>BASIC</mode></featureParams>",
        f"  <stageNum>{len(c.stages)}</stageNum>",
        "  <stages>",
    ]
    for si, st in enumerate(c.stages):
        sc = st.classifier
        out += [
            f"    <!-- stage {si} -->",
            "    <_>",
            f"      <maxWeakCount>{len(sc.weak)}</maxWeakCount>",
            f"      <stageThreshold>{_num(sc.stage_threshold)}</stageThreshold>",
            "      <weakClassifiers>",
        ]
        for wc in sc.weak:
            idx = feat_index[(wc.feature.rects, wc.feature.norm)]
            if wc.polarity == 1:
                t, l0, l1 = wc.threshold, wc.alpha, 0.0
            else:
                t, l0, l1 = float(np.nextafter(wc.threshold, np.inf)), 0.0, wc.alpha
            out += [
                "        <_>",
                "          <internalNodes>",
                f"            0 -1 {idx} {_num(t)}</internalNodes>",
                "          <leafValues>",
                f"            {_num(l0)} {_num(l1)}</leafValues></_>",
            ]
        out.append("      </weakClassifiers></_>")
    out += ["  </stages>", "  <features>"]
    for f in features:
        out += ["    <_>", "      <rects>"]
        for r, wt in _opencv_rects(f):
            out += ["        <_>", f"          {r.x} {r.y} {r.w} {r.h} {_num(wt)}</_>"]
        out += ["      </rects>", "      <tilted>0</tilted></_>"]
    out += ["  </features></cascade>", "</opencv_storage>", ""]
    return "\n".join(out).encode("utf-8")


# --------------------------------------------------------------------------
# canonical JSON


@lru_cache(maxsize=1)
def json_schema() -> dict:
    text = resources.files("vjcascade").joinpath("schema/cascade.schema.json").read_text("utf-8")
    return json.loads(text)


def _feature_obj(f: HaarFeature) -> dict:
    return {
        "kind": None if f.kind is None else FeatureKind(f.kind).value,
        "rects": [[r.x, r.y, r.w, r.h, wt] for r, wt in f.rects],
        "norm": f.norm,
    }


def to_canonical_json(c: Cascade) -> bytes:
    doc = {
        "format": JSON_FORMAT,
        "version": JSON_VERSION,
        "base_w": c.base_w,
        "base_h": c.base_h,
        "stages": [
            {
                "stage_threshold": st.classifier.stage_threshold,
                "weak": [
                    {"feature": _feature_obj(wc.feature), "threshold": wc.threshold,
                     "polarity": wc.polarity, "alpha": wc.alpha}
                    for wc in st.classifier.weak
                ],
            }
            for st in c.stages
        ],
        "provenance": c.provenance,
    }
    try:
        text = json.dumps(doc, sort_keys=True, indent=2, allow_nan=False)
    except ValueError as exc:
        raise SchemaViolation(f"cascade holds a non-finite number: {exc}") from None
    return (text + "\n").encode("utf-8")


def _reject_constant(name):
    raise MalformedJson(f"non-finite number {name} in JSON")


def from_canonical_json(data: bytes) -> Cascade:
    import jsonschema

    try:
        doc = json.loads(data, parse_constant=_reject_constant)
    except (json.JSONDecodeError, UnicodeDecodeError, RecursionError, TypeError) as exc:
        raise MalformedJson(f"invalid JSON: {exc}") from None
    try:
        jsonschema.validate(doc, json_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaViolation(f"{where}: {exc.message}") from None
    bw, bh = doc["base_w"], doc["base_h"]
    stages = []
    for si, st in enumerate(doc["stages"]):
        weak = []
        for wi, w in enumerate(st["weak"]):
            fd = w["feature"]
            rects = tuple((Rect(*r[:4]), r[4]) for r in fd["rects"])
            for r, _ in rects:
                if not r.fits(bw, bh):
                    raise SchemaViolation(
                        f"stages/{si}/weak/{wi}: rect {tuple(r)} outside {bw}x{bh} window")
            kind = None if fd["kind"] is None else FeatureKind(fd["kind"])
            f = HaarFeature(kind, rects, bw, bh, fd["norm"])
            if not f.is_zero_mean():
                raise SchemaViolation(f"stages/{si}/weak/{wi}: feature is not zero-mean")
            weak.append(WeakClassifier(f, w["threshold"], w["polarity"], w["alpha"]))
        stages.append(Stage(StrongClassifier(tuple(weak), st["stage_threshold"])))
    return Cascade(bw, bh, tuple(stages), doc["provenance"])


# --------------------------------------------------------------------------
# files


def sniff_format(data: bytes) -> str:
    head = data.lstrip()[:1]
    if head == b"<":
        return "xml"
    if head == b"{":
        return "json"
    raise UnsupportedModelFormat("model is neither XML nor JSON")


def loads_model(data: bytes) -> Cascade:
    return parse_cascade_xml(data) if sniff_format(data) == "xml" else from_canonical_json(data)


def load_model(path) -> Cascade:
    with open(path, "rb") as fh:
        return loads_model(fh.read())


def dumps_model(c: Cascade, fmt: str) -> bytes:
    if fmt == "xml":
        return write_cascade_xml(c)
    if fmt == "json":
        return to_canonical_json(c)
    raise ValueError(f"unknown model format {fmt!r}")
