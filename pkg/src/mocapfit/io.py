"""Readers and writers for model, scene, parameter, mask, flow and config files.

Text formats are line oriented. ``#`` starts a comment that runs to the end
of the line, blank lines are ignored, and floats are written with 17
significant digits so a write/read cycle reproduces every double exactly.

Model file::

    mocapfit-model v1
    rest_vertices <n> 3            then n rows "x y z"
    shape_blendshapes <M> <n> 3    then M*n rows, blendshape-major
    pose_blendshapes <Np> <n> 3    then Np*n rows
    facets <F> 3                   then F rows "i j k"
    joint_regressor <K> <n>        then K rows of n weights
    rest_pose <J> 3                then J rows

Scene file::

    mocapfit-scene v1
    size <w> <h>
    frames <1|2>
    flow <file.pfm>                two-frame scenes only
    frame <i>                      once per frame, in order
    mask <file.pgm>
    camera <f> <alpha> <beta> <gamma> <tx> <ty>    optional
    keypoints <K>                  then K rows "id u v present"
    truth <M> <J> <frames> <shared> <size>         optional, then size values

Raster paths are relative to the scene file. Masks are binary PGM (P5,
maxval 255, foreground 255). Flow is a three-channel PFM holding (u, v, 0),
rows stored bottom-up, written little-endian (negative scale).

Parameter file::

    mocapfit-params v1
    layout <M> <J> <frames> <shared>
    values <size>                  then one value per line
"""
from __future__ import annotations

import math
import os
import shlex
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .autodiff import LossWeights, ParamLayout
from .camera import CameraParams, ImageGeometry
from .errors import ConfigurationError, MocapFitError, ParseError
from .losses import FrameObservations, SceneObservations
from .mesh import BlendshapeModel

MODEL_HEADER = "mocapfit-model v1"
SCENE_HEADER = "mocapfit-scene v1"
PARAMS_HEADER = "mocapfit-params v1"
MODEL_SECTIONS = ("rest_vertices", "shape_blendshapes", "pose_blendshapes",
                  "facets", "joint_regressor", "rest_pose")
MAX_DIM = 10_000_000


def fmt(x):
    return "%.17g" % x


# -- tokenizing --------------------------------------------------------------------

class _Lines:
    """Significant lines of a text file with their 1-based line numbers."""

    def __init__(self, text, path=None):
        self.path = path
        self.items = []
        for no, raw in enumerate(text.split("\n"), 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                self.items.append((no, raw, line.split()))
        self.pos = 0

    def error(self, message, line=None, column=None):
        return ParseError(message, line, column, self.path)

    def at_end(self):
        return self.pos >= len(self.items)

    def peek(self):
        return None if self.at_end() else self.items[self.pos]

    def next(self, what):
        if self.at_end():
            last = self.items[-1][0] if self.items else 1
            raise self.error(f"unexpected end of file, expected {what}", last)
        item = self.items[self.pos]
        self.pos += 1
        return item

    def keyword(self, name, nargs=None):
        no, raw, toks = self.next(f"'{name}'")
        if toks[0] != name:
            raise self.error(f"expected '{name}', found '{toks[0]}'", no, _column(raw, toks[0]))
        if nargs is not None and len(toks) - 1 != nargs:
            raise self.error(f"'{name}' takes {nargs} values, got {len(toks) - 1}", no)
        return no, raw, toks[1:]


def _column(raw, token):
    i = raw.find(token)
    return i + 1 if i >= 0 else None


def _to_int(lines, no, raw, tok, lo=0):
    try:
        v = int(tok)
    except ValueError:
        raise lines.error(f"expected an integer, found '{tok}'", no, _column(raw, tok)) from None
    if v < lo or v > MAX_DIM:
        raise lines.error(f"integer {v} out of range", no, _column(raw, tok))
    return v


def _to_float(lines, no, raw, tok):
    try:
        v = float(tok)
    except ValueError:
        raise lines.error(f"expected a number, found '{tok}'", no, _column(raw, tok)) from None
    if not math.isfinite(v):
        raise lines.error(f"non-finite value '{tok}'", no, _column(raw, tok))
    return v


def _header(lines, expected):
    no, raw, toks = lines.next(f"header '{expected}'")
    if " ".join(toks) != expected:
        raise lines.error(f"bad header, expected '{expected}'", no, 1)


def _rows(lines, count, width, conv, what):
    out = []
    for _ in range(count):
        no, raw, toks = lines.next(f"{what} row")
        if len(toks) != width:
            raise lines.error(f"{what} row needs {width} values, got {len(toks)}", no)
        out.append([conv(lines, no, raw, t) for t in toks])
    return out


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror or exc}", path=path) from None


def _read_text(path):
    data = _read_bytes(path)
    try:
        return data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise ParseError(f"non-ASCII byte at offset {exc.start}", path=path) from None


# -- model -------------------------------------------------------------------------

def format_model(model):
    n, M, Np = model.n_vertices, model.n_shape, model.pose_blendshapes.shape[0]
    out = [MODEL_HEADER, f"rest_vertices {n} 3"]
    out += [" ".join(fmt(v) for v in row) for row in model.rest_vertices]
    out.append(f"shape_blendshapes {M} {n} 3")
    out += [" ".join(fmt(v) for v in row) for row in model.shape_blendshapes.reshape(-1, 3)]
    out.append(f"pose_blendshapes {Np} {n} 3")
    out += [" ".join(fmt(v) for v in row) for row in model.pose_blendshapes.reshape(-1, 3)]
    out.append(f"facets {model.n_facets} 3")
    out += [" ".join(str(int(v)) for v in row) for row in model.facets]
    out.append(f"joint_regressor {model.n_keypoints} {n}")
    out += [" ".join(fmt(v) for v in row) for row in model.joint_regressor]
    out.append(f"rest_pose {model.joint_count} 3")
    out += [" ".join(fmt(v) for v in row) for row in model.rest_pose]
    return "\n".join(out) + "\n"


def parse_model(text, path=None):
    lines = _Lines(text, path)
    _header(lines, MODEL_HEADER)
    arrays = {}
    dims = {}
    for name in MODEL_SECTIONS:
        if lines.at_end():
            raise lines.error(f"missing section '{name}'", lines.items[-1][0] if lines.items else 1)
        no, raw, args = lines.keyword(name)
        if name in ("rest_vertices", "facets", "rest_pose"):
            if len(args) != 2 or args[1] != "3":
                raise lines.error(f"'{name}' header must be '<count> 3'", no)
            count = _to_int(lines, no, raw, args[0])
            conv = _to_int if name == "facets" else _to_float
            arrays[name] = np.array(_rows(lines, count, 3, conv, name), dtype=int if name == "facets" else float).reshape(count, 3)
            dims[name] = count
        elif name in ("shape_blendshapes", "pose_blendshapes"):
            if len(args) != 3 or args[2] != "3":
                raise lines.error(f"'{name}' header must be '<count> <n> 3'", no)
            count = _to_int(lines, no, raw, args[0])
            nv = _to_int(lines, no, raw, args[1])
            if nv != dims["rest_vertices"]:
                raise lines.error(f"'{name}' declares n={nv}, rest_vertices has {dims['rest_vertices']}", no)
            if count * nv > MAX_DIM:
                raise lines.error(f"'{name}' is too large", no)
            rows = _rows(lines, count * nv, 3, _to_float, name)
            arrays[name] = np.array(rows, dtype=float).reshape(count, nv, 3)
        else:
            if len(args) != 2:
                raise lines.error("'joint_regressor' header must be '<K> <n>'", no)
            K = _to_int(lines, no, raw, args[0])
            nv = _to_int(lines, no, raw, args[1])
            if nv != dims["rest_vertices"]:
                raise lines.error(f"joint_regressor declares n={nv}, rest_vertices has {dims['rest_vertices']}", no)
            arrays[name] = np.array(_rows(lines, K, nv, _to_float, name), dtype=float).reshape(K, nv)
    if not lines.at_end():
        no, raw, toks = lines.peek()
        raise lines.error(f"unexpected content '{toks[0]}' after last section", no, 1)
    try:
        return BlendshapeModel(**arrays)
    except (MocapFitError, ValueError) as exc:
        raise ParseError(f"invalid model: {exc}", path=path) from None


def write_model(path, model):
    Path(path).write_bytes(format_model(model).encode("ascii"))


def read_model(path):
    return parse_model(_read_text(path), path)


# -- parameter vectors ---------------------------------------------------------------

def format_params(layout, pv):
    pv = np.asarray(pv, dtype=float)
    if pv.shape != (layout.size,):
        raise ConfigurationError(f"parameter vector has {pv.size} entries, layout needs {layout.size}")
    out = [PARAMS_HEADER,
           f"layout {layout.n_shape} {layout.n_joints} {layout.n_frames} {int(layout.shared_shape)}",
           f"values {layout.size}"]
    out += [fmt(v) for v in pv]
    return "\n".join(out) + "\n"


def _parse_layout(lines, no, raw, toks):
    M, J, F, shared = (_to_int(lines, no, raw, t) for t in toks)
    if shared not in (0, 1) or F < 1:
        raise lines.error("layout needs frames >= 1 and shared in {0, 1}", no)
    try:
        return ParamLayout(M, J, F, bool(shared))
    except (MocapFitError, ValueError) as exc:
        raise lines.error(f"bad layout: {exc}", no) from None


def _parse_values(lines, count, what):
    return np.array([r[0] for r in _rows(lines, count, 1, _to_float, what)], dtype=float)


def parse_params(text, path=None):
    lines = _Lines(text, path)
    _header(lines, PARAMS_HEADER)
    no, raw, toks = lines.keyword("layout", 4)
    layout = _parse_layout(lines, no, raw, toks)
    no, raw, toks = lines.keyword("values", 1)
    count = _to_int(lines, no, raw, toks[0])
    if count != layout.size:
        raise lines.error(f"values declares {count}, layout needs {layout.size}", no)
    pv = _parse_values(lines, count, "value")
    if not lines.at_end():
        raise lines.error("unexpected trailing content", lines.peek()[0])
    return layout, pv


def write_params(path, layout, pv):
    Path(path).write_bytes(format_params(layout, pv).encode("ascii"))


def read_params(path):
    return parse_params(_read_text(path), path)


# -- rasters ------------------------------------------------------------------------

def format_pgm(mask):
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + (mask.astype(np.uint8) * 255).tobytes()


def _pnm_tokens(data, count, path):
    """First ``count`` whitespace-separated header tokens (``#`` comments skipped)
    and the offset just past the single whitespace byte after the last one."""
    toks, i, n = [], 0, len(data)
    while len(toks) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        if i >= n:
            raise ParseError("truncated header", path=path)
        j = i
        while j < n and not data[j:j + 1].isspace():
            j += 1
        toks.append(data[i:j])
        i = j
    if i >= n or not data[i:i + 1].isspace():
        raise ParseError("header must end with one whitespace byte", path=path)
    return toks, i + 1


def _header_int(tok, what, path, lo=1, hi=MAX_DIM):
    try:
        v = int(tok.decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        raise ParseError(f"bad {what} {tok[:20]!r}", path=path) from None
    if not lo <= v <= hi:
        raise ParseError(f"{what} {v} out of range", path=path)
    return v


def parse_pgm(data, path=None):
    """Binary PGM to a boolean mask; a pixel is foreground when above maxval / 2."""
    toks, off = _pnm_tokens(data, 4, path)
    if toks[0] != b"P5":
        raise ParseError("not a binary PGM (magic P5)", path=path)
    w = _header_int(toks[1], "width", path)
    h = _header_int(toks[2], "height", path)
    maxval = _header_int(toks[3], "maxval", path, 1, 255)
    body = data[off:]
    if len(body) != w * h:
        raise ParseError(f"expected {w * h} pixel bytes, found {len(body)}", path=path)
    pix = np.frombuffer(body, dtype=np.uint8).reshape(h, w)
    if np.any(pix > maxval):
        raise ParseError("pixel value above maxval", path=path)
    return pix > maxval / 2.0


def write_pgm(path, mask):
    Path(path).write_bytes(format_pgm(mask))


def read_pgm(path):
    return parse_pgm(_read_bytes(path), path)


def format_pfm(flow, little_endian=True):
    flow = np.asarray(flow, dtype=float)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ConfigurationError("flow must be (h, w, 2)")
    if not np.all(np.isfinite(flow)):
        raise ConfigurationError("flow contains non-finite values")
    h, w, _ = flow.shape
    rgb = np.zeros((h, w, 3), dtype=np.float32)
    rgb[..., :2] = flow
    dtype = "<f4" if little_endian else ">f4"
    scale = "-1" if little_endian else "1"
    return f"PF\n{w} {h}\n{scale}\n".encode("ascii") + rgb[::-1].astype(dtype).tobytes()


def parse_pfm(data, path=None):
    """PFM to an (h, w, 2) flow array (u, v); accepts PF and both byte orders."""
    toks, off = _pnm_tokens(data, 4, path)
    if toks[0] != b"PF":
        raise ParseError("flow PFM must be three-channel (magic PF)", path=path)
    w = _header_int(toks[1], "width", path)
    h = _header_int(toks[2], "height", path)
    try:
        scale = float(toks[3].decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        raise ParseError(f"bad scale {toks[3][:20]!r}", path=path) from None
    if not math.isfinite(scale) or scale == 0:
        raise ParseError("scale must be finite and nonzero", path=path)
    body = data[off:]
    if len(body) != 12 * w * h:
        raise ParseError(f"expected {12 * w * h} data bytes, found {len(body)}", path=path)
    dtype = "<f4" if scale < 0 else ">f4"
    rgb = np.frombuffer(body, dtype=dtype).reshape(h, w, 3)[::-1]
    if not np.all(np.isfinite(rgb)):
        raise ParseError("non-finite flow value", path=path)
    return rgb[..., :2].astype(float)


def write_pfm(path, flow, little_endian=True):
    Path(path).write_bytes(format_pfm(flow, little_endian))


def read_pfm(path):
    return parse_pfm(_read_bytes(path), path)


# -- scenes -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SceneFile:
    version: str
    obs: SceneObservations
    mask_paths: tuple
    flow_path: str | None = None
    cameras: tuple = ()
    truth_layout: ParamLayout | None = None
    truth: np.ndarray | None = None


def format_scene(scene):
    obs = scene.obs
    out = [SCENE_HEADER, f"size {obs.geom.width} {obs.geom.height}", f"frames {len(obs.frames)}"]
    if scene.flow_path is not None:
        out.append(f"flow {scene.flow_path}")
    cams = scene.cameras or (None,) * len(obs.frames)
    for i, (fr, mpath, cam) in enumerate(zip(obs.frames, scene.mask_paths, cams)):
        out.append(f"frame {i}")
        out.append(f"mask {mpath}")
        if cam is not None:
            out.append("camera " + " ".join(fmt(v) for v in cam.as_array()))
        out.append(f"keypoints {len(fr.keypoints)}")
        for k, (uv, on) in enumerate(zip(fr.keypoints, fr.present)):
            out.append(f"{k} {fmt(uv[0])} {fmt(uv[1])} {int(bool(on))}")
    if scene.truth is not None:
        lay = scene.truth_layout
        out.append(f"truth {lay.n_shape} {lay.n_joints} {lay.n_frames} {int(lay.shared_shape)} {lay.size}")
        out += [fmt(v) for v in scene.truth]
    return "\n".join(out) + "\n"


def _check_name(lines, no, name):
    if os.path.isabs(name) or ".." in Path(name).parts:
        raise lines.error(f"raster path must be relative without '..': {name}", no)
    return name


def parse_scene(text, path=None, load_rasters=True):
    lines = _Lines(text, path)
    base = Path(path).parent if path is not None else Path(".")
    _header(lines, SCENE_HEADER)
    no, raw, toks = lines.keyword("size", 2)
    w, h = (_to_int(lines, no, raw, t, lo=2) for t in toks)
    geom = ImageGeometry(w, h)
    no, raw, toks = lines.keyword("frames", 1)
    n_frames = _to_int(lines, no, raw, toks[0], lo=1)
    if n_frames not in (1, 2):
        raise lines.error("frames must be 1 or 2", no)
    flow_path = None
    if n_frames == 2:
        no, raw, toks = lines.keyword("flow", 1)
        flow_path = _check_name(lines, no, toks[0])
    frames, masks, cams = [], [], []
    for i in range(n_frames):
        no, raw, toks = lines.keyword("frame", 1)
        if _to_int(lines, no, raw, toks[0]) != i:
            raise lines.error(f"expected frame {i}", no)
        no, raw, toks = lines.keyword("mask", 1)
        masks.append(_check_name(lines, no, toks[0]))
        cam = None
        item = lines.peek()
        if item is not None and item[2][0] == "camera":
            no, raw, toks = lines.keyword("camera", 6)
            vals = [_to_float(lines, no, raw, t) for t in toks]
            try:
                cam = CameraParams.from_array(vals)
            except (MocapFitError, ValueError) as exc:
                raise lines.error(f"bad camera: {exc}", no) from None
        cams.append(cam)
        no, raw, toks = lines.keyword("keypoints", 1)
        K = _to_int(lines, no, raw, toks[0], lo=1)
        kp = np.empty((K, 2))
        present = np.empty(K, dtype=bool)
        for k in range(K):
            no, raw, toks = lines.next("keypoint row")
            if len(toks) != 4:
                raise lines.error("keypoint row must be 'id u v present'", no)
            if _to_int(lines, no, raw, toks[0]) != k:
                raise lines.error(f"expected keypoint id {k}", no, 1)
            kp[k] = [_to_float(lines, no, raw, toks[1]), _to_float(lines, no, raw, toks[2])]
            flag = _to_int(lines, no, raw, toks[3])
            if flag not in (0, 1):
                raise lines.error("present flag must be 0 or 1", no, _column(raw, toks[3]))
            present[k] = bool(flag)
        frames.append((kp, present))
    truth_layout, truth = None, None
    if not lines.at_end():
        no, raw, toks = lines.keyword("truth", 5)
        truth_layout = _parse_layout(lines, no, raw, toks[:4])
        count = _to_int(lines, no, raw, toks[4])
        if count != truth_layout.size or truth_layout.n_frames != n_frames:
            raise lines.error("truth block does not match its layout or the frame count", no)
        truth = _parse_values(lines, count, "truth value")
    if not lines.at_end():
        raise lines.error("unexpected trailing content", lines.peek()[0])

    seg = []
    for mpath in masks:
        if load_rasters:
            m = read_pgm(base / mpath)
            if m.shape != (h, w):
                raise ParseError(f"mask {mpath} is {m.shape[1]}x{m.shape[0]}, scene declares {w}x{h}", path=path)
        else:
            m = np.zeros((h, w), dtype=bool)
        seg.append(m)
    flow = None
    if flow_path is not None:
        if load_rasters:
            flow = read_pfm(base / flow_path)
            if flow.shape[:2] != (h, w):
                raise ParseError(f"flow {flow_path} is {flow.shape[1]}x{flow.shape[0]}, scene declares {w}x{h}", path=path)
        else:
            flow = np.zeros((h, w, 2))
    try:
        obs = SceneObservations(geom, tuple(FrameObservations(kp, pr, s) for (kp, pr), s in zip(frames, seg)), flow)
    except (MocapFitError, ValueError) as exc:
        raise ParseError(f"invalid observations: {exc}", path=path) from None
    return SceneFile(SCENE_HEADER, obs, tuple(masks), flow_path, tuple(cams), truth_layout, truth)


def write_scene(path, scene):
    """Write the scene text file and its rasters (next to it)."""
    path = Path(path)
    base = path.parent
    for fr, mpath in zip(scene.obs.frames, scene.mask_paths):
        write_pgm(base / mpath, fr.segmentation)
    if scene.flow_path is not None:
        write_pfm(base / scene.flow_path, scene.obs.flow)
    path.write_bytes(format_scene(scene).encode("ascii"))


def read_scene(path, load_rasters=True):
    return parse_scene(_read_text(path), path, load_rasters)


def scene_file_for(obs, stem="scene", cameras=(), truth_layout=None, truth=None):
    """A ``SceneFile`` with conventional raster names ``<stem>_mask<i>.pgm`` / ``<stem>_flow.pfm``."""
    masks = tuple(f"{stem}_mask{i}.pgm" for i in range(len(obs.frames)))
    flow = f"{stem}_flow.pfm" if obs.flow is not None else None
    return SceneFile(SCENE_HEADER, obs, masks, flow, tuple(cameras), truth_layout, truth)


# -- configuration ------------------------------------------------------------------

def _coerce(value, default, key):
    if isinstance(value, str):
        text = value.strip()
    else:
        return value
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            v = float(text)
            if not math.isfinite(v):
                raise ValueError(text)
            return v
        if isinstance(default, tuple):
            parts = text.replace("x", ",").split(",")
            return tuple(type(d)(p) for d, p in zip(default, parts)) if len(parts) == len(default) else _bad(key, text)
    except ValueError:
        raise ConfigurationError(f"bad value for '{key}': {text!r}") from None
    return text


def _bad(key, text):
    raise ConfigurationError(f"bad value for '{key}': {text!r}")


def parse_flags(argv):
    """``--key value`` / ``--key=value`` pairs into an ordered list of (key, value)."""
    out = []
    i = 0
    argv = list(argv)
    while i < len(argv):
        tok = argv[i]
        if not tok.startswith("--") or tok == "--":
            raise ConfigurationError(f"expected a --flag, found {tok!r}")
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
        else:
            if i + 1 >= len(argv):
                raise ConfigurationError(f"flag {tok} needs a value")
            key, value = tok[2:], argv[i + 1]
            i += 1
        out.append((key.replace("-", "_"), value))
        i += 1
    return out


def parse_config_text(text, path=None):
    """``key = value`` lines (``#`` comments) into an ordered list of pairs."""
    out = []
    for no, raw in enumerate(text.split("\n"), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", no, 1, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError("empty key", no, 1, path)
        out.append((key.replace("-", "_"), value))
    return out


def _fit_keys():
    from .fitting import FitConfig
    base = {f.name: getattr(FitConfig(), f.name) for f in fields(FitConfig) if f.name != "weights"}
    w = LossWeights()
    base.update({"losses": "kpt,motion,seg", "lambda_kpt": w.keypoint, "lambda_motion": w.motion,
                 "lambda_seg": w.seg, "seg_mode": w.seg_mode, "keypoint_mean": w.keypoint_mean,
                 "motion_through_sample": w.motion_through_sample})
    return base


def _scene_keys():
    from .scenegen import SceneSpec
    return {f.name: getattr(SceneSpec(), f.name) for f in fields(SceneSpec)}


def _merge(pairs, defaults, source):
    out = {}
    for key, value in pairs:
        if key not in defaults:
            valid = ", ".join(sorted(defaults))
            raise ConfigurationError(f"unknown {source} key '{key}'; valid keys: {valid}")
        if key in out and source == "flag" and out[key] != value:
            warnings.warn(f"flag --{key} given more than once; using the last value {value!r}", stacklevel=3)
        out[key] = value
    return out


def load_config(flags=(), path=None, kind="fit"):
    """Effective ``FitConfig`` or ``SceneSpec`` from defaults, a file, then flags.

    ``flags`` is an argv-style list or a list of ``(key, value)`` pairs. Flags
    override file values; a flag repeated with different values keeps the last
    occurrence and emits a warning. Unknown keys raise ``ConfigurationError``.
    """
    if kind not in ("fit", "scene"):
        raise ConfigurationError("kind must be 'fit' or 'scene'")
    defaults = _fit_keys() if kind == "fit" else _scene_keys()
    merged = {}
    if path is not None:
        merged.update(_merge(parse_config_text(_read_text(path), path), defaults, "config file"))
    pairs = flags if (flags and not isinstance(flags[0], str)) else parse_flags(flags)
    merged.update(_merge(pairs, defaults, "flag"))
    values = {k: _coerce(v, defaults[k], k) for k, v in merged.items()}
    if kind == "scene":
        from .scenegen import SceneSpec
        return SceneSpec(**values)
    from .fitting import FitConfig
    names = values.pop("losses", None)
    base = LossWeights.from_names(names) if names is not None else LossWeights()
    wkw = {}
    for key, attr in (("lambda_kpt", "keypoint"), ("lambda_motion", "motion"), ("lambda_seg", "seg")):
        if key in values:
            wkw[attr] = values.pop(key)
    for key in ("seg_mode", "keypoint_mean", "motion_through_sample"):
        if key in values:
            wkw[key] = values.pop(key)
    weights = replace(base, **wkw)
    return FitConfig(weights=weights, **values)


def format_config(cfg):
    """One ``key = value`` line per effective setting, sorted by key."""
    from .fitting import FitConfig
    items = {}
    if isinstance(cfg, FitConfig):
        for f in fields(cfg):
            if f.name != "weights":
                items[f.name] = getattr(cfg, f.name)
        w = cfg.weights
        items.update({"lambda_kpt": w.keypoint, "lambda_motion": w.motion, "lambda_seg": w.seg,
                      "seg_mode": w.seg_mode, "keypoint_mean": w.keypoint_mean,
                      "motion_through_sample": w.motion_through_sample})
    else:
        items = {f.name: getattr(cfg, f.name) for f in fields(cfg)}

    def show(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return fmt(v)
        if isinstance(v, tuple):
            return ",".join(show(x) for x in v)
        return str(v)
    return "".join(f"{k} = {show(items[k])}\n" for k in sorted(items))


# -- fit reports --------------------------------------------------------------------

def format_report(report, layout, config_text=""):
    """Fit report text.

    Lines: header, ``stopped``, ``wall_time``, ``iterations``, then ``config``
    followed by the effective settings indented by two spaces, then
    ``columns ...`` and one row per logged iteration, then the final
    parameters in the parameter-file format.
    """
    out = ["mocapfit-report v1", f"stopped {report.stopped}", f"wall_time {fmt(report.wall_time)}",
           f"iterations {len(report.losses) - 1}", "config"]
    out += ["  " + line for line in config_text.splitlines()]
    out.append("columns iter loss surface_mm per_joint_mm reconstruction_mm")
    for it, m in report.metrics:
        out.append(f"{it} {fmt(report.losses[it])} {fmt(m['surface'])} {fmt(m['per_joint'])} {fmt(m['reconstruction'])}")
    if not report.metrics:
        out += [f"{it} {fmt(v)} nan nan nan" for it, v in enumerate(report.losses)]
    out.append(format_params(layout, report.params).rstrip("\n"))
    return "\n".join(out) + "\n"


def shell_join(argv):
    return " ".join(shlex.quote(a) for a in argv)
