"""Command-line front end: analyze-array, design, render, evaluate, scene-gen.

Every command reads one JSON config (``--config``) whose fields can be
overridden by flags. ``AAMAGLS_OUTPUT_DIR`` and ``AAMAGLS_THREADS`` are the
only environment overrides. Exit codes: 0 success, 2 config error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import struct
import sys
from dataclasses import asdict, dataclass, field, fields

CONFIG_SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
GEOMETRY_PRESETS = ("wearable5", "wearable5_caption", "sphere32")
PIPELINES = ("hoa_hrtf", "foa_hrtf", "foa_magls", "asm_magls", "asm_aamagls")


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class JobConfig:
    """Parameters shared by all subcommands (field list in the README)."""

    schema_version: int = CONFIG_SCHEMA_VERSION
    output_dir: str = "out"
    design_dir: str | None = None
    geometry: str = "wearable5"
    hrtf: str = "analytic_sphere"
    grid_points: int = 2702
    head_radius: float = 0.0875
    scene: str | None = None
    room_preset: str | None = "listening_room"
    room: dict | None = None
    source_audio: str | None = None
    pipelines: list = field(default_factory=lambda: list(PIPELINES))
    stimuli: str = "listening_test"
    order: int = 1
    snr_ratio: float = 1e3
    f_min: float = 800.0
    f_max: float = 1300.0
    rotations_deg: list = field(default_factory=lambda: [0.0, 30.0, 60.0])
    head_rotation_deg: float = 60.0
    fs: float = 48000.0
    nfft: int = 1024
    svd_rel_tol: float = 1e-3
    phase_init: str = "carry"
    seed: int = 0
    noise_variance: float = 0.0
    mic_wavs: bool = False

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if d.get("schema_version", CONFIG_SCHEMA_VERSION) != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {d['schema_version']}")
        return cls(**d)

    def validate(self, needs=()):
        bad = [p for p in self.pipelines if p not in PIPELINES]
        if bad:
            raise ConfigError(f"unknown pipelines {bad}; choose from {list(PIPELINES)}")
        if self.order < 0:
            raise ConfigError("order must be >= 0")
        if self.snr_ratio <= 0:
            raise ConfigError("snr_ratio must be > 0")
        if not 0 < self.f_min < self.f_max < self.fs / 2:
            raise ConfigError("need 0 < f_min < f_max < fs/2")
        if self.nfft < 2 or self.nfft % 2:
            raise ConfigError("nfft must be an even integer")
        if not 0 < self.svd_rel_tol < 1:
            raise ConfigError("svd_rel_tol must lie in (0, 1)")
        if self.phase_init not in ("carry", "target"):
            raise ConfigError("phase_init must be 'carry' or 'target'")
        if self.stimuli not in ("listening_test", "grid"):
            raise ConfigError("stimuli must be 'listening_test' or 'grid'")
        if self.noise_variance < 0:
            raise ConfigError("noise_variance must be >= 0")
        from .sh import supported_lebedev_sizes
        if self.grid_points not in supported_lebedev_sizes():
            raise ConfigError(f"grid_points {self.grid_points} is not a Lebedev size; "
                              f"choose one of {supported_lebedev_sizes()}")
        if self.geometry not in GEOMETRY_PRESETS and not os.path.isfile(self.geometry):
            raise ConfigError(f"geometry file not found: {self.geometry}")
        if self.hrtf != "analytic_sphere" and not os.path.isfile(
                os.path.join(self.hrtf, "manifest.json")):
            raise ConfigError(f"HRTF directory not found: {self.hrtf}")
        for label in ("scene", "source_audio"):
            path = getattr(self, label)
            if path is not None and not os.path.isfile(path):
                raise ConfigError(f"{label} file not found: {path}")
        if "room" in needs and self.scene is None and self.room is None \
                and self.room_preset is None:
            raise ConfigError("a scene file, room or room_preset is required")

    @property
    def resolved_design_dir(self):
        return self.design_dir or os.path.join(self.output_dir, "design")


# --- helpers -----------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _tree_hash(path):
    if os.path.isdir(path):
        h = hashlib.sha256()
        for name in sorted(os.listdir(path)):
            full = os.path.join(path, name)
            if os.path.isfile(full):
                h.update(name.encode())
                h.update(_sha256(full).encode())
        return h.hexdigest()
    return _sha256(path)


def _write_manifest(out_dir, command, cfg, inputs, outputs, extra=None):
    man = {
        "command": command,
        "config_schema_version": CONFIG_SCHEMA_VERSION,
        "parameters": asdict(cfg),
        "inputs": inputs,
        "outputs": {os.path.basename(p): _sha256(p) for p in sorted(outputs)},
    }
    if extra:
        man.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=str)


def _input_hashes(cfg):
    out = {}
    if cfg.geometry not in GEOMETRY_PRESETS:
        out["geometry"] = _sha256(cfg.geometry)
    if cfg.hrtf != "analytic_sphere":
        out["hrtf"] = _tree_hash(cfg.hrtf)
    for label in ("scene", "source_audio"):
        if getattr(cfg, label):
            out[label] = _sha256(getattr(cfg, label))
    return out


def _load_geometry(cfg):
    from . import array_encoding as ae
    presets = {"wearable5": ae.default_wearable_geometry,
               "wearable5_caption": ae.caption_wearable_geometry,
               "sphere32": ae.spherical_32_geometry}
    if cfg.geometry in presets:
        return presets[cfg.geometry]()
    try:
        return ae.ArrayGeometry.from_json(cfg.geometry)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"invalid geometry file {cfg.geometry}: {exc}") from exc


def _load_hrtf(cfg):
    from . import array_encoding as ae
    from . import hrtf, sh
    if cfg.hrtf == "analytic_sphere":
        try:
            grid = sh.lebedev_grid(cfg.grid_points)
        except sh.UnsupportedGridError as exc:
            raise ConfigError(str(exc)) from exc
        return hrtf.analytic_sphere_hrtf(grid, ae.FrequencyGrid(cfg.fs, cfg.nfft),
                                         cfg.head_radius)
    try:
        h = hrtf.HrtfSet.load(cfg.hrtf)
    except (KeyError, ValueError, OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read HRTF set {cfg.hrtf}: {exc}") from exc
    if (h.freqs.sample_rate, h.freqs.nfft) != (cfg.fs, cfg.nfft):
        raise ConfigError(f"HRTF set has fs={h.freqs.sample_rate}, nfft={h.freqs.nfft}; "
                          f"config says fs={cfg.fs}, nfft={cfg.nfft}")
    return h


def _fade(cfg):
    from .hrtf import CrossfadeSpec
    return CrossfadeSpec(cfg.f_min, cfg.f_max)


def _rot_tag(deg):
    return f"rot{float(deg):g}"


def _read_source(cfg):
    import numpy as np
    from .renderer import read_wav
    if cfg.source_audio is None:
        return np.ones(1)
    x, fs = read_wav(cfg.source_audio)
    if fs != cfg.fs:
        raise DataError(f"source audio is {fs} Hz, config expects {cfg.fs:g} Hz")
    if x.ndim > 1:
        x = x.mean(axis=1)
    return x


def _room(cfg):
    from .scene import RoomSpec, room_preset
    if cfg.room is not None:
        try:
            return RoomSpec.from_dict(cfg.room)
        except KeyError as exc:
            raise ConfigError(f"room is missing field {exc}") from exc
    try:
        return room_preset(cfg.room_preset)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc


# --- commands ----------------------------------------------------------------

def cmd_analyze_array(cfg):
    import numpy as np
    from . import array_encoding as ae
    from . import evaluation as ev
    from . import sh
    out = os.path.join(cfg.output_dir, "analyze")
    os.makedirs(out, exist_ok=True)
    geom = _load_geometry(cfg)
    grid = sh.lebedev_grid(cfg.grid_points)
    f = ae.FrequencyGrid(cfg.fs, cfg.nfft).freqs
    V = ae.steering_matrices(geom, grid, f)
    null = ev.null_space_report(V, grid, max(2, cfg.order), f, cfg.svd_rel_tol)
    filt = ae.asm_filter(V, grid, cfg.order, cfg.snr_ratio, freqs=f)
    mag = ev.magnitude_metrics(filt, V, grid)
    files = []
    for rep, stem in ((null, "null_space"), (mag, "magnitude")):
        for ext in ("csv", "json"):
            p = os.path.join(out, f"{stem}.{ext}")
            getattr(rep, f"to_{ext}")(p)
            files.append(p)
    counts = null.channel_count()
    _write_manifest(out, "analyze-array", cfg, _input_hashes(cfg), files,
                    {"max_encodable_channels": int(counts.max()), "M": geom.M,
                     "geometry_name": geom.name, "grid": grid.name,
                     "threshold_db": null.threshold})
    print(f"analyze-array: {geom.name}, M={geom.M}, up to {int(np.max(counts))} "
          f"channels below {null.threshold:g} dB -> {out}")


def cmd_design(cfg):
    import numpy as np
    from . import pipelines as pl
    out = cfg.resolved_design_dir
    os.makedirs(out, exist_ok=True)
    geom = _load_geometry(cfg)
    h = _load_hrtf(cfg)
    fade = _fade(cfg)
    rots = [(np.deg2rad(r), 0.0) for r in cfg.rotations_deg]
    d = pl.design(h, geom, cfg.order, cfg.snr_ratio, fade, rots, phase_init=cfg.phase_init)
    files = []

    def save(obj, name):
        p = os.path.join(out, name)
        obj.save(p)
        files.append(p)

    save(d.filt, "encoder.bin")
    save(d.ls, "ls.bin")
    save(d.ls_hoa, "ls_hoa.bin")
    save(d.magls_raw, "magls.bin")
    save(d.magls, "magls_crossfaded.bin")
    nonconv = {"magls": _nonconverged(d.magls_raw)}
    for deg, r in zip(cfg.rotations_deg, rots):
        key = pl._rot_key(r)
        save(d.aa_raw[key], f"aa_magls_{_rot_tag(deg)}.bin")
        save(d.aa[key], f"aa_magls_crossfaded_{_rot_tag(deg)}.bin")
        nonconv[f"aa_magls_{_rot_tag(deg)}"] = _nonconverged(d.aa_raw[key])
    _write_manifest(out, "design", cfg, _input_hashes(cfg), files,
                    {"crossfade_hz": {"f_min": fade.f_min, "f_max": fade.f_max},
                     "encoder_channels": int(d.filt.coeffs.shape[2]),
                     "nonconverged_bins": nonconv})
    print(f"design: order {cfg.order}, {d.filt.coeffs.shape[2]} channels, "
          f"{len(rots)} AA-MagLS rotations -> {out}")


def _nonconverged(h_sh):
    import numpy as np
    return {ear: np.flatnonzero(~np.asarray(c, dtype=bool)).tolist()
            for ear, c in sorted(h_sh.converged.items())}


def _load_design(cfg, h, geom, rotations_deg):
    import numpy as np
    from . import array_encoding as ae
    from . import pipelines as pl
    from .hrtf import HrtfSh
    src = cfg.resolved_design_dir

    def load(cls, name):
        p = os.path.join(src, name)
        if not os.path.isfile(p):
            raise DataError(f"missing design artifact {p}; run 'design' first")
        try:
            return cls.load(p)
        except (KeyError, ValueError, struct.error, json.JSONDecodeError) as exc:
            raise DataError(f"corrupt design artifact {p}: {exc}") from exc

    filt = load(ae.EncodingFilter, "encoder.bin")
    if filt.coeffs.shape[0] != h.freqs.n_bins:
        raise DataError("design artifacts do not match the HRTF frequency grid")
    if filt.M != geom.M:
        raise DataError("encoder microphone count does not match the geometry")
    V = ae.steering_matrices(geom, h.grid, h.freqs.freqs)
    d = pl.Design(h, geom, filt, V, load(HrtfSh, "ls_hoa.bin"), load(HrtfSh, "ls.bin"),
                  load(HrtfSh, "magls_crossfaded.bin"), _fade(cfg))
    for deg in rotations_deg:
        key = pl._rot_key((np.deg2rad(deg), 0.0))
        d.aa[key] = load(HrtfSh, f"aa_magls_crossfaded_{_rot_tag(deg)}.bin")
    return d


def cmd_render(cfg):
    import numpy as np
    from . import pipelines as pl
    from .renderer import StereoAudio, write_wav
    from .scene import PlaneWaveScene, image_source_scene
    out = os.path.join(cfg.output_dir, "render")
    geom = _load_geometry(cfg)
    h = _load_hrtf(cfg)
    source = _read_source(cfg)
    files, info = [], {}
    if cfg.stimuli == "listening_test":
        room = _room(cfg)
        d = _load_design(cfg, h, geom, [0.0, cfg.head_rotation_deg])
        stimuli, gain = pl.listening_test_stimuli(d, room, source, cfg.head_rotation_deg)
    else:
        rots = cfg.rotations_deg
        d = _load_design(cfg, h, geom, rots if "asm_aamagls" in cfg.pipelines else [])
        scene = (PlaneWaveScene.from_json(cfg.scene) if cfg.scene
                 else image_source_scene(_room(cfg), fs=cfg.fs))
        raw = {}
        for m in cfg.pipelines:
            for deg in rots:
                r = (np.deg2rad(deg), 0.0)
                raw[f"{m}_{_rot_tag(deg)}"] = pl.render_scene(pl.method_responder(d, m, r),
                                                             scene, h.freqs, source)
        peak = max(float(np.max(np.abs(x))) for x in raw.values())
        gain = 0.99 / peak if peak > 0 else 1.0
        stimuli = {k: StereoAudio(v * gain, cfg.fs, False, gain) for k, v in raw.items()}
    os.makedirs(out, exist_ok=True)
    for name, audio in sorted(stimuli.items()):
        p = os.path.join(out, f"{name}.wav")
        write_wav(p, audio.samples, cfg.fs)
        files.append(p)
        info[name] = {"samples": int(audio.samples.shape[0])}
    _write_manifest(out, "render", cfg, _input_hashes(cfg), files,
                    {"batch_gain": gain, "normalization": "batch peak to 0.99",
                     "stimuli": info})
    print(f"render: {len(stimuli)} stimuli (batch gain {gain:.4g}) -> {out}")


def cmd_evaluate(cfg):
    import numpy as np
    from . import evaluation as ev
    from . import pipelines as pl
    out = os.path.join(cfg.output_dir, "evaluate")
    geom = _load_geometry(cfg)
    h = _load_hrtf(cfg)
    rots = cfg.rotations_deg
    d = _load_design(cfg, h, geom, rots if "asm_aamagls" in cfg.pipelines else [])
    fs, nfft = h.freqs.sample_rate, h.freqs.nfft
    files, summary = [], {}
    for deg in rots:
        r = (np.deg2rad(deg), 0.0)
        sub = os.path.join(out, _rot_tag(deg))
        os.makedirs(sub, exist_ok=True)
        h_rot = h.rotated(*r)
        ref_fn = pl.sweep_callable(pl.reference_responder(h, r), nfft)
        group = {}
        for m in cfg.pipelines:
            filt = d.filt if m in pl.ASM_METHODS else None
            be = ev.binaural_errors(d.hrtf_for(m, r), filt, d.V, h, r, d.fade, h_rot, label=m)
            lat = ev.lateralization_sweep(
                pl.sweep_callable(pl.method_responder(d, m, r), nfft), ref_fn, fs,
                rotation_deg=deg, label=m)
            for rep, stem in ((be, "binaural_errors"), (lat, "lateralization")):
                p = os.path.join(sub, f"{stem}_{m}.csv")
                rep.to_csv(p)
                files.append(p)
            group[m] = (be, lat)
        ref = ev.lateralization_sweep(ref_fn, ref_fn, fs, rotation_deg=deg, label="reference")
        p = os.path.join(sub, "lateralization_reference.csv")
        ref.to_csv(p)
        files.append(p)
        summary[_rot_tag(deg)] = _summarize(group, ref)
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    files.append(os.path.join(out, "summary.json"))
    _write_manifest(out, "evaluate", cfg, _input_hashes(cfg), files)
    print(f"evaluate: {len(rots)} rotation groups x {len(cfg.pipelines)} pipelines -> {out}")


def _summarize(group, ref):
    import numpy as np
    s = {m: {"median_eps_itd_s": float(np.median(lat.eps_itd)),
             "mean_eps_ild_db": float(np.mean(lat.eps_ild))} for m, (_, lat) in group.items()}
    s["reference_self_max_error"] = float(max(ref.eps_itd.max(), ref.eps_ild.max()))
    if "asm_magls" in group and "asm_aamagls" in group:
        a, b = group["asm_aamagls"][0], group["asm_magls"][0]
        sel = a.alpha >= 1
        s["aa_le_magls_fraction_above_fmax"] = {
            ear: float(np.mean(a.eps_comb[ear][sel] <= b.eps_comb[ear][sel]))
            for ear in ("left", "right")}
    return s


def cmd_scene_gen(cfg):
    import numpy as np
    from . import pipelines as pl
    from .array_encoding import FrequencyGrid
    from .renderer import write_wav
    from .scene import image_source_scene, synthesize_ir
    from scipy import signal
    out = os.path.join(cfg.output_dir, "scene")
    os.makedirs(out, exist_ok=True)
    room = _room(cfg)
    scene = image_source_scene(room, fs=cfg.fs)
    p = os.path.join(out, "scene.json")
    scene.to_json(p)
    files = [p]
    extra = {"n_waves": len(scene), "direct_delay_s": float(scene.delay.min()),
             "direct_azimuth_deg": float(np.rad2deg(scene.phi[np.argmin(scene.delay)]))}
    if cfg.mic_wavs:
        geom = _load_geometry(cfg)
        freqs = FrequencyGrid(cfg.fs, cfg.nfft)
        ir = synthesize_ir(scene, pl.mic_responder(geom, freqs), geom.M, freqs)
        src = _read_source(cfg)
        x = np.stack([signal.oaconvolve(src, ir[:, i]) for i in range(geom.M)], axis=1)
        if cfg.noise_variance > 0:
            rng = np.random.default_rng(cfg.seed)
            x = x + np.sqrt(cfg.noise_variance) * rng.standard_normal(x.shape)
        peak = float(np.max(np.abs(x)))
        gain = 0.99 / peak if peak > 0 else 1.0
        p = os.path.join(out, "mics.wav")
        write_wav(p, x * gain, cfg.fs)
        files.append(p)
        extra["mic_gain"] = gain
    _write_manifest(out, "scene-gen", cfg, _input_hashes(cfg), files, extra)
    print(f"scene-gen: {len(scene)} plane waves, direct path at "
          f"{extra['direct_azimuth_deg']:.1f} deg azimuth -> {out}")


COMMANDS = {
    "analyze-array": (cmd_analyze_array, ()),
    "design": (cmd_design, ()),
    "render": (cmd_render, ("room",)),
    "evaluate": (cmd_evaluate, ()),
    "scene-gen": (cmd_scene_gen, ("room",)),
}


# --- argument parsing ----------------------------------------------------------

def _csv_floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _csv_names(text):
    return [x.strip() for x in text.split(",") if x.strip()]


_OVERRIDES = [
    ("--output-dir", "output_dir", str), ("--design-dir", "design_dir", str),
    ("--geometry", "geometry", str), ("--hrtf", "hrtf", str),
    ("--grid-points", "grid_points", int), ("--scene", "scene", str),
    ("--room-preset", "room_preset", str), ("--source-audio", "source_audio", str),
    ("--pipelines", "pipelines", _csv_names), ("--stimuli", "stimuli", str),
    ("--order", "order", int), ("--snr-ratio", "snr_ratio", float),
    ("--f-min", "f_min", float), ("--f-max", "f_max", float),
    ("--rotations", "rotations_deg", _csv_floats),
    ("--head-rotation", "head_rotation_deg", float), ("--fs", "fs", float),
    ("--nfft", "nfft", int), ("--svd-rel-tol", "svd_rel_tol", float),
    ("--phase-init", "phase_init", str), ("--seed", "seed", int),
    ("--noise-variance", "noise_variance", float),
]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON job configuration")
    for flag, dest, typ in _OVERRIDES:
        common.add_argument(flag, dest=dest, type=typ, default=None)
    common.add_argument("--mic-wavs", dest="mic_wavs", action="store_true", default=None,
                        help="scene-gen: also write array signals")
    parser = argparse.ArgumentParser(prog="aamagls", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def load_config(args):
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    if os.environ.get("AAMAGLS_OUTPUT_DIR"):
        data["output_dir"] = os.environ["AAMAGLS_OUTPUT_DIR"]
    for _, dest, _ in _OVERRIDES:
        value = getattr(args, dest)
        if value is not None:
            data[dest] = value
    if args.mic_wavs:
        data["mic_wavs"] = True
    try:
        return JobConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None):
    threads = os.environ.get("AAMAGLS_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = threads
    args = build_parser().parse_args(argv)
    func, needs = COMMANDS[args.command]
    try:
        cfg = load_config(args)
        cfg.validate(needs)
        func(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        import numpy as np
        from .array_encoding import TruncationOrderError
        from .hrtf import EncodingError
        from .scene import GeometryError
        if isinstance(exc, GeometryError):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if isinstance(exc, (np.linalg.LinAlgError, FloatingPointError, EncodingError,
                            TruncationOrderError)):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        raise
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
