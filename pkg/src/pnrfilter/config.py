"""INI run configuration and reproducibility manifests.

Every physical quantity carries its unit in the key name::

    [pulse]
    tau_rise_ns = 0.21
    tau_fall_ns = 25
    a1_mv = 2.94              ; linear table A_n = n * a1_mv ...
    amplitudes_mv =           ; ... unless an explicit comma list is given
    peak_normalized = true

    [noise]
    sigma_mv = 0.40

    [readout]
    num_pixels = 6
    bias_current_ua = 10
    z0_ohm = 50
    rs_ohm = 52

    [acquisition]
    sample_rate_gsps = 5
    duration_ns = 200
    pulse_delay_ns = 20
    random_phase = false

    [experiment]
    seed = 0
    trials = 10000
    filter = matched          ; none | matched | lowpass:<hz>[:single_pole]
    template_csv =            ; optional matched-template override
    mean_photon_number = 5.7
    jitter_photon_numbers = 1, 5
    jitter_method = gaussian_fit

    [simulate]
    traces = 100
    photon_number = 0         ; 0 draws n from the fired-pixel distribution
"""

from __future__ import annotations

import configparser
import datetime as _dt
import hashlib
import os
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .errors import ValidationError
from .experiments import ExperimentConfig, FilterSpec
from .filtering import read_kernel
from .signal_model import NoiseModel, PulseShape, ReadoutConfig

DEFAULTS = {
    "pulse": {"tau_rise_ns": "0.21", "tau_fall_ns": "25", "a1_mv": "2.94",
              "amplitudes_mv": "", "peak_normalized": "true"},
    "noise": {"sigma_mv": "0.40"},
    "readout": {"num_pixels": "6", "bias_current_ua": "10", "z0_ohm": "50", "rs_ohm": "52"},
    "acquisition": {"sample_rate_gsps": "5", "duration_ns": "200", "pulse_delay_ns": "20",
                    "random_phase": "false"},
    "experiment": {"seed": "0", "trials": "10000", "filter": "matched", "template_csv": "",
                   "mean_photon_number": "5.7", "jitter_photon_numbers": "1, 5",
                   "jitter_method": "gaussian_fit"},
    "simulate": {"traces": "100", "photon_number": "0"},
}


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig
    mean_photon_number: float
    jitter_photon_numbers: tuple
    jitter_method: str
    traces: int
    photon_number: int
    sections: dict

    @property
    def seed(self) -> int:
        return int(self.experiment.seed)


def _get(sections, section, key, cast):
    raw = sections[section][key]
    try:
        return cast(raw)
    except (ValueError, TypeError):
        raise ValidationError(f"{section}.{key}", f"cannot parse {raw!r}") from None


def _bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def merge_sections(user: dict) -> dict:
    """Defaults overlaid with ``user``; unknown sections or keys are rejected."""
    merged = {s: dict(v) for s, v in DEFAULTS.items()}
    for section, values in user.items():
        if section not in merged:
            raise ValidationError(section, "unknown config section")
        for key, value in values.items():
            if key not in merged[section]:
                raise ValidationError(f"{section}.{key}", "unknown config key")
            merged[section][key] = str(value).strip()
    return merged


def parse_sections(user: dict, base_dir=None) -> RunConfig:
    s = merge_sections(user)
    try:
        tau_rise = _get(s, "pulse", "tau_rise_ns", float) * 1e-9
        tau_fall = _get(s, "pulse", "tau_fall_ns", float) * 1e-9
        if not tau_rise < tau_fall:
            raise ValidationError("pulse.tau_rise_ns", "tau_rise must be smaller than tau_fall")
        num_pixels = _get(s, "readout", "num_pixels", int)
        if num_pixels < 1:
            raise ValidationError("readout.num_pixels", "need at least one pixel")
        amps = _get(s, "pulse", "amplitudes_mv", _floats)
        normalized = _get(s, "pulse", "peak_normalized", _bool)
        if amps:
            shape = PulseShape(tau_rise, tau_fall, dict(enumerate(amps, start=1)), normalized)
        else:
            shape = PulseShape.linear(_get(s, "pulse", "a1_mv", float), num_pixels,
                                      tau_rise, tau_fall, normalized)
        readout = ReadoutConfig(num_pixels, _get(s, "readout", "bias_current_ua", float) * 1e-6,
                                _get(s, "readout", "z0_ohm", float),
                                _get(s, "readout", "rs_ohm", float))
        spec = FilterSpec.parse(s["experiment"]["filter"])
        template_path = s["experiment"]["template_csv"]
        if template_path:
            path = Path(template_path)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            spec = replace(spec, template=read_kernel(path))
            s["experiment"]["template_csv"] = str(path.resolve())
        experiment = ExperimentConfig(
            shape=shape,
            noise=NoiseModel(_get(s, "noise", "sigma_mv", float)),
            readout=readout,
            filter=spec,
            trials=_get(s, "experiment", "trials", int),
            seed=_get(s, "experiment", "seed", int),
            sample_rate=_get(s, "acquisition", "sample_rate_gsps", float) * 1e9,
            duration=_get(s, "acquisition", "duration_ns", float) * 1e-9,
            pulse_delay=_get(s, "acquisition", "pulse_delay_ns", float) * 1e-9,
            random_phase=_get(s, "acquisition", "random_phase", _bool),
        )
        photon_number = _get(s, "simulate", "photon_number", int)
        if photon_number and not 1 <= photon_number <= num_pixels:
            raise ValidationError("simulate.photon_number", f"must lie in 1..{num_pixels}")
        return RunConfig(
            experiment=experiment,
            mean_photon_number=_get(s, "experiment", "mean_photon_number", float),
            jitter_photon_numbers=_get(s, "experiment", "jitter_photon_numbers", _ints),
            jitter_method=s["experiment"]["jitter_method"],
            traces=_get(s, "simulate", "traces", int),
            photon_number=photon_number,
            sections=s,
        )
    except ValidationError as exc:
        if "." not in exc.field and exc.field in _FIELD_KEYS:
            raise ValidationError(_FIELD_KEYS[exc.field], str(exc).split(": ", 1)[1]) from None
        raise


# model-level field names mapped back to the config key that sets them
_FIELD_KEYS = {
    "tau_rise": "pulse.tau_rise_ns", "tau_rise/tau_fall": "pulse.tau_rise_ns",
    "amplitudes": "pulse.amplitudes_mv", "sigma": "noise.sigma_mv",
    "num_pixels": "readout.num_pixels", "bias_current": "readout.bias_current_ua",
    "line_impedance": "readout.z0_ohm", "shunt_resistance": "readout.rs_ohm",
    "trials": "experiment.trials", "seed": "experiment.seed", "filter": "experiment.filter",
    "sample_rate": "acquisition.sample_rate_gsps", "pulse_delay": "acquisition.pulse_delay_ns",
    "duration": "acquisition.duration_ns",
}


def read_sections(path) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"),
                                       interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ValidationError("config", str(exc)) from None
    return {section: dict(parser[section]) for section in parser.sections()}


def load_config(path=None, seed=None, filter_text=None) -> RunConfig:
    """Read an INI file (or defaults only), applying command-line overrides."""
    user = read_sections(path) if path else {}
    if seed is not None:
        user.setdefault("experiment", {})["seed"] = str(seed)
    if filter_text is not None:
        user.setdefault("experiment", {})["filter"] = filter_text
    base_dir = Path(path).parent if path else None
    return parse_sections(user, base_dir)


# -- manifests --------------------------------------------------------------------


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def timestamp(override=None) -> str:
    """UTC timestamp; honours ``SOURCE_DATE_EPOCH`` for reproducible reruns."""
    if override is not None:
        return override
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
              else _dt.datetime.now(_dt.timezone.utc))
    return moment.replace(microsecond=0).isoformat()


def build_manifest(command, config: RunConfig, inputs=(), extra=None, stamp=None) -> dict:
    manifest = {
        "tool": "pnrfilter",
        "version": __version__,
        "command": command,
        "seed": config.seed,
        "config": config.sections,
        "inputs": {str(p): file_digest(p) for p in sorted(map(str, inputs))},
        "timestamp": timestamp(stamp),
    }
    if extra:
        manifest.update(extra)
    return manifest


def config_from_manifest(manifest: dict) -> RunConfig:
    try:
        sections = manifest["config"]
    except (KeyError, TypeError):
        raise ValidationError("manifest", "manifest has no 'config' block") from None
    return parse_sections(sections)
