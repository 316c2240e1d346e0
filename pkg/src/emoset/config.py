"""Run configuration: flat ``key = value`` files with flag overrides.

Precedence is command-line flags, then the config file, then defaults.
Lists are comma separated; threshold lists also accept ``start:stop:step``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import __version__
from .dsp import DEFAULT_FRAME_MS, DEFAULT_HOP_MS, ENERGY_FLOOR_DB, RELATIVE_DB, VOICING_MIN
from .evaluation import CV, EvalConfig, SplitPlan, parse_sweep
from .exceptions import ArgumentError
from .svm import C_GRID

CONFIG_FILENAME = "run_config.txt"


@dataclass(frozen=True)
class RunConfig:
    emodb_root: str = ""
    ravdess_root: str = ""
    output_dir: str = "."
    frame_ms: float = DEFAULT_FRAME_MS
    hop_ms: float = DEFAULT_HOP_MS
    vad_energy_floor_db: float = ENERGY_FLOOR_DB
    vad_rel_db: float = RELATIVE_DB
    vad_voicing_min: float = VOICING_MIN
    norm_mode: str = "global"
    pca_mode: str = "subset"
    pca_components: tuple = (90, 8, 2)
    svm_c_grid: tuple = C_GRID
    svm_inner_folds: int = 5
    svm_tol: float = 1e-4
    svm_max_epochs: int = 10000
    eval_mode: str = CV
    eval_folds: int = 7
    eval_repeats: int = 5
    eval_oversample: str = "balance"
    eval_speaker_independent: bool = False
    reject_threshold: float = 0.0
    reject_thresholds: tuple = tuple(parse_sweep("0:1:0.05"))
    tsne_perplexity: float = 30.0
    tsne_iterations: int = 1000
    tsne_learning_rate: float = 200.0
    seed: int = 0

    def key_for(self, name: str) -> str:
        return name.replace("_", ".", 1) if name.split("_", 1)[0] in _DOTTED else name

    def to_text(self) -> str:
        lines = [f"# emoset {__version__}"]
        for f in fields(self):
            lines.append(f"{self.key_for(f.name)} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def write(self, directory, filename: str = CONFIG_FILENAME) -> Path:
        path = Path(directory) / filename
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    def with_overrides(self, **values) -> "RunConfig":
        """Apply non-None overrides, coercing strings to the field type."""
        known = {f.name: f for f in fields(self)}
        clean = {}
        for name, value in values.items():
            if value is None:
                continue
            if name not in known:
                raise ArgumentError(f"unknown config key {name!r}")
            clean[name] = _coerce(name, value, type(getattr(self, name)))
        return replace(self, **clean)

    def eval_config(self, n_jobs: int = 1) -> EvalConfig:
        return EvalConfig(
            normalizer=self.norm_mode,
            pca_components=tuple(self.pca_components),
            pca_mode=self.pca_mode,
            c_grid=tuple(self.svm_c_grid),
            inner_folds=self.svm_inner_folds,
            svm_tol=self.svm_tol,
            svm_max_epochs=self.svm_max_epochs,
            oversample=self.eval_oversample,
            threshold=self.reject_threshold,
            thresholds=tuple(self.reject_thresholds),
            n_jobs=n_jobs,
        )

    def split_plan(self, gender=None) -> SplitPlan:
        return SplitPlan(mode=self.eval_mode, folds=self.eval_folds, repeats=self.eval_repeats,
                         gender_filter=gender, speaker_independent=self.eval_speaker_independent,
                         seed=self.seed)


_DOTTED = {"vad", "norm", "pca", "svm", "eval", "tsne"}
_FLOAT_LISTS = {"svm_c_grid", "reject_thresholds"}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(name, value, kind):
    if not isinstance(value, str):
        if kind is tuple:
            return tuple(value)
        return kind(value)
    text = value.strip()
    try:
        if kind is bool:
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if kind is tuple:
            if name == "reject_thresholds" and ":" in text:
                return tuple(parse_sweep(text))
            cast = float if name in _FLOAT_LISTS else int
            return tuple(cast(v) for v in text.split(",") if v.strip())
        return kind(text)
    except ValueError:
        raise ArgumentError(f"bad value {value!r} for {name}") from None


def parse_config_text(text: str) -> dict:
    """``key = value`` lines to a dict of field names; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ArgumentError(f"config line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace(".", "_")] = value.strip().strip('"')
    return out


def load_config(path=None, **overrides) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = cfg.with_overrides(**parse_config_text(Path(path).read_text(encoding="utf-8")))
    return cfg.with_overrides(**overrides)
