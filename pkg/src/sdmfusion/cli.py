"""Command-line pipeline: one subcommand per stage, driven by an INI file.

Every stage reads its inputs from and writes its artifacts into the output
directory (``paths.out``), plus a ``manifest_<stage>.json`` recording the
resolved configuration, its hash, the seed, library versions and the
SHA-256 of each artifact. Relative paths in the ``[paths]`` section are
resolved against the output directory.

Typical run::

    sdmfusion --out run synth --seed 0
    sdmfusion --out run grid --seed 0
    sdmfusion --out run train --seed 0 --task regression --modality NDVI
    sdmfusion --out run eval --seed 0 --models NDVI
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import platform
import sys
import warnings
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy
import sklearn

from . import __version__
from .balance import OversampleConfig, adaptive_oversample, bin_frequencies, class_weights
from .covariates import TERRACLIMATE_FEATURES, covariate_matrix, read_covariates_csv
from .ensemble import MODEL_NAMES, ensemble_predict, optimize_weights, read_weights_csv, write_weights_csv
from .featsel import ForestConfig, rfe, write_report_csv
from .fusion import (CLASSIFICATION, REGRESSION, FusionConfig, FusionModel, TrainConfig, TrainingDiverged,
                     build_dataset, load_model, modality_channels, predict, save_model, train, write_trace_csv)
from .geo import BoundingBox, GridSpec, make_grid, read_grid_csv, write_grid_csv
from .metrics import bar_chart_svg, evaluate, write_eval_csv
from .occurrence import (MODALITIES, CellSample, aggregate_counts, load_occurrences, read_samples_csv,
                         split_train_test, write_samples_csv)
from .pseudoabsence import (STRATEGIES, PseudoAbsenceConfig, landcover_map, read_pseudoabsence_keys,
                            write_pseudoabsences_csv)
from .raster import AugmentationConfig, dump_band, patch_path, read_patch
from .testkit import WorldConfig, generate_world

logger = logging.getLogger("sdmfusion")


class ConfigError(ValueError):
    """Bad or missing configuration value; the message names the key."""


class InputError(RuntimeError):
    """A required input file is missing or unreadable."""


# -- config schema ---------------------------------------------------------------

def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def inner(s: str):
        return None if s.strip().lower() in ("", "none") else parse(s)
    return inner


def _int_tuple(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _name_tuple(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _thresholds(s: str) -> dict[str, float]:
    out = {}
    for part in s.split(","):
        country, _, km = part.partition(":")
        out[country.strip()] = float(km)
    return out


def _bins(s: str) -> tuple[tuple[int, int | None], ...]:
    bins = []
    for part in s.split(","):
        lo, _, hi = part.strip().partition("-")
        bins.append((int(lo), int(hi) if hi.strip() else None))
    return tuple(bins)


@dataclass(frozen=True)
class Option:
    default: str | None  # None: required
    parse: Callable[[str], Any]
    help: str


SCHEMA: dict[str, dict[str, Option]] = {
    "run": {
        "seed": Option(None, int, "global seed for every random step (required)"),
    },
    "paths": {
        "out": Option(".", str, "output directory; other relative paths resolve against it"),
        "occurrences": Option("occurrences.csv", str, "sightings CSV species,lat,lon,timestamp,country"),
        "covariates": Option("covariates.csv", str, "per-cell covariates CSV row,col,<features>"),
        "patches": Option("patches", str, "directory of per-cell patch files"),
        "grid": Option("grid.csv", str, "grid CSV written by 'grid'"),
        "samples": Option("samples.csv", str, "aggregated presence cells written by 'grid'"),
        "pseudoabsences": Option("pseudoabsences.csv", str, "pseudo-absence CSV written by 'pseudoabs'"),
    },
    "grid": {
        "min_lat": Option("-30.0", float, "bounding box south edge (deg)"),
        "min_lon": Option("150.0", float, "bounding box west edge (deg)"),
        "max_lat": Option("-29.0", float, "bounding box north edge (deg)"),
        "max_lon": Option("151.0", float, "bounding box east edge (deg)"),
        "cell_area_km2": Option("30.0", float, "nominal cell area"),
        "max_bad_fraction": Option("0.5", float, "abort if more occurrence rows than this are malformed"),
    },
    "pseudoabsence": {
        "strategy": Option("proposed", str, "proposed | distance | random"),
        "ratio": Option("1.0", float, "pseudo-absences per presence (inf keeps every eligible cell)"),
        "thresholds_km": Option("AU:10,SA:20,CR:28", _thresholds, "per-country distance limit"),
    },
    "balance": {
        "n_clusters": Option("8", int, "K-means clusters per minority bin"),
        "target_per_bin": Option("none", _opt(int), "target bin size (none: largest bin)"),
        "count_bins": Option("1-10,11-40,41-100,101-", _bins, "count bins, open upper end allowed"),
        "train_ratio": Option("0.8", float, "train share of the split made before oversampling"),
    },
    "fusion": {
        "task": Option("regression", str, "regression | classification"),
        "modality": Option("NDVI", str, "RGB | LC | NDVI"),
        "log_target": Option("true", _bool, "regression learns ln(1 + count)"),
        "conv_channels": Option("8,16", _int_tuple, "channels of each conv block"),
        "kernel": Option("3", int, "conv kernel size (odd)"),
        "pool": Option("2", int, "max-pool size"),
        "img_features": Option("64", int, "image branch output features"),
        "tab_hidden": Option("32", _int_tuple, "hidden widths of the tabular branch"),
        "tab_features": Option("16", int, "tabular branch output features"),
        "l2_lambda": Option("1e-4", float, "L2 penalty on all parameters"),
        "image_size": Option("none", _opt(_int_tuple), "resize patches to H,W (none: native)"),
    },
    "train": {
        "epochs": Option("60", int, "training epochs"),
        "batch_size": Option("32", int, "mini-batch size"),
        "lr_init": Option("1e-4", float, "learning rate at step 0"),
        "lr_target": Option("3e-3", float, "learning rate after warm-up"),
        "warmup_steps": Option("100", int, "linear warm-up length in optimiser steps"),
        "class_weights": Option("false", _bool, "weight each sample's loss by its country"),
        "augment": Option("false", _bool, "random flip/rotate/zoom of image inputs each epoch"),
        "train_ratio": Option("0.8", float, "train share when no test set is given"),
        "samples": Option("samples.csv", str, "training cells (e.g. balanced_train.csv)"),
        "test_samples": Option("none", _opt(str), "test cells; none: split 'samples'"),
    },
    "ensemble": {
        "max_iter": Option("500", int, "subgradient iterations"),
        "step": Option("0.05", float, "initial subgradient step"),
    },
    "rfe": {
        "keep": Option("6", int, "features to retain"),
        "n_trees": Option("100", int, "trees per forest"),
        "max_depth": Option("8", _opt(int), "tree depth limit (none: unlimited)"),
        "max_features": Option("none", _opt(int), "features tried per split (none: ceil(F/3))"),
    },
    "eval": {
        "models": Option("RGB,LC,NDVI", _name_tuple, "modalities to evaluate when checkpoints exist"),
    },
    "synth": {
        "lam": Option("20.0", float, "Poisson rate at suitability 1"),
        "intercept": Option("0.0", float, "suitability logit intercept"),
        "dispersion": Option("none", _opt(float), "gamma shape for overdispersed counts (none: Poisson)"),
        "n_hubs": Option("none", _opt(int), "observer hubs (none: every cell reachable)"),
        "hub_radius_km": Option("20.0", float, "survey radius around each hub"),
        "detect_prob": Option("1.0", float, "per-frog detection probability"),
        "patch_size": Option("8", int, "patch height and width in pixels"),
    },
}


def config_help() -> str:
    lines = ["configuration keys (INI sections; override with --set section.key=value):"]
    for section, opts in SCHEMA.items():
        lines.append(f"  [{section}]")
        for key, opt in opts.items():
            default = "required" if opt.default is None else f"default {opt.default}"
            lines.append(f"    {key} ({default}): {opt.help}")
    return "\n".join(lines)


@dataclass
class Settings:
    raw: dict[str, dict[str, str]]
    values: dict[str, dict[str, Any]]

    def __getitem__(self, dotted: str):
        section, key = dotted.split(".")
        return self.values[section][key]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def out(self) -> Path:
        return Path(self.values["paths"]["out"])

    def path(self, key: str) -> Path:
        """``paths.<key>`` (or any dotted key holding a path) under ``out``."""
        value = self[key] if "." in key else self.values["paths"][key]
        p = Path(value)
        return p if p.is_absolute() else self.out / p

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def load_settings(config_file: str | None, overrides: list[str]) -> Settings:
    """Merge defaults, the INI file and ``section.key=value`` overrides.

    Raises:
        ConfigError: unknown section/key, unparsable value, or missing
            required key. The message names the offending key.
    """
    raw = {s: {k: o.default for k, o in opts.items() if o.default is not None} for s, opts in SCHEMA.items()}
    if config_file is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(config_file) as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_file}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{config_file}: malformed config ({exc})") from None
        for section in parser.sections():
            for key, value in parser.items(section):
                _put(raw, f"{section}.{key}", value)
    for item in overrides:
        dotted, sep, value = item.partition("=")
        if not sep or "." not in dotted:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        _put(raw, dotted.strip(), value.strip())

    values: dict[str, dict[str, Any]] = {}
    for section, opts in SCHEMA.items():
        values[section] = {}
        for key, opt in opts.items():
            if key not in raw[section]:
                raise ConfigError(f"{section}.{key} is required")
            try:
                values[section][key] = opt.parse(raw[section][key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{section}.{key}: invalid value {raw[section][key]!r} ({exc})") from None
    _check(values)
    return Settings(raw, values)


def _put(raw: dict, dotted: str, value: str):
    section, _, key = dotted.partition(".")
    if section not in SCHEMA:
        raise ConfigError(f"{dotted}: unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{dotted}: unknown key in [{section}]")
    raw[section][key] = value


def _check(v: dict):
    if v["fusion"]["task"] not in (REGRESSION, CLASSIFICATION):
        raise ConfigError(f"fusion.task: expected regression or classification, got {v['fusion']['task']!r}")
    if v["fusion"]["modality"].upper() not in MODALITIES:
        raise ConfigError(f"fusion.modality: expected one of {MODALITIES}, got {v['fusion']['modality']!r}")
    if v["pseudoabsence"]["strategy"] not in STRATEGIES:
        raise ConfigError(f"pseudoabsence.strategy: expected one of {sorted(STRATEGIES)}")
    bad = [m for m in v["eval"]["models"] if m.upper() not in MODALITIES]
    if bad:
        raise ConfigError(f"eval.models: unknown modalities {bad}")
    for key in ("grid.max_bad_fraction", "balance.train_ratio", "train.train_ratio"):
        section, name = key.split(".")
        x = v[section][name]
        if not 0 <= x <= 1:
            raise ConfigError(f"{key}: must lie in [0, 1], got {x}")


# -- shared helpers ---------------------------------------------------------------

def _need(path: Path, key: str) -> Path:
    if not path.exists():
        raise InputError(f"{key}: not found: {path}")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(st: Settings, stage: str, artifacts: list[Path]) -> Path:
    """Record config, hash, seed, versions and artifact checksums for a stage."""
    manifest = {
        "stage": stage,
        "seed": st.seed,
        "config_sha256": st.digest(),
        "config": st.raw,
        "versions": {"sdmfusion": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "scikit-learn": sklearn.__version__},
        "artifacts": {p.relative_to(st.out).as_posix() if p.is_relative_to(st.out) else str(p): _sha256(p)
                      for p in artifacts},
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = st.out / f"manifest_{stage}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _grid(st: Settings):
    cells = read_grid_csv(_need(st.path("grid"), "paths.grid"))
    spec = GridSpec(st["grid.cell_area_km2"])
    if cells:
        # Rebuild the indexed grid when the file matches the configured box.
        g = make_grid(_bbox(st), spec)
        if len(g) == len(cells) and all(a.key == b.key for a, b in zip(g, cells)):
            return g
    return cells


def _bbox(st: Settings) -> BoundingBox:
    try:
        return BoundingBox(st["grid.min_lat"], st["grid.min_lon"], st["grid.max_lat"], st["grid.max_lon"])
    except ValueError as exc:
        raise ConfigError(f"grid.min_lat/min_lon/max_lat/max_lon: {exc}") from None


def _load_patch(st: Settings, key, modality: str):
    path = patch_path(st.path("patches"), key[0], key[1], modality)
    return read_patch(_need(path, "paths.patches"))


def _attach(st: Settings, samples: list[CellSample], modality: str) -> list[CellSample]:
    """Give samples their covariates and the patches ``modality`` needs."""
    covs = read_covariates_csv(_need(st.path("covariates"), "paths.covariates"))
    wanted = {"RGB": ("RGB",), "LC": ("LC",), "NDVI": ("NDVI",)}[modality]
    out = []
    for s in samples:
        if s.key not in covs:
            raise InputError(f"paths.covariates: no covariates for cell {s.key}")
        patches = {}
        for m in wanted:
            path = patch_path(st.path("patches"), s.cell.row, s.cell.col, m)
            if m == "NDVI" and not path.exists():
                patches["RGB"] = _load_patch(st, s.key, "RGB")
            else:
                patches[m] = read_patch(_need(path, "paths.patches"))
        out.append(s.with_inputs(covs[s.key], patches))
    return out


def _fusion_config(st: Settings, modality: str, task: str, image_hw: tuple[int, int]) -> FusionConfig:
    try:
        return FusionConfig(image_shape=(modality_channels(modality), *image_hw),
                            n_tabular=len(TERRACLIMATE_FEATURES),
                            conv_channels=st["fusion.conv_channels"], kernel=st["fusion.kernel"],
                            pool=st["fusion.pool"], img_features=st["fusion.img_features"],
                            tab_hidden=st["fusion.tab_hidden"], tab_features=st["fusion.tab_features"],
                            task=task, log_target=st["fusion.log_target"], l2_lambda=st["fusion.l2_lambda"],
                            seed=st.seed)
    except ValueError as exc:
        raise ConfigError(f"[fusion]: {exc}") from None


def _image_size(st: Settings):
    size = st["fusion.image_size"]
    if size is not None and len(size) != 2:
        raise ConfigError("fusion.image_size: expected H,W")
    return size


def _checkpoint(st: Settings, modality: str) -> Path:
    return st.out / f"model_{modality}.ckpt"


def _test_path(st: Settings) -> Path:
    return st.out / "test.csv"


# -- stages -------------------------------------------------------------------------

def cmd_synth(st: Settings, args) -> list[Path]:
    cfg = WorldConfig(bbox=_bbox(st), cell_area_km2=st["grid.cell_area_km2"], lam=st["synth.lam"],
                      intercept=st["synth.intercept"], dispersion=st["synth.dispersion"],
                      n_hubs=st["synth.n_hubs"], hub_radius_km=st["synth.hub_radius_km"],
                      detect_prob=st["synth.detect_prob"], patch_size=st["synth.patch_size"])
    world = generate_world(cfg, st.seed)
    paths = world.write(st.out)
    logger.info("synthetic world: %d cells, %d sightings", len(world.grid), len(world.records))
    return [paths["occurrences"], paths["covariates"], paths["grid"], paths["truth"]]


def cmd_grid(st: Settings, args) -> list[Path]:
    grid = make_grid(_bbox(st), GridSpec(st["grid.cell_area_km2"]))
    loaded = load_occurrences(_need(st.path("occurrences"), "paths.occurrences"), st["grid.max_bad_fraction"])
    for lineno, reason in loaded.rejected:
        logger.warning("occurrences line %d rejected: %s", lineno, reason)
    agg = aggregate_counts(loaded.records, grid)
    if agg.n_outside:
        logger.warning("%d sightings fall outside the grid", agg.n_outside)
    grid_path, samples_path = st.path("grid"), st.path("samples")
    write_grid_csv(grid, grid_path)
    write_samples_csv(agg.samples, samples_path)
    logger.info("%d cells, %d with sightings", len(grid), len(agg.samples))
    return [grid_path, samples_path]


def cmd_pseudoabs(st: Settings, args) -> list[Path]:
    grid = _grid(st)
    presences = read_samples_csv(_need(st.path("samples"), "paths.samples"), grid)
    landcover = landcover_map((c.key, _load_patch(st, c.key, "LC")) for c in grid)
    try:
        cfg = PseudoAbsenceConfig(thresholds_km=st["pseudoabsence.thresholds_km"],
                                  ratio=st["pseudoabsence.ratio"], seed=st.seed)
    except ValueError as exc:
        raise ConfigError(f"[pseudoabsence]: {exc}") from None
    result = STRATEGIES[st["pseudoabsence.strategy"]](grid, presences, landcover, cfg)
    if result.status != "ok":
        logger.warning("pseudo-absences %s: %d of %s requested", result.status, len(result),
                       result.n_requested)
    path = st.path("pseudoabsences")
    write_pseudoabsences_csv(result, path)
    return [path]


def cmd_balance(st: Settings, args) -> list[Path]:
    grid = _grid(st)
    samples = read_samples_csv(_need(st.path("samples"), "paths.samples"), grid)
    covs = read_covariates_csv(_need(st.path("covariates"), "paths.covariates"))
    samples = [s.with_inputs(covs[s.key], {}) for s in samples]
    train_part, test_part = split_train_test(samples, st["balance.train_ratio"], st.seed)
    try:
        cfg = OversampleConfig(n_clusters=st["balance.n_clusters"], target_per_bin=st["balance.target_per_bin"],
                               count_bins=st["balance.count_bins"], seed=st.seed)
    except ValueError as exc:
        raise ConfigError(f"[balance]: {exc}") from None
    balanced = adaptive_oversample(train_part, cfg)
    logger.info("bin sizes %s -> %s", bin_frequencies(train_part, cfg.count_bins),
                bin_frequencies(balanced, cfg.count_bins))
    weights = class_weights(balanced)
    out_train, out_test, out_w = st.out / "balanced_train.csv", _test_path(st), st.out / "class_weights.csv"
    write_samples_csv(balanced, out_train, with_origin=True)
    write_samples_csv(test_part, out_test)
    with open(out_w, "w") as fh:
        fh.write("country,weight\n")
        for country, w in weights.weights.items():
            fh.write(f"{country},{w!r}\n")
    return [out_train, out_test, out_w]


def _training_cells(st: Settings, grid, task: str):
    samples = read_samples_csv(_need(st.path("train.samples"), "train.samples"), grid)
    if task == CLASSIFICATION:
        by_key = {c.key: c for c in grid}
        pa = read_pseudoabsence_keys(_need(st.path("pseudoabsences"), "paths.pseudoabsences"))
        samples = samples + [CellSample(by_key[k], 0, country) for k, country in pa]
    if st["train.test_samples"] is not None:
        test = read_samples_csv(_need(st.path("train.test_samples"), "train.test_samples"), grid)
        return samples, test
    return split_train_test(samples, st["train.train_ratio"], st.seed)


def cmd_train(st: Settings, args) -> list[Path]:
    task, modality = st["fusion.task"], st["fusion.modality"].upper()
    grid = _grid(st)
    train_cells, test_cells = _training_cells(st, grid, task)
    size = _image_size(st)
    data = build_dataset(_attach(st, train_cells, modality), modality, task, size)
    test = build_dataset(_attach(st, test_cells, modality), modality, task, size)
    model = FusionModel.create(_fusion_config(st, modality, task, data.images.shape[2:]))
    try:
        cfg = TrainConfig(lr_init=st["train.lr_init"], lr_target=st["train.lr_target"],
                          warmup_steps=st["train.warmup_steps"], epochs=st["train.epochs"],
                          batch_size=st["train.batch_size"],
                          class_weights=class_weights(train_cells) if st["train.class_weights"] else None,
                          augmentation=AugmentationConfig(seed=st.seed) if st["train.augment"] else None,
                          seed=st.seed)
    except ValueError as exc:
        raise ConfigError(f"[train]: {exc}") from None
    result = train(model, data, cfg, test=test)
    last = result.trace[-1]
    logger.info("epoch %d: train %.4f test %.4f", last.epoch, last.train_metric, last.test_metric)
    ckpt, trace, test_csv = _checkpoint(st, modality), st.out / f"trace_{modality}.csv", _test_path(st)
    save_model(result.model, ckpt)
    write_trace_csv(result.trace, trace)
    artifacts = [ckpt, trace]
    if st["train.test_samples"] is None:
        write_samples_csv(test_cells, test_csv)
        artifacts.append(test_csv)
    return artifacts


def _predictions(st: Settings, models: tuple[str, ...]):
    """Per-model predictions and truth on the saved test set."""
    grid = _grid(st)
    test_cells = read_samples_csv(_need(_test_path(st), "test.csv (written by 'train' or 'balance')"), grid)
    preds, task, truth = {}, None, None
    for modality in models:
        path = _checkpoint(st, modality)
        if not path.exists():
            continue
        model = load_model(path)
        if task is not None and model.config.task != task:
            raise InputError(f"{path.name}: task {model.config.task} differs from {task}")
        task = model.config.task
        hw = model.config.image_shape[1:]
        data = build_dataset(_attach(st, test_cells, modality), modality, task, hw)
        preds[modality] = predict(model, data.images, data.tabular)
        truth = data.targets
    if not preds:
        raise InputError(f"no checkpoints found for {', '.join(models)} in {st.out}")
    return preds, truth, task


def cmd_ensemble(st: Settings, args) -> list[Path]:
    preds, truth, _ = _predictions(st, MODEL_NAMES)
    missing = [m for m in MODEL_NAMES if m not in preds]
    if missing:
        raise InputError(f"ensemble needs checkpoints for {', '.join(missing)}")
    P = np.column_stack([preds[m] for m in MODEL_NAMES])
    res = optimize_weights(P, truth, seed=st.seed, max_iter=st["ensemble.max_iter"], step=st["ensemble.step"])
    path = st.out / "weights.csv"
    write_weights_csv(res.weights, path)
    logger.info("weights %s, MAE %.4f", dict(zip(MODEL_NAMES, res.weights.w)), res.mae)
    return [path]


def cmd_rfe(st: Settings, args) -> list[Path]:
    grid = _grid(st)
    samples = read_samples_csv(_need(st.path("samples"), "paths.samples"), grid)
    covs = read_covariates_csv(_need(st.path("covariates"), "paths.covariates"))
    X, names = covariate_matrix([covs[s.key] for s in samples])
    y = np.array([s.count for s in samples], dtype=float)
    forest = ForestConfig(n_trees=st["rfe.n_trees"], max_depth=st["rfe.max_depth"],
                          max_features=st["rfe.max_features"], seed=st.seed)
    try:
        report = rfe(X, y, st["rfe.keep"], names, forest)
    except ValueError as exc:
        raise ConfigError(f"rfe.keep: {exc}") from None
    path = st.out / "rfe_report.csv"
    write_report_csv(report, path)
    for rank, (name, score) in enumerate(report.ranking, start=1):
        print(f"{rank}\t{name}\t{score:.4f}")
    return [path]


def cmd_eval(st: Settings, args) -> list[Path]:
    models = tuple(m.upper() for m in st["eval.models"])
    preds, truth, task = _predictions(st, models)
    results = {m: evaluate(task, truth, p) for m, p in preds.items()}
    weights_path = st.out / "weights.csv"
    if weights_path.exists() and all(m in preds for m in MODEL_NAMES):
        names, weights = read_weights_csv(weights_path)
        P = np.column_stack([preds[m] for m in names])
        results["ensemble"] = evaluate(task, truth, ensemble_predict(weights, P))
    csv_path, svg_path = st.out / "eval.csv", st.out / "eval.svg"
    write_eval_csv(results, csv_path)
    metric = "mae" if task == REGRESSION else "accuracy"
    chart = {name: getattr(r, metric) for name, r in results.items()}
    svg_path.write_text(bar_chart_svg(chart, f"{task} on {results[next(iter(results))].n} test cells",
                                      metric.upper()))
    for name, r in results.items():
        extra = "" if r.auc is None else f" auc={r.auc:.6f}"
        print(f"{name}\t{metric}={getattr(r, metric):.6f}{extra}")
    return [csv_path, svg_path]


STAGES = {
    "synth": (cmd_synth, "generate a synthetic world (occurrences, covariates, patches, truth)"),
    "grid": (cmd_grid, "grid the bounding box and aggregate sightings per cell"),
    "pseudoabs": (cmd_pseudoabs, "generate pseudo-absence cells"),
    "balance": (cmd_balance, "split, then oversample minority count bins of the training part"),
    "train": (cmd_train, "train one fusion model; writes checkpoint, trace and test set"),
    "ensemble": (cmd_ensemble, "fit MAE-optimal ensemble weights on the test set"),
    "rfe": (cmd_rfe, "rank covariates with random-forest recursive feature elimination"),
    "eval": (cmd_eval, "score checkpoints on the test set; writes eval.csv and eval.svg"),
}


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", default=argparse.SUPPRESS, help="INI configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=argparse.SUPPRESS,
                        metavar="SECTION.KEY=VALUE", help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="shorthand for --set run.seed=N")
    common.add_argument("--out", default=argparse.SUPPRESS, help="shorthand for --set paths.out=DIR")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS, help="more logging")

    parser = argparse.ArgumentParser(prog="sdmfusion", parents=[common],
                                     description="Species distribution modelling pipeline.",
                                     epilog=config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, helptext) in STAGES.items():
        p = sub.add_parser(name, parents=[common], help=helptext, description=helptext,
                           epilog=config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "pseudoabs":
            p.add_argument("--strategy", choices=sorted(STRATEGIES), help="pseudoabsence.strategy")
        if name == "train":
            p.add_argument("--task", choices=(REGRESSION, CLASSIFICATION), help="fusion.task")
            p.add_argument("--modality", choices=MODALITIES, help="fusion.modality")
        if name == "rfe":
            p.add_argument("--keep", type=int, help="rfe.keep")
        if name == "eval":
            p.add_argument("--models", help="eval.models, comma separated")
    dump = sub.add_parser("dump-band", help="print one band of a patch file as a text matrix")
    dump.add_argument("patch", help="patch file")
    dump.add_argument("band", help="band name")
    return parser


_FLAG_KEYS = {"strategy": "pseudoabsence.strategy", "task": "fusion.task", "modality": "fusion.modality",
              "keep": "rfe.keep", "models": "eval.models"}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", 0) >= 2 else
                        logging.INFO if getattr(args, "verbose", 0) else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.command == "dump-band":
        try:
            sys.stdout.write(dump_band(read_patch(args.patch), args.band))
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        return 0

    overrides = list(getattr(args, "overrides", []))
    if hasattr(args, "seed"):
        overrides.append(f"run.seed={args.seed}")
    if hasattr(args, "out"):
        overrides.append(f"paths.out={args.out}")
    for flag, key in _FLAG_KEYS.items():
        if getattr(args, flag, None) is not None:
            overrides.append(f"{key}={getattr(args, flag)}")
    try:
        st = load_settings(getattr(args, "config", None), overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    st.out.mkdir(parents=True, exist_ok=True)
    stage, _ = STAGES[args.command]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            logging.captureWarnings(True)
            artifacts = stage(st, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InputError, TrainingDiverged, ValueError, KeyError, OSError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1
    finally:
        logging.captureWarnings(False)
    name = args.command if args.command != "train" else f"train_{st['fusion.modality'].upper()}"
    write_manifest(st, name, artifacts)
    return 0


if __name__ == "__main__":
    sys.exit(main())
