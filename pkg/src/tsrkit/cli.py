"""Pipeline orchestration: detect, describe, recognize, evaluate subcommands.

Each stage reads and writes plain files under one run directory, so slow or
rate-limited stages can be rerun and resumed independently. Config is a
"key = value" text file; command-line flags override individual keys.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from .contours import (
    DEFAULT_MIN_AREA,
    DEFAULT_MIN_SIDE,
    filter_detections,
    format_detection_records,
    parse_detection_record,
    trace_contours,
)
from .dataset import (
    ClassCatalog,
    DatasetError,
    SampleManifest,
    load_catalog,
    load_manifest,
    sample_subset,
)
from .descriptions import (
    DescriptionError,
    DescriptionPrompt,
    build_description_set,
    load_description_set,
    save_description_set,
)
from .evaluator import (
    EvalRecord,
    EvaluatorError,
    build_report,
    render_table,
    save_report,
)
from .gateway import (
    GatewayError,
    LiveBackend,
    MllmGateway,
    MockBackend,
    ResponseCache,
)
from .images import ImageError, load_image, save_png
from .mask import (
    MaskError,
    load_legend,
    load_segmentation,
    save_mask,
    sign_color_from_legend,
    to_binary_mask,
)
from .recognizer import (
    STRATEGIES,
    STRATEGY_BASELINE_O,
    STRATEGY_FULL,
    RecognitionResult,
    RecognitionStrategy,
    RecognizerError,
    load_results,
    recognize,
    result_to_json,
)
from .regions import extract_all

log = logging.getLogger(__name__)

DETECTIONS_FILE = "detections.tsv"


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    catalog: Path | None = None
    manifest: Path | None = None
    output_dir: Path = Path("run")
    dataset_name: str = ""
    backend: str = "mock"
    endpoint_url: str = ""
    model_tag: str = "mock"
    rpm_limit: int = 0
    max_retries: int = 3
    timeout_seconds: float = 60.0
    temperature: float = 0.0
    max_output_tokens: int = 512
    mock_fixtures: Path | None = None
    cache_dir: Path | None = None
    mask_tolerance: int = 0
    legend: Path | None = None
    sign_label: str = "traffic_sign"
    sign_color: tuple[int, int, int] | None = None
    min_area: int = DEFAULT_MIN_AREA
    min_side: int = DEFAULT_MIN_SIDE
    crop_padding: int = 0
    strategy: str = STRATEGY_FULL
    k_list: tuple[int, ...] = (1, 5, 10)
    subset_n: int | None = None
    subset_seed: int = 0
    description_prompt: str = ""

    def validate(self) -> None:
        if self.catalog is None or not Path(self.catalog).exists():
            raise ConfigError(f"catalog file not found: {self.catalog}")
        if self.manifest is None or not Path(self.manifest).exists():
            raise ConfigError(f"manifest file not found: {self.manifest}")
        if self.legend is not None and not Path(self.legend).exists():
            raise ConfigError(f"legend file not found: {self.legend}")
        if self.mock_fixtures is not None and not Path(self.mock_fixtures).exists():
            raise ConfigError(f"mock fixtures directory not found: {self.mock_fixtures}")
        if self.backend not in ("mock", "live"):
            raise ConfigError(f"backend must be 'mock' or 'live', got {self.backend!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0 <= self.mask_tolerance <= 255:
            raise ConfigError("mask_tolerance must be within 0-255")
        if self.min_area < 0 or self.min_side < 0 or self.crop_padding < 0:
            raise ConfigError("min_area, min_side, and crop_padding must be >= 0")
        if not self.k_list or any(k < 1 for k in self.k_list):
            raise ConfigError("k_list values must be >= 1")
        if self.subset_n is not None and self.subset_n < 0:
            raise ConfigError("subset_n must be >= 0")
        if self.rpm_limit < 0 or self.max_retries < 0 or self.timeout_seconds <= 0:
            raise ConfigError("rpm_limit/max_retries must be >= 0 and timeout_seconds > 0")


def _parse_color(raw: str) -> tuple[int, int, int]:
    try:
        r, g, b = (int(c) for c in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"expected 'R,G,B', got {raw!r}") from exc
    if not all(0 <= c <= 255 for c in (r, g, b)):
        raise ConfigError(f"color channels must be 0-255, got {raw!r}")
    return (r, g, b)


_CONFIG_PARSERS = {
    "catalog": Path,
    "manifest": Path,
    "output_dir": Path,
    "dataset_name": str,
    "backend": str,
    "endpoint_url": str,
    "model_tag": str,
    "rpm_limit": int,
    "max_retries": int,
    "timeout_seconds": float,
    "temperature": float,
    "max_output_tokens": int,
    "mock_fixtures": Path,
    "cache_dir": Path,
    "mask_tolerance": int,
    "legend": Path,
    "sign_label": str,
    "sign_color": _parse_color,
    "min_area": int,
    "min_side": int,
    "crop_padding": int,
    "strategy": str,
    "k_list": lambda raw: tuple(int(k) for k in raw.split(",")),
    "subset_n": int,
    "subset_seed": int,
    "description_prompt": str,
}


def parse_config(path: str | Path) -> RunConfig:
    """Read a "key = value" config file; '#' starts a comment line."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    config = RunConfig()
    base = path.parent
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _CONFIG_PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            value = _CONFIG_PARSERS[key](raw)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
        if isinstance(value, Path) and not value.is_absolute():
            value = (base / value).resolve()
        setattr(config, key, value)
    return config


def _resolve_sign_color(config: RunConfig):
    """Sign class color from the legend file, or directly from config."""
    if config.legend is not None:
        legend = load_legend(config.legend)
        return sign_color_from_legend(legend, config.sign_label), legend
    if config.sign_color is not None:
        return config.sign_color, {config.sign_label: config.sign_color}
    raise ConfigError("set either 'legend' (+ sign_label) or 'sign_color' in the config")


def build_gateway(config: RunConfig) -> MllmGateway:
    if config.backend == "mock":
        backend = MockBackend(fixtures_dir=config.mock_fixtures)
    else:
        if not config.endpoint_url:
            raise ConfigError("live backend requires endpoint_url in the config")
        backend = LiveBackend(config.endpoint_url, timeout_seconds=config.timeout_seconds)
    return MllmGateway(
        backend,
        model_tag=config.model_tag,
        temperature=config.temperature,
        max_output_tokens=config.max_output_tokens,
        rpm_limit=config.rpm_limit,
        max_retries=config.max_retries,
    )


def _load_inputs(config: RunConfig) -> tuple[ClassCatalog, SampleManifest]:
    catalog = load_catalog(config.catalog)
    manifest = load_manifest(config.manifest, catalog)
    if config.subset_n is not None:
        manifest = sample_subset(manifest, config.subset_n, config.subset_seed)
    return catalog, manifest


def _cache(config: RunConfig) -> ResponseCache:
    return ResponseCache(config.cache_dir or Path(config.output_dir) / "cache")


def _dataset_name(config: RunConfig) -> str:
    return config.dataset_name or Path(config.manifest).stem


def cmd_detect(config: RunConfig) -> int:
    """Masks, detection records, and sign crops for full-pipeline samples."""
    config.validate()
    _catalog, manifest = _load_inputs(config)
    work = [s for s in manifest if s.has_full_pipeline_inputs]
    if not work:
        print("nothing to detect: no samples with road image + segmentation map")
        return 0
    sign_color, legend = _resolve_sign_color(config)
    out = Path(config.output_dir)
    masks_dir, crops_dir = out / "masks", out / "crops"
    records: list[str] = []
    failed: list[str] = []
    for sample in work:
        try:
            road = load_image(sample.road_image_path)
            seg = load_segmentation(sample.segmentation_path, legend)
            mask = to_binary_mask(seg, sign_color, config.mask_tolerance)
            detections = filter_detections(trace_contours(mask), config.min_area, config.min_side)
            crops = extract_all(road, mask, detections, config.crop_padding, sample.sample_id)
            save_mask(mask, masks_dir / f"{sample.sample_id}.png")
            for sign in crops:
                save_png(sign.image, crops_dir / f"{sample.sample_id}_{sign.detection_index}.png")
            records.extend(format_detection_records(sample.sample_id, detections))
            print(f"{sample.sample_id}: {len(detections)} detection(s)")
        except Exception as exc:
            log.error("detection failed for sample %s: %s", sample.sample_id, exc)
            print(f"{sample.sample_id}: FAILED ({exc})")
            failed.append(sample.sample_id)
    out.mkdir(parents=True, exist_ok=True)
    header = "# sample_id\tindex\tx_min\ty_min\tx_max\ty_max\tarea"
    (out / DETECTIONS_FILE).write_text("\n".join([header, *records]) + "\n", encoding="utf-8")
    if failed:
        print(f"{len(failed)} sample(s) failed: {', '.join(failed)}")
        return 1
    return 0


def cmd_describe(config: RunConfig, gateway: MllmGateway | None = None) -> int:
    """Generate the per-class description store; reruns hit the cache."""
    config.validate()
    catalog = load_catalog(config.catalog)
    gateway = gateway or build_gateway(config)
    prompt = (
        DescriptionPrompt(config.description_prompt)
        if config.description_prompt
        else DescriptionPrompt()
    )
    try:
        dset = build_description_set(catalog, prompt, gateway, _cache(config))
    except DescriptionError as exc:
        print(f"describe failed: {exc}")
        return 1
    store = Path(config.output_dir) / "descriptions"
    save_description_set(dset, store)
    print(f"{len(dset)} class descriptions -> {store}")
    return 0


def _recognition_items(config: RunConfig, manifest: SampleManifest) -> list[tuple[str, int, Path]]:
    """(sample_id, detection_index, image path) triples for the strategy."""
    out = Path(config.output_dir)
    if config.strategy == STRATEGY_BASELINE_O:
        missing = [s.sample_id for s in manifest if s.road_image_path is None]
        if missing:
            raise RecognizerError(
                f"strategy baseline_o needs road images; missing for: {', '.join(missing)}"
            )
        return [(s.sample_id, 0, s.road_image_path) for s in manifest]
    items: list[tuple[str, int, Path]] = []
    detect_index: dict[str, list[int]] | None = None
    detections_path = out / DETECTIONS_FILE
    if detections_path.exists():
        detect_index = {}
        for line in detections_path.read_text(encoding="utf-8").splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            sample_id, index, _bbox, _area = parse_detection_record(line)
            detect_index.setdefault(sample_id, []).append(index)
    for sample in manifest:
        if sample.has_sign_image:
            items.append((sample.sample_id, 0, sample.sign_image_path))
            continue
        if detect_index is None:
            raise RecognizerError(
                f"no detection records under {out}; run the detect stage first"
            )
        indices = detect_index.get(sample.sample_id)
        if indices is None:
            log.warning("sample %s has no detections; skipping", sample.sample_id)
            continue
        for index in indices:
            items.append((sample.sample_id, index, out / "crops" / f"{sample.sample_id}_{index}.png"))
    return items


def cmd_recognize(config: RunConfig, gateway: MllmGateway | None = None) -> int:
    """One result record per (sample, detection); resumes past completed pairs."""
    config.validate()
    catalog, manifest = _load_inputs(config)
    strategy = RecognitionStrategy(config.strategy, max(config.k_list))
    descriptions = None
    if strategy.variant == STRATEGY_FULL:
        store = Path(config.output_dir) / "descriptions"
        try:
            descriptions = load_description_set(store)
        except DescriptionError as exc:
            print(f"recognize failed: {exc}; run the describe stage first")
            return 1
    try:
        items = _recognition_items(config, manifest)
    except RecognizerError as exc:
        print(f"recognize failed: {exc}")
        return 1
    gateway = gateway or build_gateway(config)
    cache = _cache(config)
    results_path = Path(config.output_dir) / "results" / f"{strategy.variant}.jsonl"
    results_path.parent.mkdir(parents=True, exist_ok=True)
    done: set[tuple[str, int]] = set()
    if results_path.exists():
        done = {(r.sample_id, r.detection_index) for r in load_results(results_path)}
    issued = skipped = failures = 0
    with open(results_path, "a", encoding="utf-8") as sink:
        for sample_id, index, image_path in items:
            if (sample_id, index) in done:
                skipped += 1
                continue
            try:
                image = load_image(image_path)
                result = recognize(
                    image,
                    strategy,
                    catalog,
                    gateway,
                    cache,
                    descriptions=descriptions,
                    sample_id=sample_id,
                    detection_index=index,
                )
            except (GatewayError, ImageError, OSError) as exc:
                log.error("recognition failed for %s[%d]: %s", sample_id, index, exc)
                result = RecognitionResult(
                    sample_id=sample_id,
                    detection_index=index,
                    ranked=[],
                    raw_response=f"<recognition failure: {exc}>",
                    strategy=strategy,
                    parse_ok=False,
                )
                failures += 1
            sink.write(result_to_json(result) + "\n")
            sink.flush()
            issued += 1
    print(
        f"{issued} recognized ({failures} backend failure(s)), "
        f"{skipped} already present -> {results_path}"
    )
    return 0


def cmd_evaluate(config: RunConfig) -> int:
    """Top-k reports per strategy found under the run's results directory."""
    config.validate()
    _catalog, manifest = _load_inputs(config)
    results_dir = Path(config.output_dir) / "results"
    result_files = sorted(results_dir.glob("*.jsonl")) if results_dir.exists() else []
    if not result_files:
        print(f"no result records under {results_dir}; run the recognize stage first")
        return 1
    reports_dir = Path(config.output_dir) / "reports"
    reports = []
    for path in result_files:
        results = load_results(path)
        if not results:
            continue
        records = [
            EvalRecord.make(
                r.sample_id, manifest.sample(r.sample_id).ground_truth_class, r.ranked
            )
            for r in results
        ]
        report = build_report(records, _dataset_name(config), path.stem, config.k_list)
        save_report(report, reports_dir / f"report_{report.strategy}.json")
        reports.append(report)
    if not reports:
        print(f"no result records under {results_dir}; run the recognize stage first")
        return 1
    table = render_table(reports)
    reports_dir.mkdir(parents=True, exist_ok=True)
    (reports_dir / "report.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


_COMMANDS = {
    "detect": cmd_detect,
    "describe": cmd_describe,
    "recognize": cmd_recognize,
    "evaluate": cmd_evaluate,
}


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    if args.output is not None:
        config.output_dir = args.output
    if args.backend is not None:
        config.backend = args.backend
    if args.strategy is not None:
        config.strategy = args.strategy
    if args.seed is not None:
        config.subset_seed = args.seed
    if args.subset is not None:
        config.subset_n = args.subset
    return config


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(
        prog="tsrkit",
        description="Traffic sign extraction and in-context MLLM recognition pipeline",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, required=True, help="run config file")
    common.add_argument("--output", type=Path, help="run directory (overrides config)")
    common.add_argument("--backend", choices=["live", "mock"], help="backend override")
    common.add_argument("--strategy", choices=list(STRATEGIES), help="strategy override")
    common.add_argument("--seed", type=int, help="subset sampling seed override")
    common.add_argument("--subset", type=int, help="sample a subset of this size")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("detect", parents=[common], help="extract masks, boxes, and sign crops")
    sub.add_parser("describe", parents=[common], help="generate per-class description texts")
    sub.add_parser("recognize", parents=[common], help="run recognition over crops or scenes")
    sub.add_parser("evaluate", parents=[common], help="compute Top-k reports and tables")
    args = parser.parse_args(argv)
    try:
        config = _apply_overrides(parse_config(args.config), args)
        return _COMMANDS[args.command](config)
    except (ConfigError, DatasetError, MaskError, EvaluatorError, GatewayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
