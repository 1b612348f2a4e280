"""Experiment harness: aggregator sweep, variant comparison, range adherence.

Every run is an independent (dataset, combination, run-index) training job
with seeds derived by hashing those coordinates together with the global
seed, so runs are reproducible in isolation and embarrassingly parallel.
Reports are pure aggregations over the per-run records that get persisted
alongside them.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .aggregators import AGGREGATOR_NAMES
from .data import Dataset, DatasetManifest, load_manifest, load_table, preprocess, \
    synthetic_dataset
from .network import NetworkConfig, build_network
from .stats import make_rank_table, rank_with_ties, wilcoxon_signed_rank
from .training import TrainConfig, TrainingDiverged, train

VARIANTS = {
    "kan": {"aggregator": "sum", "layer_norm": False},
    "kan-layernorm": {"aggregator": "sum", "layer_norm": True},
    "kan-avg": {"aggregator": "mean", "layer_norm": False},
}
COMBO_SEP = "|"
DEFAULT_RUNS = {"sweep": 1, "compare": 20, "adherence": 1}


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str                      # sweep | compare | adherence
    datasets: tuple                # manifest paths or DatasetManifest objects
    variants: tuple = ("kan", "kan-layernorm", "kan-avg")
    aggregators: tuple = AGGREGATOR_NAMES
    runs: int | None = None        # per (dataset, combination); mode default
    iterations: int = 2000
    batch_size: int = 32
    learning_rate: float = 0.01
    hidden_width: int = 10
    seed: int = 0
    strict_replication: bool = False
    out_dir: str | None = None
    parallelism: int = 1

    def runs_per_config(self) -> int:
        return self.runs if self.runs is not None else DEFAULT_RUNS[self.mode]

    def validate(self):
        if self.mode not in DEFAULT_RUNS:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.datasets:
            raise ValueError("need at least one dataset manifest")
        if self.runs_per_config() < 1:
            raise ValueError("runs must be >= 1")
        if self.mode in ("compare", "adherence"):
            unknown = [v for v in self.variants if v not in VARIANTS]
            if unknown:
                raise ValueError(f"unknown variants {unknown}; "
                                 f"choose from {sorted(VARIANTS)}")
        if self.mode == "sweep":
            unknown = [a for a in self.aggregators if a not in AGGREGATOR_NAMES]
            if unknown:
                raise ValueError(f"unknown aggregators {unknown}")


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary coordinates (sha256, not hash())."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def _manifest_of(source) -> DatasetManifest:
    if isinstance(source, DatasetManifest):
        return source
    return load_manifest(source)


def load_dataset(source, data_seed: int, scale_features: bool = True) -> Dataset:
    """Materialize one dataset (file-backed or synthetic) for one run."""
    manifest = _manifest_of(source)
    if manifest.synthetic is not None:
        spec = manifest.synthetic
        return synthetic_dataset(
            kind=spec["kind"], n_features=int(spec["n_features"]),
            n_instances=int(spec["n_instances"]), seed=data_seed,
            n_classes=int(spec.get("n_classes", 3)),
            separation=float(spec.get("separation", 0.35)),
            noise=float(spec.get("noise", 0.12)),
            name=manifest.name)
    raw = load_table(manifest.path, manifest)
    return preprocess(raw, manifest, data_seed, scale_features=scale_features)


@dataclass(frozen=True)
class RunSpec:
    """Everything one worker needs; picklable for process pools."""

    run_id: str
    source: object               # manifest path or DatasetManifest
    dataset_name: str
    label: str                   # "agg1|agg2" combo or variant name
    aggregators: tuple           # per layer transition
    layer_norm: bool
    run_index: int
    base_seed: int
    hidden_width: int
    iterations: int
    batch_size: int
    learning_rate: float
    strict_replication: bool
    trace_adherence: bool


def execute_run(spec: RunSpec) -> dict:
    """Train one network; never raises, failures become failed records."""
    record = {
        "run_id": spec.run_id,
        "dataset": spec.dataset_name,
        "label": spec.label,
        "run_index": spec.run_index,
        "seed": spec.base_seed,
        "status": "ok",
        "error": None,
    }
    try:
        data_seed = derive_seed(spec.base_seed, "data")
        net_seed = derive_seed(spec.base_seed, "net")
        train_seed = derive_seed(spec.base_seed, "train")
        data = load_dataset(spec.source, data_seed,
                            scale_features=not spec.strict_replication)
        head_width = 1 if spec.strict_replication else data.n_classes
        widths = (data.n_features, spec.hidden_width, head_width)
        net = build_network(NetworkConfig(
            widths=widths,
            aggregators=tuple(spec.aggregators),
            layer_norm=spec.layer_norm,
            seed=net_seed,
        ))
        result = train(net, data, TrainConfig(
            iterations=spec.iterations, batch_size=spec.batch_size,
            learning_rate=spec.learning_rate, seed=train_seed,
            trace_adherence=spec.trace_adherence))
        record.update(
            widths=list(widths),
            n_features=data.n_features,
            n_classes=data.n_classes,
            head=result.head,
            feature_scaling=data.scaled,
            layer_norm=spec.layer_norm,
            train_accuracy=result.train_accuracy,
            val_accuracy=result.val_accuracy,
            test_accuracy=result.test_accuracy,
            final_loss=result.loss_curve[-1],
            loss_curve=result.loss_curve,
            adherence=result.adherence,
        )
    except (TrainingDiverged, ValueError, OSError) as exc:
        record["status"] = "failed"
        record["error"] = f"{type(exc).__name__}: {exc}"
    return record


def _build_specs(config: ExperimentConfig) -> list[RunSpec]:
    config.validate()
    specs = []
    runs = config.runs_per_config()
    adherence = config.mode == "adherence"
    for source in config.datasets:
        manifest = _manifest_of(source)
        if config.mode == "sweep":
            labels = [a1 + COMBO_SEP + a2
                      for a1, a2 in product(config.aggregators, repeat=2)]
        else:
            # a variant listed twice shares its runs (self-comparison support)
            labels = list(dict.fromkeys(config.variants))
        for label in labels:
            if config.mode == "sweep":
                aggs = tuple(label.split(COMBO_SEP))
                layer_norm = False
            else:
                variant = VARIANTS[label]
                aggs = (variant["aggregator"],) * 2
                layer_norm = variant["layer_norm"]
            for i in range(runs):
                specs.append(RunSpec(
                    run_id=f"{manifest.name}{COMBO_SEP}{label}{COMBO_SEP}{i}",
                    source=source,
                    dataset_name=manifest.name,
                    label=label,
                    aggregators=aggs,
                    layer_norm=layer_norm,
                    run_index=i,
                    base_seed=derive_seed(config.seed, manifest.name, label, i),
                    hidden_width=config.hidden_width,
                    iterations=config.iterations,
                    batch_size=config.batch_size,
                    learning_rate=config.learning_rate,
                    strict_replication=config.strict_replication,
                    trace_adherence=adherence,
                ))
    return specs


def _execute_all(specs, parallelism: int) -> list[dict]:
    # wall-clock timing stays out of the records so runs.jsonl is reproducible
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(execute_run, specs, chunksize=1))
    else:
        records = [execute_run(s) for s in specs]
    return sorted(records, key=lambda r: r["run_id"])


def _config_payload(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["datasets"] = [_manifest_of(s).name for s in config.datasets]
    d.pop("out_dir")
    d.pop("parallelism")
    d["runs"] = config.runs_per_config()
    return d


def _config_hash(config_payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(config_payload, sort_keys=True).encode()).hexdigest()


def _decisions(config: ExperimentConfig) -> dict:
    return {
        "head": "scalar-index" if config.strict_replication else "softmax",
        "loss": ("squared-error-on-label-index" if config.strict_replication
                 else "softmax-cross-entropy"),
        "feature_scaling": not config.strict_replication,
        "adherence_window": "whole-run",
        "runs_per_config": config.runs_per_config(),
    }


def _base_payload(config: ExperimentConfig, records) -> dict:
    cfg = _config_payload(config)
    return {
        "mode": config.mode,
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "decisions": _decisions(config),
        "failures": [r for r in records if r["status"] == "failed"],
        "n_runs": len(records),
    }


def _grouped_accuracies(records):
    """dataset -> label -> run_index -> test accuracy (successful runs only)."""
    acc = {}
    for r in records:
        if r["status"] != "ok":
            continue
        acc.setdefault(r["dataset"], {}).setdefault(
            r["label"], {})[r["run_index"]] = r["test_accuracy"]
    return acc


def run_sweep(config: ExperimentConfig):
    """Train every (combination, dataset, seed) and rank combinations."""
    specs = _build_specs(config)
    records = _execute_all(specs, config.parallelism)
    acc = _grouped_accuracies(records)
    combos = [a1 + COMBO_SEP + a2
              for a1, a2 in product(config.aggregators, repeat=2)]
    datasets = [_manifest_of(s).name for s in config.datasets]

    mean_acc = {ds: {} for ds in datasets}
    rank_matrix = np.full((len(combos), len(datasets)), np.nan)
    ranks_by_ds = {}
    for d, ds in enumerate(datasets):
        per_combo = acc.get(ds, {})
        present = [c for c in combos if per_combo.get(c)]
        if not present:
            continue
        scores = np.array([float(np.mean(list(per_combo[c].values())))
                           for c in present])
        ranks = rank_with_ties(scores, higher_is_better=True)
        ranks_by_ds[ds] = dict(zip(present, ranks.tolist()))
        for c, s, r in zip(present, scores, ranks):
            mean_acc[ds][c] = float(s)
            rank_matrix[combos.index(c), d] = r

    table = make_rank_table([tuple(c.split(COMBO_SEP)) for c in combos],
                            datasets, rank_matrix)
    order = table.sorted_indices()
    payload = _base_payload(config, records)
    payload.update(
        combinations=combos,
        datasets=datasets,
        mean_test_accuracy=mean_acc,
        ranks={ds: ranks_by_ds.get(ds, {}) for ds in datasets},
        rank_table=[{
            "layer1": table.rows[i][0],
            "layer2": table.rows[i][1],
            "mean_rank": None if np.isnan(table.mean[i]) else round(table.mean[i], 6),
            "std_rank": None if np.isnan(table.std[i]) else round(table.std[i], 6),
            "per_dataset": {ds: (None if np.isnan(table.ranks[i, d]) else table.ranks[i, d])
                            for d, ds in enumerate(datasets)},
        } for i in order.tolist()],
    )
    return payload, records


def run_comparison(config: ExperimentConfig):
    """KAN / KAN+LayerNorm / KAN-AVG comparison with pairwise Wilcoxon tests."""
    specs = _build_specs(config)
    records = _execute_all(specs, config.parallelism)
    acc = _grouped_accuracies(records)
    datasets = [_manifest_of(s).name for s in config.datasets]
    variants = list(config.variants)
    runs = config.runs_per_config()

    summary = {}
    tests = {}
    for ds in datasets:
        per_variant = acc.get(ds, {})
        summary[ds] = {}
        for v in variants:
            vals = [per_variant.get(v, {}).get(i) for i in range(runs)]
            ok = [x for x in vals if x is not None]
            summary[ds][v] = {
                "mean": float(np.mean(ok)) if ok else None,
                "std": float(np.std(ok)) if ok else None,   # population std
                "n": len(ok),
            }
        tests[ds] = {}
        for i, va in enumerate(variants):
            for vb in variants[i + 1:]:
                pair_idx = [k for k in range(runs)
                            if per_variant.get(va, {}).get(k) is not None
                            and per_variant.get(vb, {}).get(k) is not None]
                key = f"{va} vs {vb}"
                if not pair_idx:
                    tests[ds][key] = None
                    continue
                a = [per_variant[va][k] for k in pair_idx]
                b = [per_variant[vb][k] for k in pair_idx]
                res = wilcoxon_signed_rank(a, b)
                tests[ds][key] = {
                    "w_plus": res.w_plus, "w_minus": res.w_minus,
                    "n_effective": res.n_effective, "p_value": res.p_value,
                    "method": res.method, "degenerate": res.degenerate,
                    "significant": res.significant,
                }
                if res.significant:
                    ma, mb = float(np.mean(a)), float(np.mean(b))
                    winner, loser = (va, vb) if ma > mb else (vb, va)
                    summary[ds][winner].setdefault(
                        "significantly_better_than", []).append(loser)
    payload = _base_payload(config, records)
    payload.update(datasets=datasets, variants=variants,
                   accuracy=summary, wilcoxon=tests)
    return payload, records


def run_adherence(config: ExperimentConfig):
    """Pooled in-range fractions of hidden-layer values, per dataset/variant."""
    specs = _build_specs(config)
    records = _execute_all(specs, config.parallelism)
    by_key = {}
    features = {}
    for r in records:
        if r["status"] != "ok" or r.get("adherence") is None:
            continue
        by_key.setdefault((r["dataset"], r["label"]), []).append(r["adherence"])
        features[r["dataset"]] = r["n_features"]
    datasets = sorted(features, key=lambda ds: (features[ds], ds))

    rows = []
    table = {}
    for ds in datasets:
        table[ds] = {"n_features": features[ds], "variants": {}}
        for v in config.variants:
            fractions = by_key.get((ds, v))
            if not fractions:
                continue
            mean_layers = np.mean(np.asarray(fractions), axis=0)
            table[ds]["variants"][v] = mean_layers.tolist()
            for layer, frac in enumerate(mean_layers.tolist()):
                rows.append((ds, features[ds], v, layer, frac))
    payload = _base_payload(config, records)
    payload.update(datasets=datasets, variants=list(config.variants),
                   adherence=table,
                   plot_rows=[list(r) for r in rows])
    return payload, records


def run_experiment(config: ExperimentConfig):
    runner = {"sweep": run_sweep, "compare": run_comparison,
              "adherence": run_adherence}[config.mode]
    return runner(config)


# ---------------------------------------------------------------------------
# report files

def summarize(payload: dict) -> str:
    lines = [f"kanagg {payload['mode']} report  (config {payload['config_hash'][:12]})",
             f"decisions: {json.dumps(payload['decisions'], sort_keys=True)}"]
    if payload["failures"]:
        lines.append(f"FAILED RUNS: {len(payload['failures'])} "
                     f"(see runs.jsonl; exit code is non-zero)")
        for r in payload["failures"]:
            lines.append(f"  {r['run_id']}: {r['error']}")
    if payload["mode"] == "sweep":
        lines.append(f"{'layer1':>10} {'layer2':>10} {'mean rank':>10} {'std':>8}")
        for row in payload["rank_table"]:
            if row["mean_rank"] is None:
                continue
            lines.append(f"{row['layer1']:>10} {row['layer2']:>10} "
                         f"{row['mean_rank']:>10.2f} {row['std_rank']:>8.2f}")
    elif payload["mode"] == "compare":
        variants = payload["variants"]
        lines.append("dataset".ljust(16) + "".join(v.rjust(26) for v in variants))
        for ds in payload["datasets"]:
            cells = []
            for v in variants:
                s = payload["accuracy"][ds][v]
                if s["mean"] is None:
                    cells.append("failed".rjust(26))
                else:
                    marks = "*" * len(s.get("significantly_better_than", []))
                    cells.append(f"{100 * s['mean']:.2f}% ±{100 * s['std']:.2f}"
                                 f"{marks}".rjust(26))
            lines.append(ds.ljust(16) + "".join(cells))
        lines.append("(one * per variant beaten with p < 0.05)")
    elif payload["mode"] == "adherence":
        lines.append("dataset".ljust(16) + "features".rjust(9)
                     + "".join(v.rjust(16) for v in payload["variants"]))
        for ds in payload["datasets"]:
            info = payload["adherence"][ds]
            cells = []
            for v in payload["variants"]:
                fracs = info["variants"].get(v)
                cells.append(("/".join(f"{f:.4f}" for f in fracs) if fracs
                              else "failed").rjust(16))
            lines.append(ds.ljust(16) + str(info["n_features"]).rjust(9)
                         + "".join(cells))
    return "\n".join(lines) + "\n"


def write_report(payload: dict, records, out_dir) -> Path:
    """Persist report.json (payload + timestamp header), runs.jsonl, summary.txt
    and, for adherence mode, the plot-data TSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "header": {"created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                   "tool": f"kanagg {__version__}"},
        "payload": payload,
    }
    (out / "report.json").write_text(json.dumps(doc, sort_keys=True, indent=1))
    with open(out / "runs.jsonl", "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    (out / "summary.txt").write_text(summarize(payload))
    if payload["mode"] == "adherence":
        with open(out / "adherence.tsv", "w") as f:
            f.write("dataset\tn_features\tvariant\tlayer\tfraction\n")
            for ds, nf, v, layer, frac in payload["plot_rows"]:
                f.write(f"{ds}\t{nf}\t{v}\t{layer}\t{frac:.6f}\n")
    return out
