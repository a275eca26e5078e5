"""Batch command-line surface.

Subcommands: preprocess, segment, glcm, synth, train, eval, bench.  Every
command resolves its options from defaults < --config file < explicit
flags, writes the resolved key=value configuration beside its outputs, and
holds a lockfile so one process owns an output directory at a time.

Exit codes: 0 success, 1 usage error, 2 data error, 3 budget/config error.

Timing columns (elapsed_ms) and PNG figures are diagnostic; every other
output is byte-reproducible from (inputs, resolved config, seed).
"""

import argparse
import math
import os
import sys
import time

import numpy as np

from . import fusion, glcm, haralick, imagio, metrics, otsu, report, synth, wsa
from .errors import BudgetError, ConfigError, VoltexError

MODEL_MODE = {
    "2d": "glcm2d",
    "2.5d": "glcm2_5d",
    "3d": "glcm3d",
    "dirstack": "glcm3d",
}
SEQUENCE_BUILDERS = {
    "2.5d": glcm.sequence_2_5d,
    "3d": glcm.sequence_3d,
    "dirstack": glcm.stack_by_direction,
}
DEFAULT_LEVELS = {"2d": 256, "2.5d": 256, "3d": 32, "dirstack": 32}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _parse_bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _read_config_file(path):
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return values


def _resolve(args, schema):
    """defaults < config file < explicit flags; returns a plain dict."""
    file_values = _read_config_file(args.config) if args.config else {}
    resolved = {}
    for key, (default, coerce) in schema.items():
        cli_value = getattr(args, key.replace("-", "_"), None)
        if cli_value is not None:
            resolved[key] = cli_value
        elif key in file_values:
            resolved[key] = coerce(file_values[key])
        else:
            resolved[key] = default
    return resolved


class _Lock:
    """One CLI process per output directory."""

    def __init__(self, out_dir):
        self.path = os.path.join(out_dir, ".voltex.lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"output directory is locked by another run: {self.path}"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc_info):
        try:
            os.unlink(self.path)
        except OSError:
            pass
        return False


def _prepare_out(resolved, args):
    out = args.out or resolved.get("out") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_resolved(out, command, resolved, seed):
    mapping = dict(resolved)
    mapping["command"] = command
    mapping["seed"] = seed
    report.write_config(os.path.join(out, "resolved_config.txt"), mapping)


def _load_input(path):
    """Dispatch on extension: .pgm loads an image, anything else a manifest."""
    if path.lower().endswith(".pgm"):
        return imagio.load_image(path)
    return imagio.load_volume(path)


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------

PREPROCESS_SCHEMA = {
    "input": (None, str),
    "window-low": (-1000.0, float),
    "window-high": (400.0, float),
    "median-radius": (1, int),
    "levels": (256, int),
    "name": ("preprocessed", str),
}


def cmd_preprocess(args):
    resolved = _resolve(args, PREPROCESS_SCHEMA)
    if not resolved["input"]:
        raise ConfigError("preprocess requires --input")
    seed = args.seed if args.seed is not None else 0
    out = _prepare_out(resolved, args)
    with _Lock(out):
        vol = imagio.load_volume(resolved["input"])
        windowed = args.window_low is not None or args.window_high is not None
        if vol.levels is None or windowed:
            vol = imagio.window_rescale(
                vol, resolved["window-low"], resolved["window-high"]
            )
        if resolved["median-radius"] > 0:
            vol = imagio.median_filter_volume(
                vol, imagio.MedianFilterSpec(resolved["median-radius"])
            )
        if resolved["levels"] < vol.levels:
            vol = imagio.quantize(
                vol, imagio.QuantizationSpec(vol.levels, resolved["levels"])
            )
        manifest = os.path.join(out, resolved["name"] + ".mf")
        imagio.save_volume(vol, manifest)
        _write_resolved(out, "preprocess", resolved, seed)
        print(f"wrote {manifest}: dims={vol.depth},{vol.height},{vol.width} "
              f"levels={vol.levels}")
    return 0


# ---------------------------------------------------------------------------
# segment
# ---------------------------------------------------------------------------

SEGMENT_SCHEMA = {
    "input": (None, str),
    "m": (2, int),
    "method": ("wsa", str),
    "population": (wsa.DEFAULT_POPULATION, int),
    "territories": (wsa.DEFAULT_TERRITORIES, int),
    "iterations": (wsa.DEFAULT_ITERATIONS, int),
    "mating-probability": (wsa.DEFAULT_MATING_PROBABILITY, float),
    "budget": (otsu.EXHAUSTIVE_BUDGET, int),
}


def cmd_segment(args):
    resolved = _resolve(args, SEGMENT_SCHEMA)
    if not resolved["input"]:
        raise ConfigError("segment requires --input")
    if resolved["method"] not in ("wsa", "exhaustive"):
        raise ConfigError(f"unknown method {resolved['method']!r}")
    seed = args.seed if args.seed is not None else 0
    out = _prepare_out(resolved, args)
    with _Lock(out):
        obj = _load_input(resolved["input"])
        hist = imagio.histogram(obj)
        if resolved["method"] == "wsa":
            config = wsa.WsaConfig(
                m=resolved["m"],
                population_size=resolved["population"],
                territories=resolved["territories"],
                max_iterations=resolved["iterations"],
                mating_probability=resolved["mating-probability"],
                seed=seed,
            )
            cuts, fitness, trace = wsa.optimize(hist, config)
            report.write_trace_csv(os.path.join(out, "trace.csv"), trace)
            report.fig_convergence(trace, os.path.join(out, "convergence.png"))
            evaluations = trace.total_evaluations
        else:
            cuts, fitness = otsu.exhaustive_optimize(
                hist, resolved["m"], budget=resolved["budget"]
            )
            evaluations = math.comb(hist.levels - 1, resolved["m"])

        report.write_csv(os.path.join(out, "thresholds.csv"), ["cut"],
                         [(int(c),) for c in cuts])
        data = obj.voxels if isinstance(obj, imagio.Volume) else obj.pixels
        labels = wsa.apply_thresholds(data, cuts)
        if isinstance(obj, imagio.Volume):
            mask = imagio.Volume(voxels=labels.astype(np.int64),
                                 spacing_mm=obj.spacing_mm, levels=resolved["m"] + 1)
            imagio.save_volume(mask, os.path.join(out, "mask.mf"))
        else:
            imagio.save_image(
                imagio.GrayImage(pixels=labels.astype(np.int64), levels=256),
                os.path.join(out, "mask.pgm"),
            )
        _write_resolved(out, "segment", resolved, seed)
        print(f"method={resolved['method']} cuts={[int(c) for c in cuts]} "
              f"fitness={fitness:.6f} evaluations={evaluations}")
    return 0


# ---------------------------------------------------------------------------
# glcm
# ---------------------------------------------------------------------------

GLCM_SCHEMA = {
    "input": (None, str),
    "mode": ("3d", str),
    "levels": (None, int),
    "symmetric": (False, _parse_bool),
    "distance": (1, int),
    "descriptors": (False, _parse_bool),
    "mask": (None, str),
    "slice": (None, int),
    "name": ("sequence", str),
}


def _quantize_to(obj, levels):
    current = obj.levels
    if current is None:
        raise ConfigError("input is raw signed data; run preprocess first")
    if current <= levels:
        return obj
    return imagio.quantize(obj, imagio.QuantizationSpec(current, levels))


def _build_sequence(obj, mode, levels, symmetric, distance, mask, slice_index):
    if mode == "2d":
        if isinstance(obj, imagio.Volume):
            z = slice_index if slice_index is not None else obj.depth // 2
            if not 0 <= z < obj.depth:
                raise ConfigError(f"slice {z} outside volume depth {obj.depth}")
            image = imagio.GrayImage(pixels=obj.voxels[z], levels=obj.levels)
            slice_mask = None if mask is None else mask[z]
        else:
            image, slice_mask = obj, mask
        return glcm.sequence_2d(image, levels, symmetric=symmetric,
                                distance=distance, mask=slice_mask)
    if not isinstance(obj, imagio.Volume):
        raise ConfigError(f"mode {mode} needs a volume input")
    builder = SEQUENCE_BUILDERS[mode]
    return builder(obj, levels, symmetric=symmetric, distance=distance, mask=mask)


def cmd_glcm(args):
    resolved = _resolve(args, GLCM_SCHEMA)
    if not resolved["input"]:
        raise ConfigError("glcm requires --input")
    mode = resolved["mode"]
    if mode not in MODEL_MODE:
        raise ConfigError(f"unknown mode {mode!r}")
    if resolved["levels"] is None:
        resolved["levels"] = DEFAULT_LEVELS[mode]
    seed = args.seed if args.seed is not None else 0
    out = _prepare_out(resolved, args)
    with _Lock(out):
        obj = _load_input(resolved["input"])
        obj = _quantize_to(obj, resolved["levels"])
        mask = None
        if resolved["mask"]:
            mask_vol = imagio.load_volume(resolved["mask"])
            mask = mask_vol.voxels != 0
        seq = _build_sequence(obj, mode, resolved["levels"], resolved["symmetric"],
                              resolved["distance"], mask, resolved["slice"])
        if resolved["descriptors"]:
            seq = haralick.sequence_descriptors(seq)
            report.write_descriptor_csv(
                os.path.join(out, resolved["name"] + "_descriptors.csv"),
                seq, haralick.DESCRIPTOR_NAMES,
            )
        path = os.path.join(out, resolved["name"] + ".seq")
        glcm.save_sequence(seq, path)
        _write_resolved(out, "glcm", resolved, seed)
        print(f"wrote {path}: mode={seq.mode} timesteps={seq.timesteps} "
              f"f={seq.feature_size} levels={seq.levels}")
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

SYNTH_SCHEMA = {
    "per-class": (20, int),
    "dims": ("12,16,16", str),
    "stats-levels": (8, int),
}


def _contrast_stats(out, spec, entries, levels):
    """Mean 3D co-occurrence contrast per volume, aggregated per class."""
    per_class = {c: [] for c in range(len(synth.CLASS_NAMES))}
    for name, label in entries:
        vol = imagio.load_volume(os.path.join(out, name))
        quant = imagio.quantize(vol, imagio.QuantizationSpec(vol.levels, levels))
        seq = glcm.sequence_3d(quant, levels)
        values = [haralick.haralick(g).contrast
                  for step in seq.glcms for g in step if not g.empty]
        per_class[label].append(float(np.mean(values)))
    rows = []
    for c, name in enumerate(synth.CLASS_NAMES):
        vals = np.array(per_class[c])
        rows.append((name, float(vals.mean()), float(vals.std())))
    return rows


def cmd_synth(args):
    resolved = _resolve(args, SYNTH_SCHEMA)
    seed = args.seed if args.seed is not None else 0
    out = _prepare_out(resolved, args)
    with _Lock(out):
        dims = tuple(int(v) for v in resolved["dims"].split(","))
        if len(dims) != 3:
            raise ConfigError(f"dims must be D,H,W, got {resolved['dims']!r}")
        spec = synth.SyntheticSpec(
            volumes_per_class=resolved["per-class"],
            depth=dims[0], height=dims[1], width=dims[2], seed=seed,
        )
        entries = synth.generate_dataset(spec, out)
        stats = _contrast_stats(out, spec, entries, resolved["stats-levels"])
        report.write_csv(os.path.join(out, "synth_stats.csv"),
                         ["class", "contrast_mean", "contrast_std"], stats)
        _write_resolved(out, "synth", resolved, seed)
        print(f"wrote {len(entries)} volumes to {out}")
        for name, mean, std in stats:
            print(f"  {name}: contrast mean={mean:.4f} std={std:.4f}")
    return 0


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------

TRAIN_SCHEMA = {
    "data": (None, str),
    "mode": ("3d", str),
    "levels": (8, int),
    "symmetric": (False, _parse_bool),
    "distance": (1, int),
    "descriptors": (False, _parse_bool),
    "slice": (None, int),
    "split": (0.8, float),
    "kfold": (None, int),
    "epochs": (60, int),
    "lr": (1.0, float),
    "batch": (8, int),
    "hidden": (128, int),
    "dense": (32, int),
    "activation": ("relu", str),
    "init-scale": (0.08, float),
    "shared-weights": (True, _parse_bool),
}


def _load_dataset(data_dir, resolved):
    entries = synth.load_labels(data_dir)
    sequences, labels = [], []
    for name, label in entries:
        vol = imagio.load_volume(os.path.join(data_dir, name))
        vol = _quantize_to(vol, resolved["levels"])
        seq = _build_sequence(vol, resolved["mode"], resolved["levels"],
                              resolved["symmetric"], resolved["distance"],
                              None, resolved["slice"])
        if resolved["descriptors"]:
            seq = haralick.sequence_descriptors(seq)
        sequences.append(seq)
        labels.append(label)
    if resolved["mode"] == "2.5d":
        sequences = glcm.pad_sequences(sequences)
    return entries, list(zip(sequences, labels))


def _train_once(dataset, resolved, seed):
    model = fusion.build_model(
        MODEL_MODE[resolved["mode"]],
        dataset[0][0].feature_size,
        hidden_size=resolved["hidden"],
        dense_size=resolved["dense"],
        cell_activation=resolved["activation"],
        seed=seed,
        init_scale=resolved["init-scale"],
        shared_weights=resolved["shared-weights"],
        timesteps=None if resolved["shared-weights"] else dataset[0][0].timesteps,
    )
    config = fusion.TrainConfig(
        learning_rate=resolved["lr"], epochs=resolved["epochs"],
        batch_size=resolved["batch"], seed=seed,
        init_scale=resolved["init-scale"],
    )
    trace = fusion.train(model, dataset, config)
    return model, trace


def cmd_train(args):
    resolved = _resolve(args, TRAIN_SCHEMA)
    if not resolved["data"]:
        raise ConfigError("train requires --data")
    if resolved["mode"] not in MODEL_MODE:
        raise ConfigError(f"unknown mode {resolved['mode']!r}")
    seed = args.seed if args.seed is not None else 0
    out = _prepare_out(resolved, args)
    with _Lock(out):
        entries, dataset = _load_dataset(resolved["data"], resolved)
        n = len(dataset)

        if resolved["kfold"]:
            folds = metrics.kfold_split(n, k=resolved["kfold"], seed=seed)
            rows = []
            for fold in range(resolved["kfold"]):
                train_set = [dataset[i] for i in range(n) if folds[i] != fold]
                test_set = [dataset[i] for i in range(n) if folds[i] == fold]
                model, _ = _train_once(train_set, resolved, seed)
                _, acc = fusion.evaluate(model, test_set)
                fusion.save_model(model, os.path.join(out, f"checkpoint_fold{fold}.tfuse"))
                rows.append((fold, len(train_set), len(test_set), acc))
                print(f"fold {fold}: test accuracy {acc:.3f}")
            report.write_csv(os.path.join(out, "kfold_metrics.csv"),
                             ["fold", "n_train", "n_test", "accuracy"], rows)
            mean_acc = float(np.mean([r[3] for r in rows]))
            print(f"kfold mean accuracy {mean_acc:.3f}")
        else:
            rng = np.random.default_rng(seed)
            order = rng.permutation(n)
            n_train = int(round(resolved["split"] * n))
            roles = ["test"] * n
            for i in order[:n_train]:
                roles[int(i)] = "train"
            report.write_csv(os.path.join(out, "split.csv"), ["manifest", "role"],
                             [(entries[i][0], roles[i]) for i in range(n)])
            train_set = [dataset[i] for i in range(n) if roles[i] == "train"]
            model, trace = _train_once(train_set, resolved, seed)
            fusion.save_model(model, os.path.join(out, "checkpoint.tfuse"))
            report.write_train_trace_csv(os.path.join(out, "train_trace.csv"), trace)
            report.fig_training(trace, os.path.join(out, "training_curve.png"))
            print(f"split: {len(train_set)} train / {n - len(train_set)} test")
            print(f"final train accuracy {trace[-1][2]:.3f}")
        _write_resolved(out, "train", resolved, seed)
    return 0


EVAL_SCHEMA = {
    "data": (None, str),
    "train-dir": (None, str),
    "split": ("test", str),
}


def cmd_eval(args):
    resolved = _resolve(args, EVAL_SCHEMA)
    if not resolved["data"] or not resolved["train-dir"]:
        raise ConfigError("eval requires --data and --train-dir")
    if resolved["split"] not in ("train", "test", "all"):
        raise ConfigError("eval --split must be train, test, or all")
    seed = args.seed if args.seed is not None else 0
    out = _prepare_out(resolved, args)
    train_dir = resolved["train-dir"]

    train_config = _read_config_file(os.path.join(train_dir, "resolved_config.txt"))
    feature_config = {
        "mode": train_config["mode"],
        "levels": int(train_config["levels"]),
        "symmetric": _parse_bool(train_config["symmetric"]),
        "distance": int(train_config["distance"]),
        "descriptors": _parse_bool(train_config["descriptors"]),
        "slice": None if train_config.get("slice", "None") == "None"
                 else int(train_config["slice"]),
    }

    with _Lock(out):
        model = fusion.load_model(os.path.join(train_dir, "checkpoint.tfuse"))
        entries, dataset = _load_dataset(resolved["data"], feature_config)

        roles = {}
        split_path = os.path.join(train_dir, "split.csv")
        try:
            fh = open(split_path, "r", encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"train dir has no split.csv: {exc}") from exc
        with fh:
            fh.readline()
            for line in fh:
                line = line.strip()
                if line:
                    name, role = line.rsplit(",", 1)
                    roles[name] = role
        n_train = sum(1 for r in roles.values() if r == "train")
        n_test = sum(1 for r in roles.values() if r == "test")

        chosen = [
            i for i, (name, _) in enumerate(entries)
            if resolved["split"] == "all" or roles.get(name) == resolved["split"]
        ]
        if not chosen:
            raise ConfigError(f"no items in split {resolved['split']!r}")

        t0 = time.perf_counter()
        samples, true_labels, pred_labels = [], [], []
        for i in chosen:
            seq, label = dataset[i]
            pred, probs = fusion.predict(model, seq)
            samples.append(metrics.ScoredSample(scores=probs, label=label))
            true_labels.append(label)
            pred_labels.append(pred)
        total_ms = (time.perf_counter() - t0) * 1000.0

        matrix = metrics.confusion_matrix(true_labels, pred_labels,
                                          n_classes=model.class_count)
        plain_acc = float(np.trace(matrix) / matrix.sum())
        rates = metrics.ovr_rates(matrix)

        # per-class curves; classes without a positive and a negative in this
        # split are reported undefined rather than dropped silently
        names = fusion.LABEL_NAMES
        curves = {}
        per_class_auc = {}
        for k, name in enumerate(names):
            try:
                points, auc = metrics.roc_curve(samples, k)
            except metrics.DegenerateError:
                per_class_auc[name] = None
                continue
            per_class_auc[name] = auc
            curves[name] = (points, auc)
            report.write_roc_csv(os.path.join(out, f"roc_{name}.csv"), points, auc)
        defined = [v for v in per_class_auc.values() if v is not None]
        macro_auc = float(np.mean(defined)) if defined else None
        try:
            micro_auc = metrics.micro_ovr_auc(samples)
        except metrics.DegenerateError:
            micro_auc = None

        def fmt(value):
            return "undefined" if value is None else value

        items = [
            ("n_dataset", len(entries)),
            ("n_train_split", n_train),
            ("n_test_split", n_test),
            ("n_evaluated", len(chosen)),
            ("eval_split", resolved["split"]),
            ("accuracy_plain", plain_acc),
            ("accuracy_macro_ovr", rates.macro_accuracy),
            ("sensitivity_macro", rates.macro_sensitivity),
            ("specificity_macro", rates.macro_specificity),
            ("auc_macro", fmt(macro_auc)),
            ("auc_micro", fmt(micro_auc)),
        ]
        f1_values = []
        for k, name in enumerate(names):
            counts = metrics.ovr_counts(matrix, k)
            try:
                value = metrics.f1(counts)
                f1_values.append(value)
            except VoltexError:
                value = "undefined"
            items.append((f"f1_{name}", value))
            items.append((f"auc_{name}", fmt(per_class_auc[name])))
        if f1_values:
            items.append(("f1_macro", float(np.mean(f1_values))))

        report.write_metrics_csv(os.path.join(out, "metrics.csv"), items)
        report.write_confusion_csv(os.path.join(out, "confusion.csv"), matrix, names)
        if curves:
            report.fig_roc(curves, os.path.join(out, "roc.png"))
        report.write_csv(os.path.join(out, "eval_timing.csv"),
                         ["total_ms", "per_item_ms"],
                         [(total_ms, total_ms / len(chosen))])
        _write_resolved(out, "eval", resolved, seed)
        print(f"evaluated {len(chosen)} items ({resolved['split']} split; "
              f"split sizes {n_train} train / {n_test} test)")
        print(f"accuracy plain={plain_acc:.3f} macro_ovr={rates.macro_accuracy:.3f} "
              f"auc macro={macro_auc:.3f} micro={micro_auc:.3f}")
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

BENCH_SCHEMA = {
    "bins": (64, int),
    "hists": (5, int),
    "hist-dir": (None, str),
    "m-list": ("1,2,3", str),
    "methods": ("wsa,exhaustive", str),
    "repeats": (3, int),
    "population": (wsa.DEFAULT_POPULATION, int),
    "territories": (wsa.DEFAULT_TERRITORIES, int),
    "iterations": (wsa.DEFAULT_ITERATIONS, int),
    "mating-probability": (wsa.DEFAULT_MATING_PROBABILITY, float),
    "budget": (otsu.EXHAUSTIVE_BUDGET, int),
}


def _bench_histograms(resolved, out, seed):
    """Load CSV histograms from --hist-dir, or generate and save a corpus."""
    hist_dir = resolved["hist-dir"]
    if hist_dir:
        names = sorted(n for n in os.listdir(hist_dir) if n.endswith(".csv"))
        if not names:
            raise ConfigError(f"no .csv histograms in {hist_dir}")
        corpus = []
        for name in names:
            counts = np.loadtxt(os.path.join(hist_dir, name), dtype=np.int64,
                                delimiter=",", skiprows=1, ndmin=1)
            corpus.append((name, otsu.Histogram(counts=counts)))
        return corpus
    gen_dir = os.path.join(out, "hists")
    os.makedirs(gen_dir, exist_ok=True)
    corpus = []
    for i in range(resolved["hists"]):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(i,))
        )
        counts = rng.integers(0, 1000, size=resolved["bins"])
        name = f"hist_{i:03d}.csv"
        report.write_csv(os.path.join(gen_dir, name), ["count"],
                         [(int(c),) for c in counts])
        corpus.append((name, otsu.Histogram(counts=counts)))
    return corpus


def cmd_bench(args):
    resolved = _resolve(args, BENCH_SCHEMA)
    seed = args.seed if args.seed is not None else 0
    out = _prepare_out(resolved, args)
    with _Lock(out):
        corpus = _bench_histograms(resolved, out, seed)
        m_list = [int(v) for v in resolved["m-list"].split(",")]
        methods = [v.strip() for v in resolved["methods"].split(",")]

        rows = []
        skipped = []
        wsa_evals = {}
        for hist_name, hist in corpus:
            for m in m_list:
                for method in methods:
                    for rep in range(resolved["repeats"]):
                        t0 = time.perf_counter()
                        if method == "wsa":
                            config = wsa.WsaConfig(
                                m=m,
                                population_size=resolved["population"],
                                territories=resolved["territories"],
                                max_iterations=resolved["iterations"],
                                mating_probability=resolved["mating-probability"],
                                seed=seed + rep,
                            )
                            _, fitness, trace = wsa.optimize(hist, config)
                            evaluations = trace.total_evaluations
                            wsa_evals.setdefault(m, []).append(evaluations)
                        elif method == "exhaustive":
                            try:
                                _, fitness = otsu.exhaustive_optimize(
                                    hist, m, budget=resolved["budget"]
                                )
                            except BudgetError as exc:
                                skipped.append((hist_name, m, str(exc)))
                                print(f"skip exhaustive {hist_name} m={m}: {exc}",
                                      file=sys.stderr)
                                break
                            evaluations = math.comb(hist.levels - 1, m)
                        else:
                            raise ConfigError(f"unknown method {method!r}")
                        elapsed = (time.perf_counter() - t0) * 1000.0
                        rows.append((hist_name, m, method, rep,
                                     fitness, evaluations, elapsed))

        report.write_csv(
            os.path.join(out, "bench.csv"),
            ["hist", "m", "method", "repeat", "fitness", "evaluations", "elapsed_ms"],
            rows,
        )
        if rows:
            report.fig_bench(rows, os.path.join(out, "bench_times.png"))

        summary = []
        levels = corpus[0][1].levels
        for m in m_list:
            combos = math.comb(levels - 1, m)
            if m in wsa_evals:
                max_evals = max(wsa_evals[m])
                ratio = combos / max_evals
                summary.append(
                    f"m={m}: wsa evaluations <= {max_evals}, exhaustive "
                    f"combinations C({levels - 1},{m}) = {combos}, "
                    f"ratio = {ratio:.6g}"
                )
        for hist_name, m, why in skipped:
            summary.append(f"skipped exhaustive: {hist_name} m={m}: {why}")
        text = "\n".join(summary) + "\n"
        with open(os.path.join(out, "bench_summary.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)
        print(text, end="")
        _write_resolved(out, "bench", resolved, seed)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--out", default=None)
    sub.add_argument("--config", default=None,
                     help="key=value file; explicit flags win")


def build_parser():
    parser = _Parser(prog="voltex",
                     description="volumetric texture analysis toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("preprocess", help="window, denoise, and quantize a volume")
    _add_common(p)
    p.add_argument("--input")
    p.add_argument("--window-low", type=float, default=None)
    p.add_argument("--window-high", type=float, default=None)
    p.add_argument("--median-radius", type=int, default=None)
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--name", default=None)
    p.set_defaults(func=cmd_preprocess)

    p = subs.add_parser("segment", help="multilevel threshold detection")
    _add_common(p)
    p.add_argument("--input")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--method", choices=("wsa", "exhaustive"), default=None)
    p.add_argument("--population", type=int, default=None)
    p.add_argument("--territories", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--mating-probability", type=float, default=None)
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(func=cmd_segment)

    p = subs.add_parser("glcm", help="co-occurrence sequence extraction")
    _add_common(p)
    p.add_argument("--input")
    p.add_argument("--mode", choices=tuple(MODEL_MODE), default=None)
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--symmetric", action="store_const", const=True, default=None)
    p.add_argument("--distance", type=int, default=None)
    p.add_argument("--descriptors", action="store_const", const=True, default=None)
    p.add_argument("--mask", default=None)
    p.add_argument("--slice", type=int, default=None)
    p.add_argument("--name", default=None)
    p.set_defaults(func=cmd_glcm)

    p = subs.add_parser("synth", help="generate the synthetic tri-class dataset")
    _add_common(p)
    p.add_argument("--per-class", type=int, default=None)
    p.add_argument("--dims", default=None)
    p.add_argument("--stats-levels", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("train", help="train the fusion classifier")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--mode", choices=tuple(MODEL_MODE), default=None)
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--symmetric", action="store_const", const=True, default=None)
    p.add_argument("--distance", type=int, default=None)
    p.add_argument("--descriptors", action="store_const", const=True, default=None)
    p.add_argument("--slice", type=int, default=None)
    p.add_argument("--split", type=float, default=None)
    p.add_argument("--kfold", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--dense", type=int, default=None)
    p.add_argument("--activation", choices=("relu", "tanh"), default=None)
    p.add_argument("--init-scale", type=float, default=None)
    p.add_argument("--shared-weights", type=_parse_bool, default=None)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="evaluate a checkpoint and emit reports")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--train-dir")
    p.add_argument("--split", choices=("train", "test", "all"), default=None)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("bench", help="threshold-search benchmark CSVs")
    _add_common(p)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--hists", type=int, default=None)
    p.add_argument("--hist-dir", default=None)
    p.add_argument("--m-list", default=None)
    p.add_argument("--methods", default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--population", type=int, default=None)
    p.add_argument("--territories", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--mating-probability", type=float, default=None)
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BudgetError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except VoltexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
