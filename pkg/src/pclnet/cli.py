"""Command-line orchestration of the full pipeline.

Each subcommand runs one stage and exchanges data with the others through
files in the output directory:

    synth    -> scene.t3b, labels.lbl
    cluster  -> assignments.csv
    collect  -> dataset.pds, manifest.csv
    pretrain -> encoder.ckpt, loss_trace.csv
    finetune -> classifier.ckpt, train_samples.csv
    predict  -> predicted.lbl, predicted.png
    eval     -> report.txt, confusion.csv
    features -> features.csv
    selfcheck (no outputs; exit status only)

Every stage writes `effective_config.cfg` next to its outputs. The
PCLNET_LOG environment variable (error, info, debug) controls verbosity.
"""

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from pclnet import classify, cluster, config as config_mod, contrastive
from pclnet import diversity, fileio, nn, polsar

log = logging.getLogger("pclnet")


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("PCLNET_LOG", "info"),
                                         logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")


def _load_config(args):
    if args.config:
        if not Path(args.config).exists():
            raise FileNotFoundError(f"config not found: {args.config}")
        cfg = config_mod.parse_config(args.config)
    else:
        cfg = config_mod.default_config()
    if args.seed is not None:
        values = {s: dict(v) for s, v in cfg.values}
        values["run"]["seed"] = args.seed
        cfg = config_mod.RunConfig(tuple((s, tuple(sorted(v.items())))
                                         for s, v in sorted(values.items())))
    return cfg


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out, cfg):
    (out / "effective_config.cfg").write_text(config_mod.format_config(cfg))


def _require(path, what):
    if not path or not Path(path).exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return Path(path)


def _scene_path(args, cfg, out):
    return args.scene or cfg.get("paths", "scene") or str(out / "scene.t3b")


def _labels_path(args, cfg, out):
    return args.labels or cfg.get("paths", "labels") or str(out / "labels.lbl")


def _encoder_plan(cfg):
    return nn.EncoderPlan(patch_size=cfg.get("run", "patch_size"))


def cmd_synth(args, cfg, out):
    synth = cfg.section("synth")
    covs = polsar.default_class_covariances(synth["num_classes"])
    spec = polsar.vertical_band_spec(synth["height"], synth["width"], covs,
                                     synth["looks"],
                                     seed=cfg.get("run", "seed"))
    scene, labels = polsar.synth_scene(spec)
    fileio.write_scene(out / "scene.t3b", scene)
    fileio.write_labels(out / "labels.lbl", labels)
    log.info("wrote %s and %s", out / "scene.t3b", out / "labels.lbl")


def _cluster_scene(scene, cfg):
    stride = cfg.get("run", "candidate_stride")
    patch_size = cfg.get("run", "patch_size")
    positions = diversity.candidate_positions(scene.height, scene.width, stride)
    mats = polsar.patch_mean_coherency_many(scene, positions, patch_size)
    rng = np.random.default_rng([cfg.get("run", "seed"), 1001])
    model = cluster.wishart_cluster(mats, cfg.get("cluster", "num_clusters"),
                                    cfg.get("cluster", "max_iter"), rng)
    return positions, mats, model


def cmd_cluster(args, cfg, out):
    scene = fileio.read_scene(_require(_scene_path(args, cfg, out), "scene"))
    positions, mats, model = _cluster_scene(scene, cfg)
    cluster.export_assignments_csv(out / "assignments.csv", model, mats)
    log.info("clustered %d candidates into %d clusters (%d iterations)",
             len(positions), model.num_clusters, model.iterations_run)


def cmd_collect(args, cfg, out):
    scene = fileio.read_scene(_require(_scene_path(args, cfg, out), "scene"))
    positions, mats, model = _cluster_scene(scene, cfg)
    dataset = diversity.collect_dataset(
        scene, model, positions, cfg.get("diversity", "gamma"),
        cfg.get("diversity", "samples_per_cluster"),
        cfg.get("run", "patch_size"), cfg.get("run", "seed"))
    mean, std = scene.channel_stats()
    patches = polsar.standardize_patches(dataset.patches, mean, std)
    fileio.write_patches(out / "dataset.pds", patches)
    diversity.write_manifest_csv(out / "manifest.csv", dataset)
    log.info("collected %d pretraining samples", len(dataset))


def cmd_pretrain(args, cfg, out):
    patches = fileio.read_patches(_require(out / "dataset.pds", "dataset"))
    plan = _encoder_plan(cfg)
    result = contrastive.pretrain(patches, cfg.pretrain_config(), plan)
    fileio.write_checkpoint(out / "encoder.ckpt", result.theta)
    contrastive.write_loss_trace_csv(out / "loss_trace.csv", result.trace)
    log.info("pretraining finished; %d steps traced", len(result.trace))


def _labeled_shot_positions(labels, shots, seed):
    rng = np.random.default_rng([seed, 5005])
    picks = []
    for c in range(1, labels.num_classes + 1):
        rows, cols = np.nonzero(labels.labels == c)
        if len(rows) == 0:
            raise ValueError(f"uncovered class: {c}")
        take = min(shots, len(rows))
        idx = rng.choice(len(rows), size=take, replace=False)
        picks.extend((int(rows[i]), int(cols[i]), c) for i in sorted(idx))
    return picks


def cmd_finetune(args, cfg, out):
    scene = fileio.read_scene(_require(_scene_path(args, cfg, out), "scene"))
    labels = fileio.read_labels(_require(_labels_path(args, cfg, out), "labels"))
    ckpt = _require(args.ckpt or out / "encoder.ckpt", "checkpoint")
    theta = fileio.read_checkpoint(ckpt)
    plan = _encoder_plan(cfg)
    ft = cfg.section("finetune")
    shots = args.shots or ft["shots_per_class"]
    picks = _labeled_shot_positions(labels, shots, cfg.get("run", "seed"))
    positions = np.array([(r, c) for r, c, _ in picks])
    targets = np.array([cls for _, _, cls in picks])
    patches = polsar.extract_patches(scene, positions,
                                     cfg.get("run", "patch_size"))
    mean, std = scene.channel_stats()
    patches = polsar.standardize_patches(patches, mean, std)
    clf = classify.finetune(theta, patches, targets, labels.num_classes, plan,
                            epochs=ft["epochs"],
                            learning_rate=ft["learning_rate"],
                            batch_size=ft["batch_size"],
                            seed=cfg.get("run", "seed"))
    fileio.write_checkpoint(out / "classifier.ckpt",
                            {"linear.w": clf.weights, "linear.b": clf.biases})
    with open(out / "train_samples.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "label"])
        writer.writerows(picks)
    log.info("fine-tuned linear head on %d labeled patches", len(picks))


def cmd_predict(args, cfg, out):
    scene = fileio.read_scene(_require(_scene_path(args, cfg, out), "scene"))
    theta = fileio.read_checkpoint(
        _require(args.ckpt or out / "encoder.ckpt", "checkpoint"))
    head = fileio.read_checkpoint(_require(out / "classifier.ckpt",
                                           "classifier checkpoint"))
    clf = classify.LinearClassifier(head["linear.w"], head["linear.b"])
    plan = _encoder_plan(cfg)
    pred = classify.predict_map(scene, theta, clf, plan)
    fileio.write_labels(out / "predicted.lbl", pred)
    fileio.write_label_png(out / "predicted.png", pred)
    log.info("wrote %s and %s", out / "predicted.lbl", out / "predicted.png")


def cmd_eval(args, cfg, out):
    pred = fileio.read_labels(_require(out / "predicted.lbl", "prediction"))
    truth = fileio.read_labels(_require(_labels_path(args, cfg, out), "labels"))
    report = classify.evaluate(pred, truth)
    classify.write_report(out / "report.txt", report)
    classify.write_confusion_csv(out / "confusion.csv", report)
    train_csv = out / "train_samples.csv"
    if train_csv.exists():
        masked = truth.labels.copy()
        with open(train_csv) as fh:
            next(fh)
            for line in fh:
                row, col, _ = line.strip().split(",")
                masked[int(row), int(col)] = 0
        held_out = classify.evaluate(
            pred, polsar.LabelMap(masked, truth.num_classes))
        with open(out / "report.txt", "a") as fh:
            fh.write(f"held_out_overall_accuracy: "
                     f"{held_out.overall_accuracy:.6f}\n")
            fh.write(f"held_out_average_accuracy: "
                     f"{held_out.average_accuracy:.6f}\n")
            fh.write(f"held_out_kappa: {held_out.kappa:.6f}\n")
    log.info("OA=%.4f AA=%.4f kappa=%.4f", report.overall_accuracy,
             report.average_accuracy, report.kappa)


def cmd_features(args, cfg, out):
    scene = fileio.read_scene(_require(_scene_path(args, cfg, out), "scene"))
    labels = fileio.read_labels(_require(_labels_path(args, cfg, out), "labels"))
    theta = fileio.read_checkpoint(
        _require(args.ckpt or out / "encoder.ckpt", "checkpoint"))
    plan = _encoder_plan(cfg)
    mean, std = scene.channel_stats()
    rows, cols = np.nonzero(labels.labels > 0)
    with open(out / "features.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "label"]
                        + [f"h{i}" for i in range(plan.feature_dim)])
        for start in range(0, len(rows), 256):
            rr = rows[start:start + 256]
            cc = cols[start:start + 256]
            patches = polsar.extract_patches(
                scene, np.stack([rr, cc], axis=1), plan.patch_size)
            patches = polsar.standardize_patches(patches, mean, std)
            feats = classify.encode_features(theta, patches, plan)
            for r, c, f in zip(rr, cc, feats):
                writer.writerow([int(r), int(c), int(labels.labels[r, c])]
                                + [repr(float(v)) for v in f])
    log.info("wrote %s", out / "features.csv")


def cmd_selfcheck(args, cfg, out):
    """Run the built-in gradient-check and oracle suites."""
    rng = np.random.default_rng(7)
    failures = []

    def check(name, ok):
        log.info("%s: %s", name, "ok" if ok else "FAIL")
        if not ok:
            failures.append(name)

    # metric identities
    mats = polsar.features_to_matrix(
        polsar.matrix_to_features(_random_psd_stack(rng, 64)))
    d_self = [cluster.revised_wishart_distance(m, m) for m in mats]
    check("wishart distance identity", max(abs(v) for v in d_self) <= 1e-10)
    a, b = mats[:32], mats[32:]
    sym = max(abs(cluster.revised_wishart_distance(x, y)
                  - cluster.revised_wishart_distance(y, x))
              for x, y in zip(a, b))
    check("wishart distance symmetry", sym <= 1e-12)

    # layer gradients
    plan = nn.EncoderPlan(in_channels=2, conv_channels=(3,), head_dims=(3, 2),
                          patch_size=5)
    params = nn.init_encoder(plan, rng)
    x = rng.standard_normal((2, 2, 5, 5))
    target = rng.standard_normal((2, 2))

    def objective(point):
        out, _ = nn.encoder_forward(params, point, plan)
        loss = 0.5 * np.sum((out - target) ** 2)
        return loss, _input_gradient(params, point, plan, out - target)

    report = nn.grad_check(objective, x.copy())
    check("encoder input gradient", report.passed)

    # bank FIFO
    bank = contrastive.MemoryBank(8, 2)
    ref = []
    for tag in range(6):
        batch = np.full((2, 2), float(tag))
        bank.enqueue(batch)
        ref.append(batch)
        ref = ref[-4:]
    check("memory bank FIFO", np.array_equal(bank.contents(),
                                             np.concatenate(ref)))

    if failures:
        raise RuntimeError("selfcheck failed: " + ", ".join(failures))
    log.info("selfcheck passed")


def _input_gradient(params, x, plan, grad_out):
    _, cache = nn.encoder_forward(params, x, plan)
    g = grad_out
    g, _, _ = nn.fully_connected_backward(cache["a1"], params["head1.w"], g)
    g = nn.relu_backward(cache["z1"], g)
    g, _, _ = nn.fully_connected_backward(cache["h"], params["head0.w"], g)
    g = nn.gap_backward(cache["gap_in_shape"], g)
    for i in reversed(range(len(plan.conv_channels))):
        stage = cache["stages"][i]
        g = nn.maxpool2_backward(stage["act"], g)
        g = nn.relu_backward(stage["pre"], g)
        g, _, _ = nn.conv2d_backward(stage["in"], params[f"conv{i}.w"], g)
    return g


def _random_psd_stack(rng, count):
    a = rng.standard_normal((count, 3, 3)) + 1j * rng.standard_normal((count, 3, 3))
    return a @ np.conj(np.swapaxes(a, -1, -2)) + 0.1 * np.eye(3)


COMMANDS = {
    "synth": cmd_synth,
    "cluster": cmd_cluster,
    "collect": cmd_collect,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "features": cmd_features,
    "selfcheck": cmd_selfcheck,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pclnet",
        description="Unsupervised contrastive pretraining and few-shot "
                    "classification for polarimetric SAR coherency data")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="run configuration file")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap; 1 guarantees bit-reproducibility")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--scene", help="scene .t3b path")
    parser.add_argument("--labels", help="label .lbl path")
    parser.add_argument("--ckpt", help="encoder checkpoint path")
    parser.add_argument("--shots", type=int,
                        help="labeled samples per class for fine-tuning")
    return parser


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.threads != 1:
        log.info("running single-threaded; --threads %d ignored", args.threads)
    try:
        cfg = _load_config(args)
        out = _out_dir(args)
        _echo_config(out, cfg)
        COMMANDS[args.command](args, cfg, out)
    except Exception as exc:  # CLI boundary: report and signal failure
        print(f"pclnet {args.command}: {exc}", file=sys.stderr)
        if os.environ.get("PCLNET_LOG") == "debug":
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
