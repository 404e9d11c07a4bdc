"""
Pipeline stages.

- world: render the corpus, the narrow source set and the test domains
- pretrain: train the denoiser on the corpus
- sensitivity: measure the concept-sensitivity map (and sweeps with --sweep)
- finetune: select units and train CA-LoRA adapters on the source set
- labelgen: train the label generator on features of the finetuned model
- generate: synthesize image-label pairs for every condition
- evaluate: score alignment, adherence, label quality, memorization and
  downstream segmentation
"""

import csv
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np

from ..diffusion import DenoiserConfig, TinyDenoiser, load_checkpoint, sample_many, save_checkpoint, train_diffusion
from ..errors import InvariantViolation
from ..evaluation import (
    AdherenceResult,
    MetricReport,
    dg_evaluation,
    few_shot_protocol,
    image_label_alignment,
    memorization_distance,
    miou,
    mmd_alignment,
    prompt_adherence,
    save_image_grid,
    train_style_classifier,
    train_toy_segmenter,
)
from ..labelgen import (
    build_generation_requests,
    generate_dataset,
    load_label_generator,
    relabel_pairs,
    save_label_generator,
    train_label_generator,
)
from ..lora import attach_adapters, finetune_lora, install_adapters, load_adapters, save_adapters
from ..models import ArtifactType, Io, PropertyDef, StageContext
from ..registry import StageRegistry
from ..sensitivity import (
    SelectionMask,
    SensitivityMap,
    augmentation_robustness,
    concept_disagreement,
    concept_sensitivity,
    handcrafted_mask,
    make_concept_spec,
    select_top_k,
    sweep_timesteps,
    write_matrix_csv,
)
from ..world import (
    STYLES,
    class_histogram,
    condition_seed,
    export_dataset,
    load_dataset,
    prompt_of,
    sample_corpus,
    sample_dataset,
)

logger = logging.getLogger(__name__)


# =============================================================================
# Type Definitions
# =============================================================================

Dataset = ArtifactType(
    name="Dataset",
    description="Exported split of labeled images",
    own_properties=[
        PropertyDef("manifest.json", "json", "File names, style, viewpoint, seed and provenance per item"),
        PropertyDef("arrays.npz", "npz", "Exact float images and integer masks"),
        PropertyDef("*.png", "png", "Lossless image and mask files"),
    ],
)

Checkpoint = ArtifactType(
    name="Checkpoint",
    description="Denoiser parameters and noise schedule",
    own_properties=[PropertyDef("denoiser.ckpt", "binary", "CALRCKPT container")],
)

SensitivityArtifact = ArtifactType(
    name="SensitivityMap",
    description="Per-unit concept sensitivity",
    own_properties=[
        PropertyDef("sensitivity.csv", "csv", "unit, block, attention, projection, head, score"),
        PropertyDef("sensitivity.meta.yaml", "yaml", "Concept, prompts, timestep and counts"),
    ],
)

AdapterArtifact = ArtifactType(
    name="Adapters",
    description="Selection mask and trained CA-LoRA factors",
    own_properties=[
        PropertyDef("mask.yaml", "yaml", "Selected unit ids"),
        PropertyDef("adapters.lora", "binary", "CALRLORA container"),
    ],
)

LabelGeneratorArtifact = ArtifactType(
    name="LabelGenerator",
    description="Label generator trained on finetuned-model features",
    own_properties=[PropertyDef("labelgen.bin", "binary", "CALRLGEN container")],
)

Report = ArtifactType(
    name="MetricReport",
    description="All metrics of one run",
    own_properties=[
        PropertyDef("report.yaml", "yaml", "Metric values with sample counts and seeds"),
        PropertyDef("dg.csv", "csv", "Per-domain mIoU"),
    ],
)

ARTIFACT_TYPES = [Dataset, Checkpoint, SensitivityArtifact, AdapterArtifact, LabelGeneratorArtifact, Report]


# =============================================================================
# Helper Functions
# =============================================================================

def denoiser_config(config) -> DenoiserConfig:
    m = config.model
    return DenoiserConfig(width=m.width, heads=m.heads, blocks=m.blocks, patch=m.patch,
                          ff_mult=m.ff_mult, timesteps=m.timesteps)


def base_prompt(config):
    return prompt_of(config.world.source_style, config.world.source_viewpoint)


def write_losses(path: Path, losses: Sequence[float]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "loss"])
        writer.writerows((i, f"{v:.8f}") for i, v in enumerate(losses))


def load_finetuned(ctx: StageContext) -> TinyDenoiser:
    model, _ = load_checkpoint(ctx.store.require("pretrain", "denoiser.ckpt"))
    adapters, _ = load_adapters(ctx.store.require("finetune", "adapters.lora"))
    if adapters:
        install_adapters(model, adapters)
    return model


def _world(ctx: StageContext, split: str):
    return load_dataset(ctx.store.require("world"), split, stage="world")


def _test_domains(ctx: StageContext) -> Dict[str, list]:
    return {style: _world(ctx, f"test_{style}") for style in ctx.config.eval.dg_styles}


# =============================================================================
# Stages
# =============================================================================

def run_world(ctx: StageContext) -> Dict[str, Any]:
    cfg, store = ctx.config, ctx.store
    w = cfg.world
    out = store.stage_dir("world")
    splits = {
        "corpus": sample_corpus(w.pretrain_per_condition, condition_seed(cfg.seed, 0)),
        "source": sample_dataset(w.source_style, w.source_viewpoint, w.source_n, condition_seed(cfg.seed, 1)),
    }
    styles = list(dict.fromkeys(cfg.eval.dg_styles + [w.source_style]))
    for si, style in enumerate(styles):
        splits[f"test_{style}"] = sample_dataset(style, w.source_viewpoint, w.test_per_domain,
                                                 condition_seed(cfg.seed, 2, si))
    files = [str(export_dataset(items, out, split).relative_to(out)) for split, items in splits.items()]
    summary = {split: len(items) for split, items in splits.items()}
    summary["source_class_histogram"] = class_histogram([d.mask for d in splits["source"]]).tolist()
    store.write_stage("world", ["world", "eval"], [], files, summary)
    return summary


def run_pretrain(ctx: StageContext) -> Dict[str, Any]:
    cfg, store = ctx.config, ctx.store
    corpus = _world(ctx, "corpus")
    model = TinyDenoiser(denoiser_config(cfg), seed=condition_seed(cfg.seed, 10))
    result = train_diffusion(model, corpus, cfg.pretrain, seed=condition_seed(cfg.seed, 11), progress=ctx.progress)
    out = store.stage_dir("pretrain")
    save_checkpoint(model, out / "denoiser.ckpt", {"stage": "pretrain", **result.to_dict()})
    write_losses(out / "losses.csv", result.losses)
    summary = result.to_dict()
    store.write_stage("pretrain", ["model", "pretrain"], ["world"], ["denoiser.ckpt", "losses.csv"], summary)
    return summary


def _sensitivity_sweep(ctx: StageContext, model: TinyDenoiser, out: Path) -> List[str]:
    s = ctx.config.sensitivity
    kwargs = dict(n_noise=s.n_noise, granularity=s.granularity, workers=s.workers)
    maps = {}
    for concept in ("style", "viewpoint"):
        spec = make_concept_spec(concept, base_prompt(ctx.config))
        maps[concept] = sweep_timesteps(model, spec, s.sweep_timesteps, n_images=s.n_images,
                                        seed=ctx.config.seed, steps=s.sampling_steps, guidance=s.guidance,
                                        **kwargs)
    files = []
    for concept, concept_maps in maps.items():
        for t, smap in zip(s.sweep_timesteps, concept_maps):
            files.append(str(smap.to_csv(out / "sweep" / f"{concept}_t{t}.csv").relative_to(out)))
    with open(out / "sweep" / "disagreement.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "disagreement"])
        for t, a, b in zip(s.sweep_timesteps, maps["style"], maps["viewpoint"]):
            writer.writerow([t, f"{concept_disagreement(a, b):.6f}"])
    files.append("sweep/disagreement.csv")

    spec = make_concept_spec(s.concept, base_prompt(ctx.config), s.augmentations)
    labels, matrix, _ = augmentation_robustness(
        model, spec, s.t, s.robustness_proportion, n_images=s.n_images, seed=ctx.config.seed,
        steps=s.sampling_steps, guidance=s.guidance, **kwargs,
    )
    write_matrix_csv(out / "sweep" / "robustness.csv", labels, matrix)
    files.append("sweep/robustness.csv")
    return files


def run_sensitivity(ctx: StageContext) -> Dict[str, Any]:
    cfg, store = ctx.config, ctx.store
    s = cfg.sensitivity
    model, _ = load_checkpoint(store.require("pretrain", "denoiser.ckpt"))
    spec = make_concept_spec(s.concept, base_prompt(cfg), s.augmentations)
    smap = concept_sensitivity(
        model, spec, s.t, n_images=s.n_images, n_noise=s.n_noise, granularity=s.granularity,
        seed=cfg.seed, steps=s.sampling_steps, guidance=s.guidance, workers=s.workers,
    )
    out = store.stage_dir("sensitivity")
    files = [str(smap.to_csv(out / "sensitivity.csv").relative_to(out)), "sensitivity.meta.yaml"]
    if ctx.sweep:
        files += _sensitivity_sweep(ctx, model, out)
    top = smap.ranked()[:5]
    summary = {"units": len(smap.scores), "top": [f"{u}={smap.scores[u]:.4f}" for u in top]}
    store.write_stage("sensitivity", ["sensitivity", "world"], ["pretrain"], files, summary)
    return summary


def selection_mask(config, smap: SensitivityMap) -> SelectionMask:
    sel = config.selection
    if sel.handcrafted:
        return handcrafted_mask(config.model.blocks, sel.handcrafted)
    if sel.proportion == 0:
        return SelectionMask.empty(smap.granularity, len(smap.scores))
    return select_top_k(smap, sel.proportion)


def run_finetune(ctx: StageContext) -> Dict[str, Any]:
    cfg, store = ctx.config, ctx.store
    smap = SensitivityMap.from_csv(store.require("sensitivity", "sensitivity.csv"))
    mask = selection_mask(cfg, smap)
    out = store.stage_dir("finetune")
    mask.to_yaml(out / "mask.yaml")

    model, _ = load_checkpoint(store.require("pretrain", "denoiser.ckpt"))
    adapters = attach_adapters(model, mask, cfg.lora.rank, cfg.lora.alpha, seed=condition_seed(cfg.seed, 20))
    summary: Dict[str, Any] = {"selected_units": len(mask.units), "adapters": len(adapters)}
    files = ["mask.yaml", "adapters.lora"]
    if adapters:
        before = {name: p.data.copy() for name, p in model.named_parameters() if ".adapter." not in name}
        result = finetune_lora(model, _world(ctx, "source"), cfg.lora, seed=condition_seed(cfg.seed, 21),
                               progress=ctx.progress)
        for name, p in model.named_parameters():
            if name in before and not np.array_equal(before[name], p.data):
                raise InvariantViolation(f"base parameter {name} changed during adapter training")
        write_losses(out / "losses.csv", result.losses)
        files.append("losses.csv")
        summary.update(result.to_dict())
    save_adapters(adapters, out / "adapters.lora", {"proportion": cfg.selection.proportion})
    store.write_stage("finetune", ["selection", "lora"], ["sensitivity", "pretrain", "world"], files, summary)
    return summary


def run_labelgen(ctx: StageContext) -> Dict[str, Any]:
    cfg, store = ctx.config, ctx.store
    model = load_finetuned(ctx)
    generator, losses = train_label_generator(model, _world(ctx, "source"), cfg.labelgen,
                                              seed=condition_seed(cfg.seed, 30), progress=ctx.progress)
    out = store.stage_dir("labelgen")
    save_label_generator(generator, out / "labelgen.bin")
    write_losses(out / "losses.csv", losses)
    summary = {"iterations": len(losses), "final_loss": losses[-1] if losses else None}
    store.write_stage("labelgen", ["labelgen"], ["finetune", "world"], ["labelgen.bin", "losses.csv"], summary)
    return summary


def run_generate(ctx: StageContext) -> Dict[str, Any]:
    cfg, store = ctx.config, ctx.store
    g = cfg.generation
    model = load_finetuned(ctx)
    generator, _ = load_label_generator(store.require("labelgen", "labelgen.bin"))
    source = _world(ctx, "source")
    requests = build_generation_requests(
        g.conditions, g.viewpoint, g.per_condition, [d.mask for d in source], condition_seed(cfg.seed, 40),
        g.class_names_from_labels, g.balanced_class, g.balanced_count,
    )
    model_id = store.record("finetune")["artifact_id"]
    pairs = generate_dataset(model, generator, requests, cfg.labelgen.t_feat, g.steps, g.guidance,
                             g.batch_size, model_id, ctx.progress)
    out = store.stage_dir("generate")
    export_dataset(pairs, out, "generated")
    rows = [np.stack([d.image for d in source[:8]])]
    for condition in g.conditions:
        rows.append(np.stack([p.image for p in pairs if p.provenance["condition"] == condition][:8]))
    save_image_grid(rows, out / "grid.png")
    summary = {"pairs": len(pairs), "label_proportions": class_histogram([p.mask for p in pairs]).tolist()}
    store.write_stage("generate", ["generation"], ["labelgen"],
                      ["generated/manifest.json", "grid.png"], summary)
    return summary


def _adherence(ctx: StageContext, model: TinyDenoiser, classifier, source) -> Dict[str, AdherenceResult]:
    """Adherence per style of images prompted with the source viewpoint and source class sets."""
    cfg = ctx.config
    e = cfg.eval
    rng = np.random.default_rng(condition_seed(cfg.seed, 51))
    per_style = {}
    for si, style in enumerate(e.adherence_styles):
        prompts = [prompt_of(style, cfg.world.source_viewpoint,
                             np.unique(source[int(rng.integers(0, len(source)))].mask).tolist())
                   for _ in range(e.adherence_per_condition)]
        seeds = [condition_seed(cfg.seed, 52, si, i) for i in range(len(prompts))]
        images = sample_many(model, prompts, seeds, cfg.generation.steps, cfg.generation.guidance,
                             cfg.generation.batch_size)
        per_style[style] = prompt_adherence(images, style, classifier)
    return per_style


def run_evaluate(ctx: StageContext) -> Dict[str, Any]:
    cfg, store = ctx.config, ctx.store
    e, w = cfg.eval, cfg.world
    report = MetricReport(cfg.name, meta={"config_hash": store.config_hash,
                                          "proportion": cfg.selection.proportion,
                                          "concept": cfg.sensitivity.concept})
    corpus, source = _world(ctx, "corpus"), _world(ctx, "source")
    domains = _test_domains(ctx)
    source_test = _world(ctx, f"test_{w.source_style}")
    pairs = load_dataset(store.require("generate"), "generated", stage="generate")
    in_source = [p for p in pairs if p.provenance.get("condition") == w.source_style] or pairs
    out = store.stage_dir("evaluate")

    # Domain alignment
    k = min(e.mmd_samples, len(in_source), len(source_test))
    raw = mmd_alignment(np.stack([p.image for p in in_source[:k]]), np.stack([d.image for d in source_test[:k]]))
    logger.info(f"MMD to source domain: raw {raw:.6g}")
    report.add("mmd_source", max(raw, 0.0), k, cfg.seed, raw=raw)

    # Prompt adherence
    model = load_finetuned(ctx)
    clf_set = sample_corpus(e.classifier_per_condition, condition_seed(cfg.seed, 50))
    classifier = train_style_classifier(clf_set, e.classifier_iterations, seed=cfg.seed)
    heldout = sample_corpus(e.classifier_per_condition, condition_seed(cfg.seed, 53))
    predicted = classifier.predict(np.stack([d.image for d in heldout]))
    sanity = np.mean(predicted == np.array([STYLES.index(d.style) for d in heldout]))
    report.add("classifier_heldout_accuracy", float(sanity), len(heldout), cfg.seed)
    per_style = _adherence(ctx, model, classifier, source)
    n_adherence = sum(r.n for r in per_style.values())
    report.add("adherence_accuracy", np.mean([r.accuracy for r in per_style.values()]), n_adherence, cfg.seed,
               per_style={s: r.accuracy for s, r in per_style.items()})
    report.add("adherence_log_prob", np.mean([r.mean_log_prob for r in per_style.values()]), n_adherence,
               cfg.seed, per_style={s: r.mean_log_prob for s, r in per_style.items()})

    # Image-label alignment against an oracle segmenter trained on every domain
    oracle, _ = train_toy_segmenter(corpus, iterations=e.oracle_iterations, batch_size=e.segmenter_batch,
                                    lr=e.segmenter_lr, seed=condition_seed(cfg.seed, 54), progress=ctx.progress)
    report.add("alignment_matched", image_label_alignment(pairs, oracle), len(pairs), cfg.seed)
    pretrained, _ = load_checkpoint(store.require("pretrain", "denoiser.ckpt"))
    generator, _ = load_label_generator(store.require("labelgen", "labelgen.bin"))
    images = np.stack([p.image for p in pairs])
    mismatched = relabel_pairs(pretrained, generator, pairs, cfg.labelgen.t_feat)
    report.add("alignment_mismatched", miou(mismatched, oracle.predict(images))[0], len(pairs), cfg.seed)

    # Memorization
    m = memorization_distance(np.stack([p.image for p in in_source[: e.memorization_samples]]),
                              np.stack([d.image for d in source]))
    report.add("memorization_mean", m.mean, len(m.distances), cfg.seed, p05=m.p05)

    # Downstream segmentation
    fewshot: Dict[str, Dict[int, float]] = {}
    dg: Dict[str, Dict[int, float]] = {}
    for seed in e.seeds:
        scores = few_shot_protocol(source[: w.fewshot_n], in_source, source_test, e.segmenter_iterations,
                                   e.segmenter_batch, e.segmenter_lr, seed)
        for key, value in scores.items():
            fewshot.setdefault(f"fewshot_{key}", {})[seed] = value
        base, _ = train_toy_segmenter(source, iterations=e.segmenter_iterations, batch_size=e.segmenter_batch,
                                      lr=e.segmenter_lr, seed=seed)
        mixed, _ = train_toy_segmenter(source, pairs, iterations=e.segmenter_iterations,
                                       batch_size=e.segmenter_batch, lr=e.segmenter_lr, seed=seed, mix=True)
        for prefix, seg in (("dg", mixed), ("dg_baseline", base)):
            table = dg_evaluation(seg, domains, source=w.source_style)
            for domain, value in table.scores.items():
                dg.setdefault(f"{prefix}.{domain}", {})[seed] = value
            dg.setdefault(f"{prefix}_average", {})[seed] = table.shifted_average()
    for key, per_seed in fewshot.items():
        report.add_seeded(key, per_seed, len(source_test), split=f"test_{w.source_style}")
    for key, per_seed in dg.items():
        report.add_seeded(key, per_seed, len(source_test), source=w.source_style)

    with open(out / "dg.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["domain", "generated_mix", "baseline"])
        for domain in domains:
            writer.writerow([domain, f"{report.value('dg.' + domain):.6f}",
                             f"{report.value('dg_baseline.' + domain):.6f}"])
    report.to_yaml(out / "report.yaml")
    summary = {k: round(v.value, 6) for k, v in report.metrics.items() if "." not in k}
    store.write_stage("evaluate", ["eval"], ["generate", "pretrain", "world"], ["report.yaml", "dg.csv"], summary)
    return summary


# =============================================================================
# Registration
# =============================================================================

STAGE_ORDER = ["world", "pretrain", "sensitivity", "finetune", "labelgen", "generate", "evaluate"]


def register_stages(registry: StageRegistry) -> StageRegistry:
    for dtype in ARTIFACT_TYPES:
        registry.register_type(dtype)
    registry.stage(
        name="world",
        description="Render the pretraining corpus, the narrow source set and the test domains",
        outputs=[Io("corpus", "Dataset"), Io("source", "Dataset"), Io("tests", "Dataset")],
        post=["world_rendered"],
        sections=["world", "eval"],
    )(run_world)
    registry.stage(
        name="pretrain",
        description="Pretrain the denoiser on every style and viewpoint with null-prompt dropout",
        inputs=[Io("corpus", "Dataset")],
        outputs=[Io("checkpoint", "Checkpoint")],
        pre=["world"],
        post=["pretrained_checkpoint"],
        sections=["model", "pretrain"],
    )(run_pretrain)
    registry.stage(
        name="sensitivity",
        description="Measure concept sensitivity per attention unit",
        inputs=[Io("checkpoint", "Checkpoint")],
        outputs=[Io("map", "SensitivityMap")],
        pre=["pretrain"],
        post=["sensitivity_map"],
        sections=["sensitivity", "world"],
    )(run_sensitivity)
    registry.stage(
        name="finetune",
        description="Select the most concept-sensitive units and train CA-LoRA adapters",
        inputs=[Io("map", "SensitivityMap"), Io("checkpoint", "Checkpoint"), Io("source", "Dataset")],
        outputs=[Io("adapters", "Adapters")],
        pre=["sensitivity", "pretrain", "world"],
        post=["adapters_trained"],
        sections=["selection", "lora"],
    )(run_finetune)
    registry.stage(
        name="labelgen",
        description="Train the label generator on features of the finetuned denoiser",
        inputs=[Io("adapters", "Adapters"), Io("source", "Dataset")],
        outputs=[Io("generator", "LabelGenerator")],
        pre=["finetune", "world"],
        post=["label_generator_trained"],
        sections=["labelgen"],
    )(run_labelgen)
    registry.stage(
        name="generate",
        description="Generate image-label pairs for every condition",
        inputs=[Io("generator", "LabelGenerator"), Io("adapters", "Adapters")],
        outputs=[Io("generated", "Dataset")],
        pre=["labelgen"],
        post=["pairs_generated"],
        sections=["generation"],
    )(run_generate)
    registry.stage(
        name="evaluate",
        description="Score the generated data and train downstream segmenters",
        inputs=[Io("generated", "Dataset"), Io("tests", "Dataset")],
        outputs=[Io("report", "MetricReport")],
        pre=["generate", "pretrain", "world"],
        post=["report_written"],
        sections=["eval"],
    )(run_evaluate)
    return registry
