"""
Concept-sensitivity measurement.

For a generated image, a noise draw and an augmentation, the per-unit RMS of
the concept-loss gradient is divided by the per-unit RMS of the ordinary
diffusion-loss gradient; a unit's score is the mean of those ratios.
"""

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..autograd import ops
from ..autograd.heads import chunk_per_head
from ..autograd.tensor import Tensor, backward, no_grad, stop_gradient
from ..diffusion.denoiser import TinyDenoiser
from ..diffusion.sampling import sample_cfg_batch
from ..diffusion.schedule import add_noise, to_model_space
from ..errors import ContractError, DegenerateGradientError
from ..world.dataset import condition_seed
from ..world.prompts import PromptTokens
from .concepts import ConceptSpec
from .maps import SelectionMask, SensitivityMap, overlap_matrix, select_top_k
from .units import GRANULARITIES, UnitId

logger = logging.getLogger(__name__)

RATIO_FLOOR = 1e-12


def concept_loss(model: TinyDenoiser, x_t: np.ndarray, c: PromptTokens, c_aug: PromptTokens, t) -> Tensor:
    """``|| eps(x_t, c, t) - sg[eps(x_t, c_aug, t)] ||^2`` (mean over elements)."""
    pred, _ = model(x_t, t, c)
    with no_grad():
        target, _ = model(x_t, t, c_aug)
    return ops.mse(pred, stop_gradient(target))


def _projection_sums(model: TinyDenoiser) -> Dict[Tuple[int, str, str], List[Tuple[float, int]]]:
    """(sum of squares, element count) per head chunk of every projection weight gradient."""
    sums = {}
    for b, a, k in model.projection_units():
        weight = model.projection(b, a, k).weight
        if weight.grad is None:
            raise ContractError(f"no gradient on b{b}.{a}.{k}; run backward with projection weights trainable")
        chunks = chunk_per_head(weight.grad, model.projection_shape(b, a, k), k)
        sums[(b, a, k)] = [(float(np.sum(c**2)), c.size) for c in chunks]
    return sums


def grad_rms_per_unit(model: TinyDenoiser, granularity: str = "head") -> Dict[UnitId, float]:
    """Gradient RMS per unit, canonical order; coarser units pool their elements."""
    if granularity not in GRANULARITIES:
        raise ContractError(f"granularity must be one of {GRANULARITIES}, got {granularity!r}")
    pooled: Dict[UnitId, List[float]] = {}
    for (b, a, k), chunks in _projection_sums(model).items():
        for h, (sq, n) in enumerate(chunks):
            unit = {
                "head": UnitId(b, a, k, h),
                "projection": UnitId(b, a, k),
                "layer": UnitId(b, a),
                "block": UnitId(b),
            }[granularity]
            acc = pooled.setdefault(unit, [0.0, 0])
            acc[0] += sq
            acc[1] += n
    return {u: float(np.sqrt(sq / n)) for u, (sq, n) in pooled.items()}


def unit_ratios(concept_rms: Dict[UnitId, float], diffusion_rms: Dict[UnitId, float]) -> Dict[UnitId, float]:
    ratios = {}
    for unit, c in concept_rms.items():
        d = diffusion_rms[unit]
        if c == 0.0:
            ratios[unit] = 0.0
        elif d < RATIO_FLOOR:
            raise DegenerateGradientError(str(unit), c, d)
        else:
            ratios[unit] = c / d
    return ratios


class _trainable_projections:
    """Temporarily make exactly the attention projection weights require grad."""

    def __init__(self, model: TinyDenoiser):
        self.model = model

    def __enter__(self):
        self.saved = [(p, p.requires_grad) for p in self.model.parameters()]
        for p, _ in self.saved:
            p.requires_grad = False
        for b, a, k in self.model.projection_units():
            self.model.projection(b, a, k).weight.requires_grad = True
        return self.model

    def __exit__(self, *args):
        for p, flag in self.saved:
            p.requires_grad = flag
        self.model.zero_grad()


def _gradient_rms(model: TinyDenoiser, loss: Tensor, granularity: str) -> Dict[UnitId, float]:
    model.zero_grad()
    backward(loss)
    return grad_rms_per_unit(model, granularity)


def _ratio_job(model: TinyDenoiser, spec: ConceptSpec, x_t: np.ndarray, eps: np.ndarray, t: int,
               granularity: str) -> List[Dict[UnitId, float]]:
    """Ratios for every augmentation of one (image, noise) pair."""
    with _trainable_projections(model):
        pred, _ = model(x_t, t, spec.base_prompt)
        diffusion_rms = _gradient_rms(model, ops.mse(pred, Tensor(eps)), granularity)
        out = []
        for aug in spec.augmentations:
            concept_rms = _gradient_rms(model, concept_loss(model, x_t, spec.base_prompt, aug, t), granularity)
            out.append(unit_ratios(concept_rms, diffusion_rms))
    return out


def concept_sensitivity(
    model: TinyDenoiser,
    spec: ConceptSpec,
    t: int,
    n_images: int = 4,
    n_noise: int = 4,
    granularity: str = "head",
    seed: int = 0,
    steps: int = 25,
    guidance: float = 5.0,
    images: Optional[np.ndarray] = None,
    workers: int = 1,
) -> SensitivityMap:
    """
    Average concept/diffusion gradient ratio per unit.

    ``images`` (pixel space) defaults to ``n_images`` samples of the base
    prompt. Jobs may run on ``workers`` model clones; the mean is always
    reduced in (image, noise, augmentation) order.
    """
    if granularity not in GRANULARITIES:
        raise ContractError(f"granularity must be one of {GRANULARITIES}, got {granularity!r}")
    model.schedule.check_timestep(t)
    if n_noise < 1 or (images is None and n_images < 1):
        raise ContractError("n_images and n_noise must be >= 1")
    if images is None:
        seeds = [condition_seed(seed, 1, i) for i in range(n_images)]
        images = sample_cfg_batch(model, [spec.base_prompt] * n_images, seeds, steps, guidance)
    x0 = to_model_space(np.asarray(images))

    jobs = []
    for i in range(len(x0)):
        for j in range(n_noise):
            eps = np.random.default_rng(condition_seed(seed, 2, i, j)).standard_normal((1,) + x0.shape[1:])
            jobs.append((add_noise(x0[i : i + 1], eps, t, model.schedule), eps))

    if workers > 1:
        clones = [copy.deepcopy(model) for _ in range(workers)]

        def run(indexed):
            idx, (x_t, eps) = indexed
            return _ratio_job(clones[idx % workers], spec, x_t, eps, t, granularity)

        # Each clone handles every workers-th job, so no clone runs two jobs at once.
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = []
            for lo in range(0, len(jobs), workers):
                batch = list(enumerate(jobs[lo : lo + workers]))
                results += list(pool.map(run, batch))
    else:
        results = [_ratio_job(model, spec, x_t, eps, t, granularity) for x_t, eps in jobs]

    samples = [r for job in results for r in job]
    units = list(samples[0])
    mean = np.mean(np.array([[s[u] for u in units] for s in samples]), axis=0)
    logger.info(
        f"{spec.concept} sensitivity at t={t}: {len(samples)} ratio samples over {len(units)} {granularity} units"
    )
    return SensitivityMap(
        granularity,
        dict(zip(units, mean.tolist())),
        {
            **spec.to_dict(),
            "t": int(t),
            "n_images": int(len(x0)),
            "n_noise": int(n_noise),
            "seed": int(seed),
        },
    )


def sweep_timesteps(model: TinyDenoiser, spec: ConceptSpec, t_list: Sequence[int], n_images: int = 4,
                    seed: int = 0, steps: int = 25, guidance: float = 5.0, images: Optional[np.ndarray] = None,
                    **kwargs) -> List[SensitivityMap]:
    """One map per timestep, all measured on the same generated images."""
    for t in t_list:
        model.schedule.check_timestep(t)
    if images is None:
        seeds = [condition_seed(seed, 1, i) for i in range(n_images)]
        images = sample_cfg_batch(model, [spec.base_prompt] * n_images, seeds, steps, guidance)
    return [concept_sensitivity(model, spec, t, images=images, seed=seed, **kwargs) for t in t_list]


def augmentation_robustness(
    model: TinyDenoiser,
    spec: ConceptSpec,
    t: int,
    proportion: float = 0.1,
    **kwargs,
) -> Tuple[List[str], np.ndarray, List[SelectionMask]]:
    """Pairwise Jaccard overlap of top-k sets from single-augmentation maps."""
    if len(spec.augmentations) < 2:
        raise ContractError("augmentation robustness needs at least 2 prompt variants")
    masks = [
        select_top_k(concept_sensitivity(model, spec.single(i), t, **kwargs), proportion)
        for i in range(len(spec.augmentations))
    ]
    labels = [str(a) for a in spec.augmentations]
    return labels, overlap_matrix(masks), masks
