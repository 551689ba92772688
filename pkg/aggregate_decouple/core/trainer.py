"""
Training loop: augmentation, label noising, the three decoder flows,
pseudo-labeling, one joint optimizer step, and EMA distillation.

Gradient routing per step:
    L_deno  stem_denoise -> trunk -> dec_xi
    L_diff  stem_plain   -> trunk -> dec_psi
    L_u     stem_plain   -> trunk -> dec_theta   (pseudo labels detached)
"""

import csv
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .checkpoint_manager import CheckpointManager
from .data import num_workers
from .diffusion import NoiseSchedule, make_schedule, forward_diffuse, ddim_generate
from .drs import DifficultyState
from .evaluation import mean_foreground_dice
from .exceptions import ValidationError, TrainingError
from .models import DatasetSplit, LabelMap, LossReport, RSConfig, TaskConfig, Volume, LabeledPair
from .network import DiffVNet, ema_distill
from .objectives import dice_ce, l_deno, l_diff, l_u, ramp_weight
from .rs import as_logits, ensemble
from .svda import augment
from .tensors import one_hot_tensor
from .training_log import TrainingLog

logger = logging.getLogger(__name__)

POLY_EXPONENT = 0.9

StepCallback = Callable[["TrainState"], None]


@dataclass
class TrainState:
    """Everything mutated by the training loop"""
    config: TaskConfig
    model: DiffVNet
    optimizer: torch.optim.Optimizer
    difficulty: DifficultyState
    schedule: NoiseSchedule
    rs_config: RSConfig
    data_rng: np.random.Generator
    noise_generator: torch.Generator
    gumbel_generator: torch.Generator
    iteration: int = 0
    best_score: float = -math.inf
    best_iteration: int = 0
    last_weights: np.ndarray = field(default_factory=lambda: np.ones(0))

    @property
    def dtype(self) -> torch.dtype:
        return next(self.model.parameters()).dtype


@dataclass
class StepLosses:
    l_deno: torch.Tensor
    l_diff: torch.Tensor
    l_u: torch.Tensor
    l_coupled: torch.Tensor
    ramp: float
    total: torch.Tensor


@dataclass
class FitResult:
    model: DiffVNet
    state: TrainState
    log: TrainingLog
    best_score: float
    best_iteration: int


def poly_lr(iteration: int, max_iterations: int, base_lr: float,
            exponent: float = POLY_EXPONENT) -> float:
    if not 0 <= iteration <= max_iterations:
        raise ValidationError("Iteration outside [0, max_iterations]", field="iteration",
                              value=iteration, context={"max_iterations": max_iterations})
    return base_lr * (1.0 - iteration / max_iterations) ** exponent


def make_optimizer(parameters, config: TaskConfig) -> torch.optim.SGD:
    return torch.optim.SGD(parameters, lr=config.base_lr, momentum=config.momentum,
                           nesterov=True, weight_decay=config.weight_decay)


def rs_config_for(config: TaskConfig, rs_config: Optional[RSConfig] = None) -> RSConfig:
    rs_config = rs_config or RSConfig()
    if not config.use_rs:
        rs_config = replace(rs_config, reparameterize=False)
    return rs_config


def init_state(config: TaskConfig, rs_config: Optional[RSConfig] = None,
               dtype: torch.dtype = torch.float32) -> TrainState:
    """Build model, optimizer and the three random streams from config.seed"""
    data_seq, noise_seq, gumbel_seq, model_seq = np.random.SeedSequence(config.seed).spawn(4)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(model_seq.generate_state(1)[0]))
        model = DiffVNet(config.num_classes, config.feature_size).to(dtype)
    noise_generator = torch.Generator().manual_seed(int(noise_seq.generate_state(1)[0]))
    gumbel_generator = torch.Generator().manual_seed(int(gumbel_seq.generate_state(1)[0]))
    return TrainState(
        config=config,
        model=model,
        optimizer=make_optimizer(model.parameters(), config),
        difficulty=DifficultyState(config.num_classes, config.tau, config.alpha_diff),
        schedule=make_schedule(config.diffusion_steps),
        rs_config=rs_config_for(config, rs_config),
        data_rng=np.random.default_rng(data_seq),
        noise_generator=noise_generator,
        gumbel_generator=gumbel_generator,
        last_weights=np.ones(config.num_classes),
    )


# ============================================================================
# Batches
# ============================================================================

def augment_batch(state: TrainState, items: Sequence[Tuple[Volume, Optional[LabelMap]]]
                  ) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """
    SVDA plus the final patch crop for each item.

    Per-item seeds are drawn on the calling thread, so results do not depend
    on the worker count.
    """
    cfg = state.config
    seeds = state.data_rng.integers(0, 2 ** 63 - 1, size=len(items))

    def _one(args):
        (volume, label), seed = args
        return augment(volume, label, cfg.n_aug, np.random.default_rng(int(seed)),
                       cfg.patch_size, enabled=cfg.use_svda)

    workers = min(num_workers(), max(len(items), 1))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(_one, zip(items, seeds)))
    else:
        pairs = [_one(args) for args in zip(items, seeds)]

    x = torch.as_tensor(np.stack([np.asarray(p.volume.data) for p in pairs]))[:, None]
    x = x.to(state.dtype)
    if pairs[0].label is None:
        return x, None
    y = torch.as_tensor(np.stack([np.asarray(p.label.data) for p in pairs]))
    return x, y


def batch_class_dice(logits: torch.Tensor, labels: torch.Tensor, num_classes: int) -> np.ndarray:
    """Hard per-class Dice of argmax(logits) over the whole batch; 1 when a class is absent from both"""
    pred = torch.argmax(logits.detach(), dim=1)
    scores = np.ones(num_classes)
    for k in range(num_classes):
        p, g = pred == k, labels == k
        total = int(p.sum()) + int(g.sum())
        if total:
            scores[k] = 2.0 * int((p & g).sum()) / total
    return scores


def sample_batches(state: TrainState, split: DatasetSplit
                   ) -> Tuple[List[LabeledPair], List[Volume]]:
    b = state.config.batch_size
    labeled = [split.labeled[i] for i in state.data_rng.integers(0, len(split.labeled), size=b)]
    unlabeled: List[Volume] = []
    if split.unlabeled:
        unlabeled = [split.unlabeled[i]
                     for i in state.data_rng.integers(0, len(split.unlabeled), size=b)]
    return labeled, unlabeled


# ============================================================================
# Step
# ============================================================================

def compute_losses(state: TrainState, x_l: torch.Tensor, y0: torch.Tensor,
                   x_u: Optional[torch.Tensor], t: int, eps: torch.Tensor) -> StepLosses:
    """Forward all flows and assemble the objective; feeds the difficulty state"""
    cfg, model = state.config, state.model
    labels = torch.argmax(y0, dim=1)

    y_t = forward_diffuse(y0, t, eps, state.schedule)
    logits_xi = model.dec_xi(model.encode_denoising(x_l, y_t, t))
    loss_deno = l_deno(logits_xi, y0)

    if cfg.use_drs:
        state.difficulty.observe(batch_class_dice(logits_xi, labels, cfg.num_classes))
        weights = state.difficulty.weights()
    else:
        weights = np.ones(cfg.num_classes)
    state.last_weights = weights

    pyramid_l = model.encode_plain(x_l)
    loss_diff = l_diff(model.dec_psi(pyramid_l), y0, weights)

    zero = loss_deno.new_zeros(())
    loss_u = zero
    if x_u is not None:
        with torch.no_grad():
            p_xi = ddim_generate(model.denoise, x_u, cfg.ddim_steps, state.schedule,
                                 state.noise_generator, cfg.num_classes)
        pyramid_u = model.encode_plain(x_u)
        with torch.no_grad():
            logits_psi_u = model.dec_psi(pyramid_u)
            pseudo = ensemble(as_logits(p_xi), logits_psi_u, state.rs_config,
                              state.gumbel_generator)
        loss_u = l_u(model.dec_theta(pyramid_u), pseudo)

    loss_coupled = zero
    if cfg.couple_predictor:
        loss_coupled = dice_ce(model.dec_theta(pyramid_l), y0)

    ramp = ramp_weight(state.iteration, cfg.max_iterations, cfg.mu_unsup, cfg.ramp_fraction)
    total = loss_deno + loss_diff + ramp * loss_u + loss_coupled
    return StepLosses(loss_deno, loss_diff, loss_u, loss_coupled, ramp, total)


def train_step(state: TrainState, labeled_batch: Sequence[LabeledPair],
               unlabeled_batch: Sequence[Volume],
               after_optimizer_step: Optional[StepCallback] = None) -> LossReport:
    """
    One iteration: SVDA, noising at a uniform t, the three losses, one SGD
    step on the total, then EMA of (xi + psi) / 2 into theta.

    ``after_optimizer_step`` runs between the optimizer step and the EMA update.
    """
    cfg = state.config
    if not labeled_batch:
        raise ValidationError("Labeled batch is empty", field="labeled_batch")
    if state.iteration >= cfg.max_iterations:
        raise TrainingError("Training already reached max_iterations", iteration=state.iteration,
                            module="trainer")

    x_l, y_l = augment_batch(state, [(v, y) for v, y in labeled_batch])
    x_u = None
    if unlabeled_batch:
        x_u, _ = augment_batch(state, [(v, None) for v in unlabeled_batch])
    else:
        warnings.warn("Unlabeled batch is empty; skipping the unsupervised flow")

    t = int(state.data_rng.integers(1, cfg.diffusion_steps + 1))
    y0 = one_hot_tensor(y_l, cfg.num_classes).to(state.dtype)
    eps = torch.randn(y0.shape, generator=state.noise_generator, dtype=state.dtype)

    losses = compute_losses(state, x_l, y0, x_u, t, eps)
    if not torch.isfinite(losses.total):
        raise TrainingError("Non-finite loss", iteration=state.iteration, module="trainer",
                            context={"l_deno": float(losses.l_deno), "l_diff": float(losses.l_diff),
                                     "l_u": float(losses.l_u), "t": t})

    lr = poly_lr(state.iteration, cfg.max_iterations, cfg.base_lr)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.zero_grad(set_to_none=True)
    losses.total.backward()
    state.optimizer.step()
    if after_optimizer_step is not None:
        after_optimizer_step(state)
    ema_distill(state.model, cfg.w_ema)
    state.iteration += 1

    return LossReport.assemble(
        l_deno=float(losses.l_deno), l_diff=float(losses.l_diff), l_u=float(losses.l_u),
        ramp_weight=losses.ramp, l_coupled=float(losses.l_coupled),
    )


# ============================================================================
# Loop
# ============================================================================

def _is_out_of_memory(error: RuntimeError) -> bool:
    return "out of memory" in str(error).lower()


def fit(config: TaskConfig, split: DatasetSplit, out_dir: Optional[Path] = None,
        rs_config: Optional[RSConfig] = None, dtype: torch.dtype = torch.float32) -> FitResult:
    """
    Train for max_iterations and keep the best model by mean foreground Dice
    on the labeled volumes, evaluated every validation_interval iterations.

    The returned model carries the best-scoring weights; the ``last``
    checkpoint keeps the weights of the final iteration.
    """
    if split.num_classes != config.num_classes:
        raise ValidationError("Split and config disagree on num_classes", field="num_classes",
                              value=split.num_classes, context={"config": config.num_classes})
    state = init_state(config, rs_config, dtype)
    log = TrainingLog(out_dir)
    checkpoints = CheckpointManager(Path(out_dir) / "checkpoints") if out_dir is not None else None
    config_echo = config.to_dict()
    best_weights: Optional[Dict[str, torch.Tensor]] = None

    logger.info("Training %s for %d iterations: %d labeled, %d unlabeled volumes",
                config.task.value, config.max_iterations, len(split.labeled), len(split.unlabeled))
    while state.iteration < config.max_iterations:
        lr = poly_lr(state.iteration, config.max_iterations, config.base_lr)
        labeled, unlabeled = sample_batches(state, split)
        try:
            report = train_step(state, labeled, unlabeled)
        except RuntimeError as e:
            if _is_out_of_memory(e):
                raise TrainingError("Out of memory", iteration=state.iteration, module="trainer",
                                    context={"patch_size": config.patch_size,
                                             "batch_size": config.batch_size,
                                             "hint": "reduce patch_size or batch_size"}) from e
            raise
        it = state.iteration
        log.record(it, report, lr)
        log.record_weights(it, state.last_weights)
        if it % config.log_interval == 0:
            logger.info("iter %d: l_deno=%.4f l_diff=%.4f l_u=%.4f ramp=%.3f total=%.4f lr=%.2e",
                        it, report.l_deno, report.l_diff, report.l_u, report.ramp_weight,
                        report.total, lr)
        if it % config.validation_interval == 0 or it == config.max_iterations:
            score = mean_foreground_dice(state.model, split.labeled, config.patch_size,
                                         config.overlap)
            logger.info("iter %d: validation mean foreground Dice %.4f", it, score)
            if score > state.best_score:
                state.best_score, state.best_iteration = score, it
                best_weights = {k: v.detach().clone()
                                for k, v in state.model.state_dict().items()}
                if checkpoints is not None:
                    checkpoints.save("best", state.model, it, score, config_echo,
                                     {"difficulty": state.difficulty.to_dict()})
            log.flush()

    if checkpoints is not None:
        checkpoints.save("last", state.model, state.iteration, None, config_echo,
                         {"difficulty": state.difficulty.to_dict()})
    log.flush()
    if best_weights is not None:
        state.model.load_state_dict(best_weights)
    return FitResult(model=state.model, state=state, log=log, best_score=state.best_score,
                     best_iteration=state.best_iteration)


def evaluation_pairs(split: DatasetSplit, domain: Optional[str] = None) -> List[LabeledPair]:
    """Test pairs (optionally of one domain); falls back to the labeled pairs"""
    if split.test:
        pairs = split.test_subset(domain) if domain is not None else list(split.test)
        if pairs:
            return pairs
    return list(split.labeled)


def run_ablation(config: TaskConfig, split: DatasetSplit, seeds: Sequence[int],
                 out_dir: Optional[Path] = None, eval_domain: Optional[str] = None
                 ) -> Dict[str, float]:
    """
    Train the decoupled model and the coupled-predictor variant per seed and
    return the mean evaluation Dice of each variant.
    """
    pairs = evaluation_pairs(split, eval_domain)
    rows: List[Dict[str, object]] = []
    for seed in seeds:
        for variant, coupled in (("decoupled", False), ("coupled", True)):
            cfg = replace(config, seed=seed, couple_predictor=coupled)
            result = fit(cfg, split)
            score = mean_foreground_dice(result.model, pairs, cfg.patch_size, cfg.overlap)
            logger.info("seed %d %s: Dice %.4f", seed, variant, score)
            rows.append({"seed": seed, "variant": variant, "dice": score})

    means = {variant: float(np.mean([r["dice"] for r in rows if r["variant"] == variant]))
             for variant in ("decoupled", "coupled")}
    if out_dir is not None:
        path = Path(out_dir) / "ablation.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["seed", "variant", "dice"], lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return means
