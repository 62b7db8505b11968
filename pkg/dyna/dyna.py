"""Expérience à budget réel égal : PPO sans modèle contre Dyna par self-model.

Une cellule de l'expérience est un couple (préréglage, budget |D|, graine,
tâche). Le bras MFRL entraîne PPO directement sur |D| pas réels ; le bras
self-model collecte |D| transitions aléatoires, apprend le self-model puis
entraîne PPO uniquement dans le modèle. Les deux politiques sont évaluées sur
l'environnement réel avec les mêmes graines d'évaluation.

Les rollouts synthétiques partent toujours d'un reset réel et vont jusqu'à
l'horizon de la tâche. Des rollouts courts branchés sur des états du jeu de
données se brancheraient dans `SelfModelEnv.reset` (source de l'observation
de départ) sans toucher à la boucle PPO.
"""

__copyright__ = "Copyright (C) 2024 Grostim"
__license__ = "GNU GPLv2"

import csv
import io
import logging
import math
import statistics
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from ..crawler.crawler import (
    JUMP,
    WALK,
    CrawlerConfig,
    CrawlerEnv,
    CrawlerError,
    make_task,
    preset,
)
from ..myutils import format_float, mix_seed
from ..nncore.nncore import NetError
from ..ppo.ppo import (
    CurvePoint,
    PolicyValuePair,
    PpoConfig,
    PpoError,
    Trace,
    evaluate_policy,
    evaluate_random,
    record_trace,
    train,
)
from ..selfmodel.selfmodel import (
    FitConfig,
    DivergenceError,
    SelfModelEnv,
    SelfModelError,
    collect_random,
    fit_self_model,
)

logger = logging.getLogger(__name__)

ARM_MFRL, ARM_SELFMODEL, ARM_EVAL = 1, 2, 3

DEFAULT_PRESETS = (
    "crawler-2",
    "crawler-4",
    "crawler-6",
    "crawler-8",
    "crawler-12",
    "crawler-16",
)
DEFAULT_BUDGETS = (500, 1000, 2000)
PCT_FLOOR_FRACTION = 0.05
PCT_FLOOR_ABSOLUTE = 1e-3

SWEEP_COLUMNS = (
    "preset",
    "dof",
    "budget",
    "seed",
    "task",
    "score_random",
    "score_mfrl",
    "score_selfmodel",
    "pct_improvement",
    "raw_ratio",
    "model_val_loss",
    "wall_time_s",
)
REGRESSION_COLUMNS = ("budget", "slope", "intercept", "r_squared", "n_points")
TRANSFER_COLUMNS = ("policy", "task", "mean_return", "mean_z", "std_z", "max_z")

CELL_ERRORS = (SelfModelError, PpoError, NetError, CrawlerError)


class HarnessError(ValueError):
    "Une erreur de l'orchestration de l'expérience."


@dataclass(frozen=True)
class CellSpec:
    """
    Une cellule de l'expérience.

    Attributes:
        preset_name (str): Le préréglage crawler.
        budget (int): Le budget réel |D|, partagé par les deux bras.
        task (str): "walk" ou "jump".
        seed (int): Indice de graine de la cellule.
        seed_key (Tuple[int, ...]): (graine maître, indice du préréglage,
            indice du budget, indice de graine) ; les graines de chaque bras
            en dérivent.
        ppo_budget_model (int): Pas de modèle alloués au PPO du bras Dyna.
        ppo (PpoConfig): Hyperparamètres PPO (hors budget).
        fit (FitConfig): Hyperparamètres du self-model (hors graine).
        eval_episodes (int): Épisodes d'évaluation réelle.
        collect_episode_len (int): Longueur des épisodes de collecte.
        crawler_overrides (Tuple[Tuple[str, Any], ...]): Constantes
            physiques modifiées.
    """

    preset_name: str
    budget: int
    task: str = WALK
    seed: int = 0
    seed_key: Tuple[int, ...] = (0,)
    ppo_budget_model: int = 200_000
    ppo: PpoConfig = field(default_factory=PpoConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    eval_episodes: int = 10
    collect_episode_len: int = 100
    crawler_overrides: Tuple[Tuple[str, Any], ...] = ()

    def __post_init__(self):
        if self.budget < 0:
            raise HarnessError(f"Budget négatif : {self.budget}")
        if self.ppo_budget_model < 0:
            raise HarnessError("Budget de pas de modèle négatif")
        if self.task not in (WALK, JUMP):
            raise HarnessError(f"Tâche inconnue : {self.task}")

    @property
    def ppo_budget_real(self) -> int:
        return self.budget

    def crawler_config(self) -> CrawlerConfig:
        return replace(preset(self.preset_name), **dict(self.crawler_overrides))

    @property
    def dof(self) -> int:
        return self.crawler_config().dof

    def arm_seed(self, arm: int) -> int:
        return mix_seed(*self.seed_key, arm)


class ArmResult(NamedTuple):
    """
    Résultat d'un bras.

    Attributes:
        score (float): Retour moyen de l'évaluation réelle.
        real_steps (int): Pas réels consommés pour l'apprentissage.
        seed_resets (int): Resets réels servant d'observations de départ.
        model_steps (int): Pas de modèle consommés par PPO.
        model_val_loss (float): Perte de validation du self-model.
        curve (List[CurvePoint]): Courbe d'apprentissage PPO.
    """

    score: float
    real_steps: int
    seed_resets: int = 0
    model_steps: int = 0
    model_val_loss: float = math.nan
    curve: Sequence[CurvePoint] = ()


def _new_agent(config: CrawlerConfig, seed: int) -> PolicyValuePair:
    return PolicyValuePair.create(
        config.obs_dim, config.dof, np.random.default_rng(seed)
    )


def run_mfrl_cell(spec: CellSpec) -> ArmResult:
    """
    Bras MFRL : PPO entraîné sur exactement |D| pas réels.

    Args:
        spec (CellSpec): La cellule.

    Returns:
        ArmResult: Score réel et comptabilité.

    Raises:
        HarnessError: Le compteur de pas réels ne correspond pas au budget.
    """
    config = spec.crawler_config()
    task = make_task(spec.task, config)
    seed = spec.arm_seed(ARM_MFRL)
    env = CrawlerEnv(config, task, seed)
    agent = _new_agent(config, seed)
    result = train(
        agent,
        env,
        replace(spec.ppo, total_step_budget=spec.budget),
        seed,
        task,
    )
    if env.step_count != spec.budget:
        raise HarnessError(
            f"Budget réel non respecté : {env.step_count} pas pour "
            f"{spec.budget}"
        )
    score = evaluate_policy(
        agent, config, task, spec.eval_episodes, spec.arm_seed(ARM_EVAL)
    ).mean_return
    return ArmResult(score, env.step_count, curve=result.curve)


def run_selfmodel_cell(spec: CellSpec, model=None) -> ArmResult:
    """
    Bras Dyna : collecte de |D| transitions, self-model, PPO dans le modèle.

    Args:
        spec (CellSpec): La cellule.
        model (optional): Modèle à utiliser à la place du self-model appris
            (par exemple un oracle) ; aucune collecte n'a alors lieu.

    Returns:
        ArmResult: Score réel, perte de validation et comptabilité.

    Raises:
        DivergenceError: Divergence du self-model, à l'apprentissage ou
            pendant l'entraînement de PPO dans le modèle.
        HarnessError: Pas réel hors collecte détecté.
    """
    config = spec.crawler_config()
    task = make_task(spec.task, config)
    seed = spec.arm_seed(ARM_SELFMODEL)
    real_steps = 0
    val_loss = math.nan
    if model is None:
        collect_env = CrawlerEnv(config, make_task(WALK, config), seed)
        data = collect_random(
            config,
            spec.budget,
            spec.collect_episode_len,
            seed,
            env=collect_env,
        )
        real_steps = collect_env.step_count
        model = fit_self_model(data, replace(spec.fit, seed=seed))
        val_loss = model.report.validation_loss
    seed_env = CrawlerEnv(config, task, mix_seed(seed, 1))
    model_env = SelfModelEnv(model, task, config, seed_env)
    agent = _new_agent(config, seed)
    ppo_config = replace(spec.ppo, total_step_budget=spec.ppo_budget_model)
    try:
        result = train(agent, model_env, ppo_config, seed, task)
    except (PpoError, NetError) as exc:
        # Prédictions finies mais démesurées : pertes PPO non finies.
        raise DivergenceError(
            f"Entraînement dans le self-model interrompu : {exc}"
        ) from exc
    if seed_env.step_count != 0:
        raise HarnessError("Le bras self-model a consommé des pas réels")
    score = evaluate_policy(
        agent, config, task, spec.eval_episodes, spec.arm_seed(ARM_EVAL)
    ).mean_return
    return ArmResult(
        score,
        real_steps,
        seed_resets=seed_env.reset_count,
        model_steps=model_env.model_steps,
        model_val_loss=val_loss,
        curve=result.curve,
    )


def percent_improvement(
    score_sm: float,
    score_mfrl: float,
    score_random: float,
    best_known: Optional[float] = None,
) -> float:
    """
    Amélioration du bras self-model relativement à la référence MFRL.

    pct = 100 (score_sm - score_mfrl) / max(score_mfrl - score_random, plancher)
    avec plancher = max(0.05 |score_random - best_known|, 1e-3).

    Args:
        score_sm (float): Score du bras self-model.
        score_mfrl (float): Score du bras MFRL.
        score_random (float): Score de la politique aléatoire.
        best_known (Optional[float]): Meilleur score connu ; par défaut le
            maximum des trois scores.

    Returns:
        float: Le pourcentage.

    Raises:
        HarnessError: Score non fini.
    """
    scores = (score_sm, score_mfrl, score_random)
    if not all(math.isfinite(s) for s in scores):
        raise HarnessError(f"Scores non finis : {scores}")
    if best_known is None:
        best_known = max(scores)
    floor = max(
        PCT_FLOOR_FRACTION * abs(score_random - best_known),
        PCT_FLOOR_ABSOLUTE,
    )
    return 100.0 * (score_sm - score_mfrl) / max(score_mfrl - score_random,
                                                 floor)


def raw_ratio(score_sm: float, score_mfrl: float) -> float:
    return score_sm / score_mfrl if score_mfrl != 0.0 else math.nan


class Regression(NamedTuple):
    """Droite des moindres carrés et coefficient de détermination."""

    slope: float
    intercept: float
    r_squared: float
    n_points: int


def fit_r_squared(points: Sequence[Tuple[float, float]]) -> Regression:
    """
    Régression linéaire (moindres carrés ordinaires) de y sur x.

    r² = 1 - SS_res / SS_tot ; si SS_tot = 0, r² vaut 1 quand SS_res = 0 et
    0 sinon.

    Args:
        points (Sequence[Tuple[float, float]]): Les couples (x, y).

    Returns:
        Regression: Pente, ordonnée à l'origine, r² et nombre de points.

    Raises:
        HarnessError: Moins de deux valeurs de x distinctes.
    """
    data = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x, y = data[:, 0], data[:, 1]
    if len(np.unique(x)) < 2:
        raise HarnessError(
            "Au moins deux valeurs de x distinctes sont nécessaires"
        )
    x_mean, y_mean = x.mean(), y.mean()
    slope = float(np.sum((x - x_mean) * (y - y_mean)) / np.sum(
        (x - x_mean) ** 2
    ))
    intercept = float(y_mean - slope * x_mean)
    residuals = y - (slope * x + intercept)
    ss_res = float(np.sum(residuals**2))
    ss_tot = float(np.sum((y - y_mean) ** 2))
    if ss_tot == 0.0:
        r_squared = 1.0 if ss_res == 0.0 else 0.0
    else:
        r_squared = min(max(1.0 - ss_res / ss_tot, 0.0), 1.0)
    return Regression(slope, intercept, r_squared, len(data))


@dataclass(frozen=True)
class CellResult:
    """
    Résultat d'une cellule (une ligne du CSV de balayage).

    Attributes:
        preset, dof, budget, seed, task: Identité de la cellule.
        score_random, score_mfrl, score_selfmodel: Retours moyens réels.
        pct_improvement (float): Amélioration relative du bras self-model.
        raw_ratio (float): score_selfmodel / score_mfrl.
        model_val_loss (float): Perte de validation du self-model.
        wall_time_s (float): Durée de la cellule.
        real_steps (int): Pas réels du bras self-model (collecte).
        seed_resets (int): Resets réels du bras self-model.
        model_steps (int): Pas de modèle du bras self-model.
        diverged (bool): Le self-model a divergé.
        error (Optional[str]): Message d'échec ; None si la cellule a réussi.
        mfrl_curve, selfmodel_curve: Courbes d'apprentissage.
    """

    preset: str
    dof: int
    budget: int
    seed: int
    task: str
    score_random: float = math.nan
    score_mfrl: float = math.nan
    score_selfmodel: float = math.nan
    pct_improvement: float = math.nan
    raw_ratio: float = math.nan
    model_val_loss: float = math.nan
    wall_time_s: float = math.nan
    real_steps: int = 0
    seed_resets: int = 0
    model_steps: int = 0
    diverged: bool = False
    error: Optional[str] = None
    mfrl_curve: Tuple[CurvePoint, ...] = ()
    selfmodel_curve: Tuple[CurvePoint, ...] = ()

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def key(self) -> Tuple[str, int, int, int]:
        return (self.task, self.dof, self.budget, self.seed)


def run_cell(spec: CellSpec) -> CellResult:
    """
    Exécute les deux bras et la référence aléatoire d'une cellule.

    Un échec (divergence du self-model, erreur numérique) est enregistré
    dans le résultat au lieu d'être propagé.
    """
    start = time.perf_counter()
    config = spec.crawler_config()
    task = make_task(spec.task, config)
    identity = dict(
        preset=spec.preset_name,
        dof=config.dof,
        budget=spec.budget,
        seed=spec.seed,
        task=spec.task,
    )
    try:
        score_random = evaluate_random(
            config, task, spec.eval_episodes, spec.arm_seed(ARM_EVAL)
        ).mean_return
        mfrl = run_mfrl_cell(spec)
        selfmodel = run_selfmodel_cell(spec)
        pct = percent_improvement(selfmodel.score, mfrl.score, score_random)
    except CELL_ERRORS + (HarnessError,) as exc:
        logger.warning(
            "Cellule %s |D|=%d graine %d en échec : %s",
            spec.preset_name,
            spec.budget,
            spec.seed,
            exc,
        )
        return CellResult(
            **identity,
            wall_time_s=time.perf_counter() - start,
            diverged=isinstance(exc, DivergenceError),
            error=f"{type(exc).__name__}: {exc}",
        )
    result = CellResult(
        **identity,
        score_random=score_random,
        score_mfrl=mfrl.score,
        score_selfmodel=selfmodel.score,
        pct_improvement=pct,
        raw_ratio=raw_ratio(selfmodel.score, mfrl.score),
        model_val_loss=selfmodel.model_val_loss,
        wall_time_s=time.perf_counter() - start,
        real_steps=selfmodel.real_steps,
        seed_resets=selfmodel.seed_resets,
        model_steps=selfmodel.model_steps,
        mfrl_curve=tuple(mfrl.curve),
        selfmodel_curve=tuple(selfmodel.curve),
    )
    logger.info(
        "Cellule %s |D|=%d graine %d : aléatoire %.4f, MFRL %.4f, "
        "self-model %.4f, amélioration %.1f %%",
        spec.preset_name,
        spec.budget,
        spec.seed,
        score_random,
        mfrl.score,
        selfmodel.score,
        pct,
    )
    return result


@dataclass(frozen=True)
class SweepConfig:
    """
    Configuration d'un balayage préréglages x budgets x graines x tâches.

    Attributes:
        presets (Tuple[str, ...]): Au moins deux préréglages.
        budgets (Tuple[int, ...]): Budgets |D|.
        seeds (int): Graines par cellule.
        tasks (Tuple[str, ...]): Tâches.
        master_seed (int): Graine maître de tout le balayage.
        ppo_budget_model (int): Pas de modèle du bras self-model.
        ppo (PpoConfig): Hyperparamètres PPO.
        fit (FitConfig): Hyperparamètres du self-model.
        eval_episodes (int): Épisodes d'évaluation.
        collect_episode_len (int): Longueur des épisodes de collecte.
        crawler_overrides (Tuple[Tuple[str, Any], ...]): Constantes
            physiques modifiées pour tous les préréglages.
    """

    presets: Tuple[str, ...] = DEFAULT_PRESETS
    budgets: Tuple[int, ...] = DEFAULT_BUDGETS
    seeds: int = 10
    tasks: Tuple[str, ...] = (WALK,)
    master_seed: int = 0
    ppo_budget_model: int = 200_000
    ppo: PpoConfig = field(default_factory=PpoConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    eval_episodes: int = 10
    collect_episode_len: int = 100
    crawler_overrides: Tuple[Tuple[str, Any], ...] = ()

    def __post_init__(self):
        if len(self.presets) < 2:
            raise HarnessError("Au moins deux préréglages sont nécessaires")
        if self.seeds < 1:
            raise HarnessError("Au moins une graine par cellule")
        if not self.budgets or not self.tasks:
            raise HarnessError("Budgets et tâches ne peuvent être vides")

    def cells(self) -> List[CellSpec]:
        """Les cellules, dans l'ordre (tâche, préréglage, budget, graine)."""
        specs = []
        for task in self.tasks:
            for p_index, name in enumerate(self.presets):
                for b_index, budget in enumerate(self.budgets):
                    for s_index in range(self.seeds):
                        specs.append(
                            CellSpec(
                                preset_name=name,
                                budget=budget,
                                task=task,
                                seed=s_index,
                                seed_key=(
                                    self.master_seed,
                                    p_index,
                                    b_index,
                                    s_index,
                                ),
                                ppo_budget_model=self.ppo_budget_model,
                                ppo=self.ppo,
                                fit=self.fit,
                                eval_episodes=self.eval_episodes,
                                collect_episode_len=self.collect_episode_len,
                                crawler_overrides=self.crawler_overrides,
                            )
                        )
        return specs


class Aggregate(NamedTuple):
    """Agrégat des graines d'un groupe (tâche, budget, DoF)."""

    task: str
    budget: int
    dof: int
    preset: str
    median_pct: float
    mean_pct: float
    n_ok: int


@dataclass(frozen=True)
class SweepResult:
    """
    Résultat d'un balayage.

    Attributes:
        cells (Tuple[CellResult, ...]): Toutes les cellules, triées.
        aggregates (Tuple[Aggregate, ...]): Médianes par (tâche, budget, DoF).
        regressions (Dict[Tuple[str, int], Regression]): Régression DoF ->
            médiane par (tâche, budget).
    """

    cells: Tuple[CellResult, ...]
    aggregates: Tuple[Aggregate, ...]
    regressions: Dict[Tuple[str, int], Regression]

    @property
    def failures(self) -> List[CellResult]:
        return [c for c in self.cells if not c.ok]


def aggregate_cells(
    cells: Sequence[CellResult],
) -> Tuple[Tuple[Aggregate, ...], Dict[Tuple[str, int], Regression]]:
    """
    Médiane (et moyenne) des pourcentages par groupe, puis régression par
    (tâche, budget). Les cellules en échec sont exclues.
    """
    groups: Dict[Tuple[str, int, int, str], List[float]] = defaultdict(list)
    for cell in cells:
        if cell.ok:
            groups[(cell.task, cell.budget, cell.dof, cell.preset)].append(
                cell.pct_improvement
            )
    aggregates = tuple(
        Aggregate(
            task,
            budget,
            dof,
            name,
            float(statistics.median(values)),
            float(statistics.fmean(values)),
            len(values),
        )
        for (task, budget, dof, name), values in sorted(groups.items())
    )
    by_budget: Dict[Tuple[str, int], List[Tuple[int, float]]] = defaultdict(
        list
    )
    for agg in aggregates:
        by_budget[(agg.task, agg.budget)].append((agg.dof, agg.median_pct))
    regressions = {}
    for key, points in sorted(by_budget.items()):
        if len({dof for dof, _ in points}) < 2:
            logger.warning(
                "Régression impossible pour %s |D|=%d : moins de deux DoF",
                *key,
            )
            continue
        regressions[key] = fit_r_squared(points)
    return aggregates, regressions


def run_sweep(
    config: SweepConfig, jobs: int = 1, progress: bool = False
) -> SweepResult:
    """
    Exécute toutes les cellules d'un balayage et agrège les résultats.

    Les cellules sont indépendantes ; avec jobs > 1 elles tournent dans un
    pool de processus et sont réordonnées par clé avant l'agrégation, si
    bien que le résultat ne dépend pas de l'ordre d'exécution.

    Args:
        config (SweepConfig): Le balayage.
        jobs (int, optional): Nombre de processus.
        progress (bool, optional): Affiche une barre de progression (stderr).

    Returns:
        SweepResult: Les cellules, les agrégats et les régressions.
    """
    specs = config.cells()
    results: List[Optional[CellResult]] = [None] * len(specs)
    logger.info(
        "Balayage : %d cellules, %d processus", len(specs), max(jobs, 1)
    )
    with tqdm(
        total=len(specs), desc="Cellules", disable=not progress
    ) as bar:
        if jobs <= 1:
            for index, spec in enumerate(specs):
                results[index] = run_cell(spec)
                bar.update(1)
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = {
                    pool.submit(run_cell, spec): index
                    for index, spec in enumerate(specs)
                }
                for future in as_completed(futures):
                    results[futures[future]] = future.result()
                    bar.update(1)
    cells = tuple(sorted(results, key=lambda c: c.key))
    aggregates, regressions = aggregate_cells(cells)
    failed = sum(not c.ok for c in cells)
    if failed:
        logger.warning("%d cellule(s) en échec sur %d", failed, len(cells))
    logger.info("Balayage terminé")
    return SweepResult(cells, aggregates, regressions)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def sweep_csv(result: SweepResult, record_wall_time: bool = False) -> str:
    """
    Le CSV de balayage, colonnes dans l'ordre de SWEEP_COLUMNS.

    La durée n'est écrite que si `record_wall_time` est vrai, pour que deux
    exécutions identiques produisent le même fichier.
    """
    rows = []
    for cell in result.cells:
        rows.append(
            [
                cell.preset,
                str(cell.dof),
                str(cell.budget),
                str(cell.seed),
                cell.task,
                format_float(cell.score_random),
                format_float(cell.score_mfrl),
                format_float(cell.score_selfmodel),
                format_float(cell.pct_improvement),
                format_float(cell.raw_ratio),
                format_float(cell.model_val_loss),
                format_float(cell.wall_time_s) if record_wall_time else "",
            ]
        )
    return _csv_text(SWEEP_COLUMNS, rows)


def regression_csv(regressions: Dict[int, Regression]) -> str:
    """Le CSV de régression d'une tâche : une ligne par budget."""
    rows = [
        [
            str(budget),
            format_float(reg.slope),
            format_float(reg.intercept),
            format_float(reg.r_squared),
            str(reg.n_points),
        ]
        for budget, reg in sorted(regressions.items())
    ]
    return _csv_text(REGRESSION_COLUMNS, rows)


def curve_csv(curve: Sequence[CurvePoint]) -> str:
    return _csv_text(
        ("steps", "mean_return"),
        [[str(p.steps), format_float(p.mean_return)] for p in curve],
    )


class TransferRow(NamedTuple):
    """Une ligne du résumé de transfert de tâche."""

    policy: str
    task: str
    mean_return: float
    mean_z: float
    std_z: float
    max_z: float


class TransferResult(NamedTuple):
    """
    Résultat du transfert de tâche.

    Attributes:
        rows (List[TransferRow]): Une ligne par politique.
        traces (Dict[str, Trace]): Trace réelle du corps par politique.
        real_steps (int): Pas réels consommés (collecte seulement).
        model_val_loss (float): Perte de validation du self-model.
    """

    rows: List[TransferRow]
    traces: Dict[str, Trace]
    real_steps: int
    model_val_loss: float


def run_transfer(
    preset_name: str,
    budget: int,
    seed: int = 0,
    ppo_budget_model: int = 200_000,
    ppo: Optional[PpoConfig] = None,
    fit: Optional[FitConfig] = None,
    eval_episodes: int = 10,
    collect_episode_len: int = 100,
    crawler_overrides: Tuple[Tuple[str, Any], ...] = (),
) -> TransferResult:
    """
    Un seul jeu de données et un seul self-model pour deux tâches.

    Une politique de marche et une politique de saut sont entraînées dans le
    même self-model, sans aucune transition réelle supplémentaire, puis
    évaluées (avec une politique non entraînée) sur la tâche de saut réelle.

    Args:
        preset_name (str): Le préréglage.
        budget (int): Taille du jeu de données.
        seed (int, optional): Graine.
        ppo_budget_model (int, optional): Pas de modèle par politique.
        ppo (Optional[PpoConfig]): Hyperparamètres PPO.
        fit (Optional[FitConfig]): Hyperparamètres du self-model.
        eval_episodes (int, optional): Épisodes d'évaluation.
        collect_episode_len (int, optional): Longueur des épisodes de
            collecte.
        crawler_overrides (Tuple[Tuple[str, Any], ...]): Constantes
            physiques modifiées.

    Returns:
        TransferResult: Résumé et traces.
    """
    ppo = ppo or PpoConfig()
    fit = fit or FitConfig()
    config = replace(preset(preset_name), **dict(crawler_overrides))
    jump = make_task(JUMP, config)
    collect_env = CrawlerEnv(config, make_task(WALK, config), seed)
    data = collect_random(
        config, budget, collect_episode_len, seed, env=collect_env
    )
    model = fit_self_model(data, replace(fit, seed=seed))

    agents = {"untrained": _new_agent(config, seed)}
    for kind in (WALK, JUMP):
        task = make_task(kind, config)
        seed_env = CrawlerEnv(config, task, mix_seed(seed, 1))
        agent = _new_agent(config, seed)
        train(
            agent,
            SelfModelEnv(model, task, config, seed_env),
            replace(ppo, total_step_budget=ppo_budget_model),
            seed,
            task,
        )
        if seed_env.step_count != 0:
            raise HarnessError("Le transfert a consommé des pas réels")
        agents[kind] = agent

    rows, traces = [], {}
    eval_seed = mix_seed(seed, ARM_EVAL)
    for name, agent in agents.items():
        evaluation = evaluate_policy(agent, config, jump, eval_episodes,
                                     eval_seed)
        trace = record_trace(agent, config, jump, eval_seed)
        traces[name] = trace
        rows.append(
            TransferRow(
                name,
                JUMP,
                evaluation.mean_return,
                float(np.mean(trace.z)),
                float(np.std(trace.z)),
                float(np.max(trace.z)),
            )
        )
        logger.info(
            "Transfert %s : retour de saut %.4f, z max %.3f",
            name,
            evaluation.mean_return,
            rows[-1].max_z,
        )
    return TransferResult(
        rows, traces, collect_env.step_count, model.report.validation_loss
    )


def transfer_csv(result: TransferResult) -> str:
    rows = [
        [row.policy, row.task] + [format_float(v) for v in row[2:]]
        for row in result.rows
    ]
    return _csv_text(TRANSFER_COLUMNS, rows)


def trace_csv(traces: Dict[str, Trace]) -> str:
    """Traces au format long : policy, step, x, z."""
    rows = []
    for name, trace in traces.items():
        for step, (x, z) in enumerate(zip(trace.x, trace.z)):
            rows.append([name, str(step), format_float(x), format_float(z)])
    return _csv_text(("policy", "step", "x", "z"), rows)
