"""Tests unitaires de l'orchestration de l'expérience (pytest)."""

__copyright__ = "Copyright (C) 2024 Grostim"
__license__ = "GNU GPLv2"

import logging
import math
import random
import statistics
from dataclasses import replace

import numpy as np
import pytest

from ..crawler.crawler import make_task, preset
from ..myutils import mix_seed
from ..ppo.ppo import PpoConfig, PpoError, evaluate_policy
from ..selfmodel.selfmodel import FitConfig, OracleModel, SelfModelEnv
from . import dyna
from .dyna import (
    ARM_EVAL,
    ARM_MFRL,
    SWEEP_COLUMNS,
    CellResult,
    CellSpec,
    HarnessError,
    SweepConfig,
    _new_agent,
    aggregate_cells,
    fit_r_squared,
    percent_improvement,
    raw_ratio,
    regression_csv,
    run_cell,
    run_mfrl_cell,
    run_selfmodel_cell,
    run_sweep,
    run_transfer,
    sweep_csv,
    trace_csv,
    transfer_csv,
)

logger = logging.getLogger(__name__)

TINY_PPO = PpoConfig(rollout_batch=64, minibatch_size=32, epochs_per_update=1)
TINY_FIT = FitConfig(hidden_sizes=(16, 16), max_epochs=3)
SHORT = (("horizon", 30), ("jump_horizon", 30))


def tiny_spec(**kwargs):
    values = dict(
        preset_name="crawler-2",
        budget=100,
        seed_key=(0, 0, 0, 0),
        ppo_budget_model=150,
        ppo=TINY_PPO,
        fit=TINY_FIT,
        eval_episodes=2,
        crawler_overrides=SHORT,
    )
    values.update(kwargs)
    return CellSpec(**values)


def tiny_sweep(**kwargs):
    values = dict(
        presets=("crawler-2", "crawler-4"),
        budgets=(40,),
        seeds=1,
        master_seed=3,
        ppo_budget_model=100,
        ppo=TINY_PPO,
        fit=TINY_FIT,
        eval_episodes=1,
        crawler_overrides=SHORT,
    )
    values.update(kwargs)
    return SweepConfig(**values)


def fake_cell(dof, seed, pct, budget=1000, error=None):
    return CellResult(
        preset=f"crawler-{dof}",
        dof=dof,
        budget=budget,
        seed=seed,
        task="walk",
        pct_improvement=pct,
        error=error,
    )


class TestPercentImprovement:
    """
    Tests pour la fonction percent_improvement.
    """

    def test_equal_scores(self):
        """Scores égaux : amélioration nulle."""
        assert percent_improvement(3.0, 3.0, 1.0) == 0.0

    def test_double_gain(self):
        """Gain double au-dessus du hasard : 100 %."""
        assert percent_improvement(5.0, 3.0, 1.0) == pytest.approx(100.0)

    def test_floor(self):
        """Référence au niveau du hasard : dénominateur plancher."""
        # plancher = 0.05 * |0 - 1| = 0.05
        assert percent_improvement(1.0, 0.0, 0.0) == pytest.approx(2000.0)

    def test_absolute_floor(self):
        assert percent_improvement(0.0, 0.0, 0.0) == 0.0
        assert percent_improvement(1e-4, 0.0, 0.0) == pytest.approx(10.0)

    def test_ratio_reading_of_3000(self):
        """Meilleur score connu fourni : le plancher ne s'applique pas."""
        pct = percent_improvement(31.0, 1.0, 0.0, best_known=10.0)
        assert pct == pytest.approx(3000.0)

    def test_non_finite(self):
        with pytest.raises(HarnessError):
            percent_improvement(math.nan, 1.0, 0.0)

    def test_raw_ratio(self):
        assert raw_ratio(3.0, 2.0) == 1.5
        assert math.isnan(raw_ratio(3.0, 0.0))


class TestFitRSquared:
    """
    Tests pour la fonction fit_r_squared.
    """

    def test_exact_line(self):
        """y = 2x + 1 : r² = 1."""
        reg = fit_r_squared([(x, 2 * x + 1) for x in (2, 4, 6, 8, 12, 16)])
        assert reg.slope == pytest.approx(2.0)
        assert reg.intercept == pytest.approx(1.0)
        assert reg.r_squared == pytest.approx(1.0)
        assert reg.n_points == 6

    def test_hand_computed(self):
        """x = (1, 2, 4), y = (1, 2, 3) : pente 9/14, r² = 27/28."""
        reg = fit_r_squared([(1, 1), (2, 2), (4, 3)])
        assert reg.slope == pytest.approx(9 / 14, abs=1e-12)
        assert reg.intercept == pytest.approx(0.5, abs=1e-12)
        assert reg.r_squared == pytest.approx(27 / 28, abs=1e-12)

    def test_constant_y(self):
        """y constant : SS_tot = SS_res = 0, r² = 1."""
        reg = fit_r_squared([(1, 5.0), (2, 5.0), (3, 5.0)])
        assert reg.slope == 0.0
        assert reg.r_squared == 1.0

    def test_single_x(self):
        """Une seule valeur de x : refusé."""
        with pytest.raises(HarnessError, match="distinctes"):
            fit_r_squared([(4, 1.0), (4, 2.0)])

    def test_normal_equations(self):
        """Égal à la résolution directe des équations normales."""
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 20, size=30)
        y = 3.0 * x - 2.0 + rng.normal(scale=5.0, size=30)
        reg = fit_r_squared(list(zip(x, y)))
        design = np.column_stack([x, np.ones_like(x)])
        slope, intercept = np.linalg.solve(design.T @ design, design.T @ y)
        fitted = design @ np.array([slope, intercept])
        expected = 1.0 - np.sum((y - fitted) ** 2) / np.sum(
            (y - y.mean()) ** 2
        )
        assert reg.slope == pytest.approx(slope, abs=1e-10)
        assert reg.intercept == pytest.approx(intercept, abs=1e-10)
        assert reg.r_squared == pytest.approx(expected, abs=1e-10)
        assert 0.0 <= reg.r_squared <= 1.0


class TestCellSpec:
    def test_arm_seed(self):
        """Graine de bras = mélange (maître, indices, étiquette)."""
        spec = tiny_spec(seed_key=(9, 1, 2, 3))
        assert spec.arm_seed(ARM_MFRL) == mix_seed(9, 1, 2, 3, ARM_MFRL)
        assert spec.arm_seed(ARM_MFRL) != spec.arm_seed(ARM_EVAL)

    def test_matched_budget(self):
        spec = tiny_spec(budget=1000)
        assert spec.ppo_budget_real == 1000
        assert spec.dof == 2

    def test_invalid_task(self):
        with pytest.raises(HarnessError):
            tiny_spec(task="swim")


class TestSweepConfig:
    def test_cell_count(self):
        """6 préréglages x 1 budget x 10 graines : 60 cellules."""
        config = SweepConfig(budgets=(1000,), seeds=10)
        assert len(config.cells()) == 60

    def test_too_few_presets(self):
        with pytest.raises(HarnessError, match="deux"):
            SweepConfig(presets=("crawler-2",))

    def test_no_seed(self):
        with pytest.raises(HarnessError):
            SweepConfig(seeds=0)


class TestRunMfrlCell:
    """
    Tests pour la fonction run_mfrl_cell.
    """

    def test_exact_real_budget(self):
        """Exactement |D| pas réels, score fini."""
        result = run_mfrl_cell(tiny_spec(budget=150))
        assert result.real_steps == 150
        assert math.isfinite(result.score)

    def test_deterministic(self):
        spec = tiny_spec()
        assert run_mfrl_cell(spec).score == run_mfrl_cell(spec).score

    def test_zero_budget_is_untrained_score(self):
        """Budget nul : score de l'agent non entraîné."""
        spec = tiny_spec(budget=0)
        config = spec.crawler_config()
        task = make_task("walk", config)
        agent = _new_agent(config, spec.arm_seed(ARM_MFRL))
        expected = evaluate_policy(
            agent, config, task, 2, spec.arm_seed(ARM_EVAL)
        ).mean_return
        result = run_mfrl_cell(spec)
        assert result.real_steps == 0
        assert result.score == expected


class TestRunSelfModelCell:
    """
    Tests pour la fonction run_selfmodel_cell.
    """

    def test_accounting(self):
        """|D| pas réels de collecte, resets seulement pendant PPO."""
        result = run_selfmodel_cell(tiny_spec(budget=100))
        assert result.real_steps == 100
        assert result.model_steps == 150
        # 150 pas de modèle, épisodes d'au plus 30 pas.
        assert result.seed_resets >= 5
        assert math.isfinite(result.model_val_loss)

    def test_deterministic(self):
        spec = tiny_spec()
        first, second = run_selfmodel_cell(spec), run_selfmodel_cell(spec)
        assert first.score == second.score
        assert first.model_val_loss == second.model_val_loss

    def test_oracle_model(self):
        """Avec un oracle, aucune collecte n'a lieu."""
        spec = tiny_spec()
        config = spec.crawler_config()
        oracle = OracleModel(config, make_task("walk", config), seed=0)
        result = run_selfmodel_cell(spec, model=oracle)
        assert result.real_steps == 0
        assert math.isnan(result.model_val_loss)
        assert math.isfinite(result.score)

    @pytest.mark.slow
    def test_oracle_matches_mfrl(self):
        """Oracle à la place du modèle : score comparable au MFRL."""
        oracle_scores, mfrl_scores = [], []
        for index in range(5):
            spec = CellSpec(
                "crawler-4",
                budget=50_000,
                seed=index,
                seed_key=(0, 1, 0, index),
                ppo_budget_model=50_000,
            )
            config = spec.crawler_config()
            oracle = OracleModel(config, make_task("walk", config), seed=0)
            oracle_scores.append(run_selfmodel_cell(spec, oracle).score)
            mfrl_scores.append(run_mfrl_cell(spec).score)
        oracle_mean = statistics.fmean(oracle_scores)
        mfrl_mean = statistics.fmean(mfrl_scores)
        spread = statistics.pstdev(oracle_scores) + statistics.pstdev(
            mfrl_scores
        )
        # Intervalles moyenne ± écart-type qui se recouvrent.
        assert abs(oracle_mean - mfrl_mean) <= spread


class TestRunCell:
    """
    Tests pour la fonction run_cell.
    """

    def test_complete_cell(self):
        cell = run_cell(tiny_spec())
        assert cell.ok
        assert cell.dof == 2
        assert cell.real_steps == 100
        assert math.isfinite(cell.pct_improvement)
        assert cell.pct_improvement == pytest.approx(
            percent_improvement(
                cell.score_selfmodel, cell.score_mfrl, cell.score_random
            )
        )

    def test_failure_recorded(self):
        """Jeu trop petit pour le self-model : échec enregistré."""
        cell = run_cell(tiny_spec(budget=10))
        assert not cell.ok
        assert "20" in cell.error
        assert not cell.diverged
        assert math.isnan(cell.pct_improvement)

    def test_ppo_failure_in_model_is_divergence(self, monkeypatch):
        """
        Pertes PPO non finies dans le self-model : la cellule est marquée
        divergente ; le bras MFRL n'est pas touché.

        Args:
            monkeypatch: Fixture pytest pour modifier temporairement le
                comportement.
        """
        real_train = dyna.train

        def exploding_train(agent, env, config, seed, task=None):
            if isinstance(env, SelfModelEnv):
                raise PpoError("Perte non finie à l'époque 1")
            return real_train(agent, env, config, seed, task)

        monkeypatch.setattr(dyna, "train", exploding_train)
        cell = run_cell(tiny_spec())
        assert not cell.ok
        assert cell.diverged
        assert cell.error.startswith("DivergenceError")
        assert math.isnan(cell.pct_improvement)


class TestAggregateCells:
    """
    Tests pour la fonction aggregate_cells.
    """

    def cells(self):
        cells = []
        for dof, base in ((2, 0.0), (4, 10.0), (8, 30.0)):
            for seed, offset in enumerate((-1.0, 0.0, 5.0)):
                cells.append(fake_cell(dof, seed, base + offset))
        cells.append(fake_cell(8, 3, 1e6, error="SelfModelError: boom"))
        return cells

    def test_medians(self):
        """Médiane par DoF, cellules en échec exclues."""
        aggregates, _ = aggregate_cells(self.cells())
        assert [a.median_pct for a in aggregates] == [0.0, 10.0, 30.0]
        assert [a.n_ok for a in aggregates] == [3, 3, 3]
        assert aggregates[0].mean_pct == pytest.approx(4.0 / 3.0)

    def test_regression(self):
        _, regressions = aggregate_cells(self.cells())
        reg = regressions[("walk", 1000)]
        assert reg.n_points == 3
        assert reg.slope > 0.0

    def test_order_independent(self):
        """L'ordre des cellules ne change pas le résultat."""
        cells = self.cells()
        shuffled = list(cells)
        random.Random(4).shuffle(shuffled)
        assert aggregate_cells(cells) == aggregate_cells(shuffled)

    def test_single_dof_has_no_regression(self):
        _, regressions = aggregate_cells([fake_cell(2, 0, 1.0)])
        assert regressions == {}


class TestRunSweep:
    """
    Tests pour la fonction run_sweep.
    """

    def test_csv_deterministic(self):
        """Même configuration et graine maître : CSV identiques."""
        first = sweep_csv(run_sweep(tiny_sweep()))
        second = sweep_csv(run_sweep(tiny_sweep()))
        assert first == second
        lines = first.splitlines()
        assert lines[0] == ",".join(SWEEP_COLUMNS)
        assert len(lines) == 3
        assert lines[1].startswith("crawler-2,2,40,0,walk,")
        assert lines[1].endswith(",")

    def test_wall_time_on_request(self):
        result = run_sweep(tiny_sweep())
        line = sweep_csv(result, record_wall_time=True).splitlines()[1]
        assert float(line.rsplit(",", 1)[1]) > 0.0

    def test_regression(self):
        result = run_sweep(tiny_sweep())
        assert len(result.aggregates) == 2
        assert ("walk", 40) in result.regressions
        text = regression_csv({40: result.regressions[("walk", 40)]})
        header, row = text.splitlines()
        assert header == "budget,slope,intercept,r_squared,n_points"
        assert row.startswith("40,") and row.endswith(",2")

    def test_failures_do_not_stop_sweep(self):
        """Des cellules en échec n'interrompent pas le balayage."""
        result = run_sweep(tiny_sweep(budgets=(10, 40)))
        assert len(result.cells) == 4
        assert len(result.failures) == 2
        assert all(c.budget == 10 for c in result.failures)

    @pytest.mark.slow
    def test_parallel_same_result(self):
        """Deux processus : même CSV qu'en séquentiel."""
        config = tiny_sweep(seeds=2)
        assert sweep_csv(run_sweep(config, jobs=2)) == sweep_csv(
            run_sweep(config, jobs=1)
        )

    @pytest.mark.slow
    def test_selfmodel_gain_grows_with_dof(self):
        """
        Marche, six corps, |D| = 1000, cinq graines : l'amélioration du
        self-model croît avec les DoF (pente positive, r² >= 0.5 ; la
        mesure de référence est r² = 0.90).
        """
        result = run_sweep(SweepConfig(budgets=(1000,), seeds=5), jobs=4)
        reg = result.regressions[("walk", 1000)]
        logger.info(
            "Pente %.3f %%/DoF, r² = %.3f (référence 0.90)",
            reg.slope,
            reg.r_squared,
        )
        assert reg.n_points == 6
        assert reg.slope > 0.0
        assert reg.r_squared >= 0.5


class TestRunTransfer:
    """
    Tests pour la fonction run_transfer.
    """

    def test_rows_and_budget(self):
        """Trois politiques évaluées sur le saut, |D| pas réels seulement."""
        result = run_transfer(
            "crawler-2",
            60,
            seed=1,
            ppo_budget_model=100,
            ppo=TINY_PPO,
            fit=TINY_FIT,
            eval_episodes=1,
        )
        assert [row.policy for row in result.rows] == [
            "untrained",
            "walk",
            "jump",
        ]
        assert all(row.task == "jump" for row in result.rows)
        assert result.real_steps == 60
        summary = transfer_csv(result).splitlines()
        assert summary[0] == "policy,task,mean_return,mean_z,std_z,max_z"
        assert len(summary) == 4
        traces = trace_csv(result.traces).splitlines()
        assert traces[0] == "policy,step,x,z"
        assert traces[1].startswith("untrained,0,")

    @pytest.mark.slow
    def test_jump_policy_jumps_higher(self):
        """Politique de saut meilleure que la marche sur la tâche de saut."""
        result = run_transfer("crawler-4", 1000, seed=0)
        returns = {row.policy: row.mean_return for row in result.rows}
        assert returns["jump"] > returns["walk"]


def test_sweep_preset_override_kept():
    """Les surcharges physiques s'appliquent à chaque cellule."""
    config = tiny_sweep()
    spec = config.cells()[0]
    assert spec.crawler_config() == replace(
        preset("crawler-2"), horizon=30, jump_horizon=30
    )
