"""Self-model : collecte aléatoire, apprentissage du modèle direct, rollouts.

Le self-model prédit la variation normalisée de l'observation,
f([s, a]) ~ (s' - s - moyenne) / écart-type, à partir de l'observation et
de l'action normalisées. Une fois appris, il remplace l'environnement réel :
`SelfModelEnv` expose la même interface reset/step que `CrawlerEnv`, le réel
ne servant plus qu'à fournir l'observation de départ de chaque épisode.
"""

__copyright__ = "Copyright (C) 2024 Grostim"
__license__ = "GNU GPLv2"

import logging
from dataclasses import dataclass
from typing import BinaryIO, Callable, List, NamedTuple, Optional, Tuple

import numpy as np

from ..crawler.crawler import (
    CrawlerConfig,
    CrawlerEnv,
    PhysicsState,
    StepResult,
    TaskSpec,
    env_reset,
    env_step,
    make_task,
    observation_done,
    task_reward,
)
from ..myutils import (
    FormatError,
    read_f32,
    read_header,
    read_u32,
    read_u64,
    write_f32,
    write_header,
    write_u32,
    write_u64,
)
from ..nncore.nncore import (
    AdamState,
    DenseNet,
    NetError,
    adam_update,
    net_backward,
    net_forward,
    net_output,
    read_net,
    write_net,
)

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"SMDS"
MODEL_MAGIC = b"SMFM"
VERSION = 1

STD_FLOOR = 1e-6
MIN_DATASET = 20

Policy = Callable[[np.ndarray], np.ndarray]


class SelfModelError(ValueError):
    "Une erreur du self-model."


class DivergenceError(SelfModelError):
    "Perte ou paramètre non fini pendant l'apprentissage."


@dataclass(frozen=True, eq=False)
class NormStats:
    """
    Moyennes et écarts-types par dimension (écarts-types planchers 1e-6).

    Attributes:
        obs_mean, obs_std: Statistiques des observations s.
        act_mean, act_std: Statistiques des actions a.
        delta_mean, delta_std: Statistiques des variations s' - s.
    """

    obs_mean: np.ndarray
    obs_std: np.ndarray
    act_mean: np.ndarray
    act_std: np.ndarray
    delta_mean: np.ndarray
    delta_std: np.ndarray

    @classmethod
    def compute(
        cls, states: np.ndarray, actions: np.ndarray, next_states: np.ndarray
    ) -> "NormStats":
        deltas = next_states - states

        def floored_std(values):
            return np.maximum(values.std(axis=0), STD_FLOOR)

        return cls(
            obs_mean=states.mean(axis=0),
            obs_std=floored_std(states),
            act_mean=actions.mean(axis=0),
            act_std=floored_std(actions),
            delta_mean=deltas.mean(axis=0),
            delta_std=floored_std(deltas),
        )

    def pairs(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return [
            (self.obs_mean, self.obs_std),
            (self.act_mean, self.act_std),
            (self.delta_mean, self.delta_std),
        ]

    def normalize_obs(self, s: np.ndarray) -> np.ndarray:
        return (s - self.obs_mean) / self.obs_std

    def normalize_act(self, a: np.ndarray) -> np.ndarray:
        return (a - self.act_mean) / self.act_std

    def normalize_delta(self, d: np.ndarray) -> np.ndarray:
        return (d - self.delta_mean) / self.delta_std

    def denormalize_delta(self, d: np.ndarray) -> np.ndarray:
        """Variations constantes dans le jeu (écart-type au plancher) :
        la moyenne, quelle que soit la sortie du réseau."""
        return np.where(
            self.delta_std <= STD_FLOOR,
            self.delta_mean,
            d * self.delta_std + self.delta_mean,
        )

    def model_input(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Entrée normalisée [s, a] du réseau (vecteur ou lot)."""
        return np.concatenate(
            [self.normalize_obs(s), self.normalize_act(a)], axis=-1
        )


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    """
    Le jeu de transitions D = {(s, a, s')} et ses statistiques.

    Attributes:
        states (np.ndarray): Observations s, une par ligne.
        actions (np.ndarray): Actions a.
        next_states (np.ndarray): Observations suivantes s'.
        norm_stats (NormStats): Statistiques de normalisation.
    """

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    norm_stats: NormStats

    @classmethod
    def from_arrays(cls, states, actions, next_states) -> "TransitionDataset":
        """
        Construit un jeu de données et calcule ses statistiques.

        Raises:
            SelfModelError: Dimensions incohérentes ou jeu vide.
        """
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        next_states = np.asarray(next_states, dtype=np.float64)
        if states.ndim != 2 or actions.ndim != 2 or len(states) == 0:
            raise SelfModelError("Jeu de transitions vide ou mal formé")
        if (
            next_states.shape != states.shape
            or len(actions) != len(states)
        ):
            raise SelfModelError(
                f"Dimensions incohérentes : s {states.shape}, "
                f"a {actions.shape}, s' {next_states.shape}"
            )
        return cls(
            states,
            actions,
            next_states,
            NormStats.compute(states, actions, next_states),
        )

    def __len__(self) -> int:
        return len(self.states)

    @property
    def obs_dim(self) -> int:
        return self.states.shape[1]

    @property
    def act_dim(self) -> int:
        return self.actions.shape[1]


@dataclass(frozen=True)
class FitConfig:
    """
    Hyperparamètres de l'apprentissage du self-model.

    Attributes:
        hidden_sizes (Tuple[int, ...]): Couches cachées (relu).
        lr (float): Pas d'Adam.
        batch_size (int): Taille des mini-lots.
        max_epochs (int): Nombre maximal d'époques.
        patience (int): Époques sans amélioration avant l'arrêt.
        validation_fraction (float): Part de validation ; 0 désactive la
            validation (suivi de la perte d'entraînement).
        seed (int): Graine (initialisation, partage, mélanges).
    """

    hidden_sizes: Tuple[int, ...] = (256, 256)
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    validation_fraction: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class TrainingReport:
    """Pertes finales et nombre d'époques d'un apprentissage."""

    train_loss: float
    validation_loss: float
    epochs_run: int
    best_epoch: int


@dataclass(frozen=True, eq=False)
class SelfModel:
    """
    Le self-model appris.

    Attributes:
        net (DenseNet): [s, a] normalisés -> variation normalisée.
        norm_stats (NormStats): Statistiques figées du jeu d'entraînement.
        report (Optional[TrainingReport]): Rapport d'apprentissage.
    """

    net: DenseNet
    norm_stats: NormStats
    report: Optional[TrainingReport] = None

    def __post_init__(self):
        obs_dim = len(self.norm_stats.obs_mean)
        act_dim = len(self.norm_stats.act_mean)
        if (
            self.net.input_size != obs_dim + act_dim
            or self.net.output_size != obs_dim
        ):
            raise SelfModelError(
                f"Réseau {self.net.layer_sizes} incompatible avec "
                f"obs_dim={obs_dim}, act_dim={act_dim}"
            )

    @property
    def obs_dim(self) -> int:
        return len(self.norm_stats.obs_mean)

    @property
    def act_dim(self) -> int:
        return len(self.norm_stats.act_mean)

    def predict(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        return model_predict(self, s, a)


def collect_random(
    config: CrawlerConfig,
    n: int,
    episode_len: int = 100,
    seed: int = 0,
    env: Optional[CrawlerEnv] = None,
) -> TransitionDataset:
    """
    Collecte n transitions réelles sous des actions uniformes dans [-1, 1]^m.

    Args:
        config (CrawlerConfig): La morphologie.
        n (int): Nombre exact de transitions.
        episode_len (int, optional): Reset tous les episode_len pas.
        seed (int, optional): Graine des actions et des resets.
        env (Optional[CrawlerEnv]): Environnement instrumenté à utiliser
            (ses compteurs permettent de vérifier le budget).

    Returns:
        TransitionDataset: Le jeu de données, statistiques calculées.
    """
    if n < 1:
        raise SelfModelError(f"Nombre de transitions invalide : {n}")
    if env is None:
        env = CrawlerEnv(config, make_task("walk", config), seed)
    rng = np.random.default_rng(seed)
    states = np.empty((n, config.obs_dim))
    actions = np.empty((n, config.dof))
    next_states = np.empty((n, config.obs_dim))
    obs = env.reset()
    steps_in_episode = 0
    for i in range(n):
        if steps_in_episode >= episode_len:
            obs = env.reset()
            steps_in_episode = 0
        action = rng.uniform(-1.0, 1.0, size=config.dof)
        result = env.step(action)
        states[i], actions[i], next_states[i] = obs, action, result.obs
        obs = result.obs
        steps_in_episode += 1
        if result.done:
            steps_in_episode = episode_len
    logger.info(
        "Collecte terminée : %d transitions, %d épisodes", n, env.reset_count
    )
    return TransitionDataset.from_arrays(states, actions, next_states)


def _split(n: int, fraction: float, rng: np.random.Generator):
    order = rng.permutation(n)
    n_val = int(round(n * fraction)) if fraction > 0.0 else 0
    if fraction > 0.0:
        n_val = min(max(n_val, 1), n - 1)
    return order[n_val:], order[:n_val]


def _mse(net: DenseNet, inputs: np.ndarray, targets: np.ndarray) -> float:
    if len(inputs) == 0:
        return float("nan")
    return float(np.mean((net_output(net, inputs) - targets) ** 2))


def fit_self_model(
    data: TransitionDataset, hyper: Optional[FitConfig] = None
) -> SelfModel:
    """
    Apprend le self-model par moindres carrés sur la variation normalisée.

    Partage entraînement/validation mélangé par graine ; arrêt après
    max_epochs ou `patience` époques sans amélioration de la validation ;
    retourne les paramètres de la meilleure époque.

    Args:
        data (TransitionDataset): Le jeu de données (au moins 20 transitions).
        hyper (Optional[FitConfig]): Hyperparamètres.

    Returns:
        SelfModel: Le modèle appris et son rapport.

    Raises:
        SelfModelError: Jeu trop petit, ou divergence (époque indiquée).
    """
    hyper = hyper or FitConfig()
    if len(data) < MIN_DATASET:
        raise SelfModelError(
            f"Au moins {MIN_DATASET} transitions nécessaires, {len(data)} "
            "fournies"
        )
    stats = data.norm_stats
    rng = np.random.default_rng(hyper.seed)
    inputs = stats.model_input(data.states, data.actions)
    targets = stats.normalize_delta(data.next_states - data.states)
    train_idx, val_idx = _split(len(data), hyper.validation_fraction, rng)
    x_train, y_train = inputs[train_idx], targets[train_idx]
    x_val, y_val = inputs[val_idx], targets[val_idx]
    monitor_validation = len(val_idx) > 0

    sizes = (data.obs_dim + data.act_dim,) + tuple(hyper.hidden_sizes) + (
        data.obs_dim,
    )
    net = DenseNet.create(sizes, "relu", rng)
    state = AdamState.for_net(net, lr=hyper.lr)
    best_net, best_loss, best_epoch = net, np.inf, 0
    train_loss = val_loss = float("nan")
    epoch = 0
    for epoch in range(1, hyper.max_epochs + 1):
        order = rng.permutation(len(x_train))
        for start in range(0, len(order), hyper.batch_size):
            batch = order[start:start + hyper.batch_size]
            output, cache = net_forward(net, x_train[batch])
            residual = output - y_train[batch]
            grad = 2.0 * residual / residual.size
            try:
                net, state = adam_update(
                    net, net_backward(net, cache, grad), state
                )
            except NetError as exc:
                raise DivergenceError(
                    f"Divergence à l'époque {epoch} : {exc}"
                ) from exc
        train_loss = _mse(net, x_train, y_train)
        val_loss = _mse(net, x_val, y_val) if monitor_validation else train_loss
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergenceError(
                f"Divergence à l'époque {epoch} : perte non finie"
            )
        logger.debug(
            "Époque %d : entraînement %.5f, validation %.5f",
            epoch,
            train_loss,
            val_loss,
        )
        if val_loss < best_loss:
            best_net, best_loss, best_epoch = net, val_loss, epoch
        elif epoch - best_epoch >= hyper.patience:
            break
    report = TrainingReport(
        train_loss=_mse(best_net, x_train, y_train),
        validation_loss=float(best_loss),
        epochs_run=epoch,
        best_epoch=best_epoch,
    )
    logger.info(
        "Self-model appris : %d époques, meilleure %d, validation %.5f",
        report.epochs_run,
        report.best_epoch,
        report.validation_loss,
    )
    return SelfModel(best_net, stats, report)


def model_predict(model: SelfModel, s, a) -> np.ndarray:
    """
    Prédit l'observation suivante : s + dénormalise(net(normalise([s, a]))).

    Args:
        model (SelfModel): Le modèle.
        s: Observation (ou lot d'observations).
        a: Action (ou lot d'actions).

    Returns:
        np.ndarray: L'observation prédite.

    Raises:
        SelfModelError: Dimensions incorrectes ou entrée non finie.
    """
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if s.shape[-1] != model.obs_dim or a.shape[-1] != model.act_dim:
        raise SelfModelError(
            f"Dimensions {s.shape}/{a.shape}, attendu {model.obs_dim}/"
            f"{model.act_dim}"
        )
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
        raise SelfModelError("Entrée non finie")
    stats = model.norm_stats
    delta = net_output(model.net, stats.model_input(s, a))
    return s + stats.denormalize_delta(delta)


class SelfModelEnv:
    """
    Environnement synthétique : les transitions viennent du self-model.

    Seul `reset` touche le réel (pour l'observation de départ) ; `step` ne
    consulte que le modèle et la fonction de récompense vraie. Une prédiction
    non finie tronque l'épisode.
    """

    def __init__(
        self,
        model,
        task: TaskSpec,
        config: CrawlerConfig,
        seed_env: Optional[CrawlerEnv] = None,
        debug: bool = False,
    ):
        """
        Initialise l'environnement synthétique.

        Args:
            model: Objet exposant predict(s, a) (SelfModel ou oracle).
            task (TaskSpec): La tâche.
            config (CrawlerConfig): La morphologie (dt, hauteur de chute).
            seed_env (Optional[CrawlerEnv]): Environnement réel fournissant
                les observations de départ.
            debug (bool, optional): Active les messages de débogage.
        """
        self.model = model
        self.task = task
        self.config = config
        self.seed_env = seed_env
        self.debug = debug
        self.logger = logging.getLogger(__name__)
        self.obs: Optional[np.ndarray] = None
        self.steps_in_episode = 0
        self.model_steps = 0
        self.truncations = 0

    def _debug(self, message: str):
        if self.debug:
            self.logger.debug(message)

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    @property
    def act_dim(self) -> int:
        return self.config.dof

    def seed(self, s0: np.ndarray) -> np.ndarray:
        """Démarre un épisode à partir d'une observation réelle donnée."""
        self.obs = np.array(s0, dtype=np.float64)
        self.steps_in_episode = 0
        return self.obs

    def reset(self) -> np.ndarray:
        """Démarre un épisode depuis un reset réel."""
        if self.seed_env is None:
            raise SelfModelError("Aucun environnement réel pour le départ")
        s0 = self.seed_env.reset()
        sync = getattr(self.model, "sync", None)
        if sync is not None:
            sync(self.seed_env.state)
        return self.seed(s0)

    def step(self, action) -> StepResult:
        """Un pas de modèle : ŝ' = predict(ŝ, a), récompense vraie."""
        if self.obs is None:
            raise SelfModelError("step() appelé avant reset()")
        self.model_steps += 1
        self.steps_in_episode += 1
        try:
            predicted = np.asarray(
                self.model.predict(self.obs, action), dtype=np.float64
            )
        except (SelfModelError, NetError, FloatingPointError) as exc:
            self._debug(f"Prédiction impossible : {exc}")
            predicted = None
        if predicted is None or not np.all(np.isfinite(predicted)):
            self.truncations += 1
            self.logger.warning(
                "Rollout tronqué au pas %d : prédiction non finie",
                self.steps_in_episode,
            )
            obs, self.obs = self.obs, None
            return StepResult(obs, 0.0, True, truncated=True)
        self.obs = predicted
        reward = task_reward(self.task, predicted, self.config.dt)
        done = self.steps_in_episode >= self.task.horizon or observation_done(
            self.task, predicted, self.config
        )
        return StepResult(predicted, reward, bool(done))


class Rollout(NamedTuple):
    """
    Trajectoire en boucle ouverte.

    Attributes:
        observations (np.ndarray): ŝ_0..ŝ_T (T+1 lignes).
        actions (np.ndarray): a_0..a_{T-1}.
        rewards (np.ndarray): r_0..r_{T-1}.
        dones (np.ndarray): done_0..done_{T-1}.
        truncated (bool): Vrai si une prédiction non finie a coupé la
            trajectoire.
    """

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    truncated: bool


def model_rollout(
    model,
    s0: np.ndarray,
    policy: Policy,
    task: TaskSpec,
    horizon: int,
    config: CrawlerConfig,
) -> Rollout:
    """
    Déroule la politique dans le modèle à partir d'une observation réelle.

    ŝ_{t+1} = predict(ŝ_t, policy(ŝ_t)) ; la récompense et l'arrêt sont ceux
    de la tâche vraie appliqués à l'observation prédite. Le réel n'est jamais
    consulté.

    Args:
        model: Objet exposant predict(s, a).
        s0 (np.ndarray): Observation de départ (issue d'un reset réel).
        policy (Policy): Observation -> action.
        task (TaskSpec): La tâche.
        horizon (int): Nombre maximal de pas.
        config (CrawlerConfig): La morphologie (dt, hauteur de chute).

    Returns:
        Rollout: La trajectoire.
    """
    env = SelfModelEnv(model, task, config)
    observations = [env.seed(s0)]
    actions, rewards, dones = [], [], []
    truncated = False
    for _ in range(horizon):
        action = np.asarray(policy(observations[-1]), dtype=np.float64)
        result = env.step(action)
        if result.truncated:
            truncated = True
            break
        observations.append(result.obs)
        actions.append(action)
        rewards.append(result.reward)
        dones.append(result.done)
        if result.done:
            break
    act_dim = config.dof
    return Rollout(
        observations=np.array(observations),
        actions=np.array(actions).reshape(-1, act_dim),
        rewards=np.array(rewards, dtype=np.float64),
        dones=np.array(dones, dtype=bool),
        truncated=truncated,
    )


class OracleModel:
    """
    Le vrai simulateur présenté comme un self-model.

    Il garde l'état physique caché (position x, vitesse de tangage) et
    l'avance à chaque predict ; sert aux tests de substitution.
    """

    def __init__(self, config: CrawlerConfig, task: TaskSpec, seed: int):
        self.config = config
        self.task = task
        self.state, self.s0 = env_reset(config, seed)

    def sync(self, state: PhysicsState):
        """Recale l'état caché sur celui d'un reset réel."""
        self.state = state

    def predict(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        action = np.clip(a, -1.0, 1.0)
        self.state, obs, _, _ = env_step(
            self.state, action, self.config, self.task
        )
        return obs


def horizon_errors(
    model: SelfModel,
    config: CrawlerConfig,
    max_k: int,
    n_rollouts: int = 100,
    seed: int = 0,
) -> np.ndarray:
    """
    Erreur moyenne de prédiction en boucle ouverte à k pas, k = 1..max_k.

    Les trajectoires de référence sont réelles, sous actions aléatoires
    uniformes ; l'erreur est la norme euclidienne de l'écart d'observation
    normalisé par les écarts-types d'observation du modèle.

    Args:
        model (SelfModel): Le modèle.
        config (CrawlerConfig): La morphologie.
        max_k (int): Horizon maximal.
        n_rollouts (int, optional): Nombre de trajectoires.
        seed (int, optional): Graine.

    Returns:
        np.ndarray: errors[k-1] = erreur moyenne à k pas.
    """
    task = make_task("walk", config)
    rng = np.random.default_rng(seed)
    totals = np.zeros(max_k)
    counts = np.zeros(max_k)
    stats = model.norm_stats
    for _ in range(n_rollouts):
        state, obs = env_reset(config, int(rng.integers(2**63)))
        predicted = obs
        for k in range(max_k):
            action = rng.uniform(-1.0, 1.0, size=config.dof)
            state, obs, _, done = env_step(state, action, config, task)
            predicted = model_predict(model, predicted, action)
            if not np.all(np.isfinite(predicted)):
                break
            gap = (predicted - obs) / stats.obs_std
            totals[k] += float(np.linalg.norm(gap))
            counts[k] += 1
            if done:
                break
    with np.errstate(invalid="ignore", divide="ignore"):
        return totals / counts


def write_dataset(stream: BinaryIO, data: TransitionDataset) -> None:
    """
    Écrit un jeu au format "SMDS".

    Format : magique, version u32, obs_dim u32, act_dim u32, nombre u64,
    puis les lignes [s, a, s'] en float32, puis les trois paires
    (moyenne, écart-type) des observations, actions et variations.
    """
    write_header(stream, DATASET_MAGIC, VERSION)
    write_u32(stream, data.obs_dim, data.act_dim)
    write_u64(stream, len(data))
    write_f32(
        stream, np.hstack([data.states, data.actions, data.next_states])
    )
    for mean, std in data.norm_stats.pairs():
        write_f32(stream, mean)
        write_f32(stream, std)


def _read_stats(stream: BinaryIO, obs_dim: int, act_dim: int) -> NormStats:
    values = []
    for dim in (obs_dim, act_dim, obs_dim):
        values.append(read_f32(stream, dim))
        values.append(read_f32(stream, dim))
    return NormStats(*values)


def read_dataset(stream: BinaryIO) -> TransitionDataset:
    """Lit un jeu au format "SMDS" (voir write_dataset)."""
    version = read_header(stream, DATASET_MAGIC)
    if version != VERSION:
        raise FormatError(f"Version SMDS non supportée : {version}")
    obs_dim, act_dim = read_u32(stream), read_u32(stream)
    count = read_u64(stream)
    width = 2 * obs_dim + act_dim
    rows = read_f32(stream, count * width).reshape(count, width)
    stats = _read_stats(stream, obs_dim, act_dim)
    return TransitionDataset(
        states=rows[:, :obs_dim],
        actions=rows[:, obs_dim:obs_dim + act_dim],
        next_states=rows[:, obs_dim + act_dim:],
        norm_stats=stats,
    )


def write_model(stream: BinaryIO, model: SelfModel) -> None:
    """
    Écrit un modèle au format "SMFM" : magique, version, obs_dim, act_dim,
    statistiques de normalisation, puis le réseau "SDNN".
    """
    write_header(stream, MODEL_MAGIC, VERSION)
    write_u32(stream, model.obs_dim, model.act_dim)
    for mean, std in model.norm_stats.pairs():
        write_f32(stream, mean)
        write_f32(stream, std)
    write_net(stream, model.net)


def read_model(stream: BinaryIO) -> SelfModel:
    """Lit un modèle au format "SMFM" (voir write_model)."""
    version = read_header(stream, MODEL_MAGIC)
    if version != VERSION:
        raise FormatError(f"Version SMFM non supportée : {version}")
    obs_dim, act_dim = read_u32(stream), read_u32(stream)
    stats = _read_stats(stream, obs_dim, act_dim)
    try:
        return SelfModel(read_net(stream), stats)
    except SelfModelError as exc:
        raise FormatError(f"Modèle SMFM invalide : {exc}") from exc
