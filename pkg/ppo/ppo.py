"""Agent PPO (surrogat écrêté + GAE) entraînable sur tout environnement.

L'agent est une politique gaussienne (moyenne donnée par un réseau 2x64 tanh,
log-écarts-types appris indépendants de l'état) et un réseau de valeur
séparé. La boucle `train` ne connaît de l'environnement que reset/step : elle
sert aussi bien au crawler réel qu'au self-model.
"""

__copyright__ = "Copyright (C) 2024 Grostim"
__license__ = "GNU GPLv2"

import logging
import math
from dataclasses import dataclass, field
from typing import (
    BinaryIO,
    Callable,
    List,
    NamedTuple,
    Optional,
    Protocol,
    Sequence,
)

import numpy as np

from ..crawler.crawler import (
    CrawlerConfig,
    StepResult,
    TaskSpec,
    env_reset,
    env_step,
)
from ..myutils import (
    FormatError,
    mix_seed,
    read_f32,
    read_header,
    read_u32,
    write_f32,
    write_header,
    write_u32,
)
from ..nncore.nncore import (
    AdamState,
    DenseNet,
    GradientSet,
    adam_step,
    net_backward,
    net_forward,
    net_output,
    read_net,
    write_net,
)

logger = logging.getLogger(__name__)

MAGIC = b"SMPG"
VERSION = 1

HIDDEN_SIZES = (64, 64)
LOG_STD_INIT = math.log(0.5)
LOG_STD_FLOOR = math.log(1e-3)
ADVANTAGE_STD_FLOOR = 1e-8
LOG_2PI = math.log(2.0 * math.pi)


class PpoError(ValueError):
    "Une erreur de l'agent PPO."


class Environment(Protocol):
    """Interface attendue par `train` (CrawlerEnv, SelfModelEnv)."""

    def reset(self) -> np.ndarray:
        ...

    def step(self, action) -> StepResult:
        ...


@dataclass(frozen=True)
class PpoConfig:
    """
    Hyperparamètres de PPO.

    Attributes:
        gamma (float): Facteur d'actualisation, dans ]0, 1].
        gae_lambda (float): Paramètre lambda de la GAE, dans [0, 1].
        clip_eps (float): Demi-largeur de l'écrêtage du ratio.
        epochs_per_update (int): Passes sur le lot par mise à jour.
        minibatch_size (int): Taille des mini-lots.
        lr_policy (float): Pas d'Adam de la politique (et des log std).
        lr_value (float): Pas d'Adam du réseau de valeur.
        entropy_coef (float): Poids du bonus d'entropie.
        rollout_batch (int): Pas collectés par mise à jour.
        total_step_budget (int): Nombre total de pas d'environnement.
        max_grad_norm (float): Norme maximale des gradients (0 : pas
            d'écrêtage).
    """

    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs_per_update: int = 10
    minibatch_size: int = 64
    lr_policy: float = 3e-4
    lr_value: float = 3e-4
    entropy_coef: float = 0.0
    rollout_batch: int = 2048
    total_step_budget: int = 0
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise PpoError(f"gamma hors de ]0, 1] : {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise PpoError(f"lambda hors de [0, 1] : {self.gae_lambda}")
        if self.clip_eps <= 0.0:
            raise PpoError(f"clip_eps doit être positif : {self.clip_eps}")
        if self.epochs_per_update < 1 or self.minibatch_size < 1:
            raise PpoError("Époques et mini-lots doivent être positifs")
        if self.rollout_batch < 1:
            raise PpoError("rollout_batch doit être positif")
        if self.total_step_budget < 0:
            raise PpoError("Budget de pas négatif")


@dataclass(eq=False)
class PolicyValuePair:
    """
    Politique gaussienne et réseau de valeur, avec leurs optimiseurs.

    Attributes:
        policy_net (DenseNet): Observation -> moyenne de l'action.
        log_std (np.ndarray): Log-écarts-types (plancher ln 1e-3).
        value_net (DenseNet): Observation -> valeur.
        policy_optimizer (Optional[AdamState]): Adam sur les paramètres de
            la politique suivis de log_std.
        value_optimizer (Optional[AdamState]): Adam du réseau de valeur.
    """

    policy_net: DenseNet
    log_std: np.ndarray
    value_net: DenseNet
    policy_optimizer: Optional[AdamState] = field(default=None, repr=False)
    value_optimizer: Optional[AdamState] = field(default=None, repr=False)

    def __post_init__(self):
        self.log_std = np.maximum(
            np.asarray(self.log_std, dtype=np.float64), LOG_STD_FLOOR
        )
        if self.log_std.shape != (self.policy_net.output_size,):
            raise PpoError(
                f"log_std de forme {self.log_std.shape}, "
                f"{self.policy_net.output_size} attendus"
            )
        if not np.all(np.isfinite(self.log_std)):
            raise PpoError("log_std non fini")
        if (
            self.value_net.output_size != 1
            or self.value_net.input_size != self.policy_net.input_size
        ):
            raise PpoError("Réseau de valeur incompatible avec la politique")

    @classmethod
    def create(
        cls,
        obs_dim: int,
        act_dim: int,
        rng: np.random.Generator,
        hidden_sizes: Sequence[int] = HIDDEN_SIZES,
        log_std_init: float = LOG_STD_INIT,
    ) -> "PolicyValuePair":
        """Agent initialisé (Glorot, log std à ln 0.5)."""
        hidden = tuple(hidden_sizes)
        policy = DenseNet.create((obs_dim,) + hidden + (act_dim,), "tanh", rng)
        value = DenseNet.create((obs_dim,) + hidden + (1,), "tanh", rng)
        return cls(policy, np.full(act_dim, log_std_init), value)

    @property
    def obs_dim(self) -> int:
        return self.policy_net.input_size

    @property
    def act_dim(self) -> int:
        return self.policy_net.output_size

    def copy(self) -> "PolicyValuePair":
        """Copie sans état d'optimiseur."""
        return PolicyValuePair(
            self.policy_net.with_parameters(self.policy_net.parameters()),
            self.log_std.copy(),
            self.value_net.with_parameters(self.value_net.parameters()),
        )

    def value(self, obs) -> np.ndarray:
        out = net_output(self.value_net, obs)
        return out[..., 0]

    def mean_action(self, obs) -> np.ndarray:
        return net_output(self.policy_net, obs)

    def deterministic_policy(self) -> Callable[[np.ndarray], np.ndarray]:
        """Observation -> action moyenne écrêtée dans [-1, 1]."""
        return lambda obs: np.clip(self.mean_action(obs), -1.0, 1.0)


class ActionSample(NamedTuple):
    """
    Action tirée par la politique.

    Attributes:
        action (np.ndarray): Action écrêtée dans [-1, 1]^m.
        log_prob (float): Log-densité gaussienne de l'échantillon brut.
        raw (np.ndarray): Échantillon avant écrêtage.
    """

    action: np.ndarray
    log_prob: float
    raw: np.ndarray


def gaussian_log_prob(u, mean, log_std) -> np.ndarray:
    """Log-densité d'une gaussienne diagonale (dernière dimension sommée)."""
    z = (u - mean) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - (
        0.5 * len(log_std) * LOG_2PI
    )


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std) + 0.5 * len(log_std) * (1.0 + LOG_2PI))


def _check_obs(agent: PolicyValuePair, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (agent.obs_dim,):
        raise PpoError(
            f"Observation de forme {obs.shape}, {agent.obs_dim} attendus"
        )
    if not np.all(np.isfinite(obs)):
        raise PpoError("Observation non finie")
    return obs


def sample_action(
    agent: PolicyValuePair,
    obs,
    rng: np.random.Generator,
    deterministic: bool = False,
) -> ActionSample:
    """
    Tire u ~ N(moyenne(obs), exp(log_std)), puis écrête dans [-1, 1].

    La log-probabilité est celle de u avant écrêtage.

    Args:
        agent (PolicyValuePair): L'agent.
        obs: L'observation.
        rng (np.random.Generator): Le générateur.
        deterministic (bool, optional): Retourne la moyenne sans tirage.

    Returns:
        ActionSample: L'action, sa log-probabilité et l'échantillon brut.

    Raises:
        PpoError: Observation de mauvaise taille ou non finie.
    """
    obs = _check_obs(agent, obs)
    mean = agent.mean_action(obs)
    if deterministic:
        raw = mean
    else:
        raw = mean + np.exp(agent.log_std) * rng.standard_normal(len(mean))
    log_prob = float(gaussian_log_prob(raw, mean, agent.log_std))
    return ActionSample(np.clip(raw, -1.0, 1.0), log_prob, raw)


class RolloutBuffer:
    """
    Tampon on-policy : un pas par entrée, avantages calculés par GAE.

    Les actions stockées sont les échantillons bruts (avant écrêtage) ; ce
    sont eux dont les log-probabilités sont comparées lors de la mise à jour.
    """

    def __init__(self):
        self._obs: List[np.ndarray] = []
        self._actions: List[np.ndarray] = []
        self._log_probs: List[float] = []
        self._rewards: List[float] = []
        self._values: List[float] = []
        self._dones: List[bool] = []
        self._truncated: List[bool] = []
        self.advantages: Optional[np.ndarray] = None
        self.returns: Optional[np.ndarray] = None

    def add(
        self,
        obs,
        action,
        log_prob: float,
        reward: float,
        value: float,
        done: bool,
        truncated: bool = False,
    ):
        self._obs.append(np.asarray(obs, dtype=np.float64))
        self._actions.append(np.asarray(action, dtype=np.float64))
        self._log_probs.append(float(log_prob))
        self._rewards.append(float(reward))
        self._values.append(float(value))
        self._dones.append(bool(done))
        self._truncated.append(bool(truncated))
        self.advantages = self.returns = None

    def __len__(self) -> int:
        return len(self._rewards)

    @property
    def observations(self) -> np.ndarray:
        return np.array(self._obs)

    @property
    def actions(self) -> np.ndarray:
        return np.array(self._actions)

    @property
    def log_probs(self) -> np.ndarray:
        return np.array(self._log_probs)

    @property
    def rewards(self) -> np.ndarray:
        return np.array(self._rewards)

    @property
    def values(self) -> np.ndarray:
        return np.array(self._values)

    @property
    def dones(self) -> np.ndarray:
        return np.array(self._dones, dtype=bool)

    @property
    def truncated(self) -> np.ndarray:
        return np.array(self._truncated, dtype=bool)


def compute_gae(
    buffer: RolloutBuffer, last_value: float, config: PpoConfig
) -> RolloutBuffer:
    """
    Calcule avantages et cibles de retour par GAE.

    delta_t = r_t + gamma V(s_{t+1}) (1 - done_t) - V(s_t) et
    A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}. Un pas tronqué (modèle
    divergent) termine l'épisode sans amorçage ; le dernier pas du tampon,
    s'il ne termine pas d'épisode, est amorcé par `last_value`.

    Args:
        buffer (RolloutBuffer): Le tampon rempli.
        last_value (float): V de l'observation suivant le dernier pas.
        config (PpoConfig): gamma et lambda.

    Returns:
        RolloutBuffer: Le même tampon, avantages et retours renseignés.
    """
    rewards, values = buffer.rewards, buffer.values
    ends = buffer.dones | buffer.truncated
    next_values = np.append(values[1:], float(last_value))
    advantages = np.zeros(len(buffer))
    running = 0.0
    for t in reversed(range(len(buffer))):
        mask = 0.0 if ends[t] else 1.0
        delta = rewards[t] + config.gamma * next_values[t] * mask - values[t]
        running = delta + config.gamma * config.gae_lambda * mask * running
        advantages[t] = running
    buffer.advantages = advantages
    buffer.returns = advantages + values
    return buffer


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    """Centre et réduit les avantages d'un lot."""
    std = max(float(np.std(advantages)), ADVANTAGE_STD_FLOOR)
    return (advantages - np.mean(advantages)) / std


class SurrogateGradients(NamedTuple):
    """Gradients (de la perte à minimiser) et statistiques d'un mini-lot."""

    policy: GradientSet
    log_std: np.ndarray
    loss: float
    entropy: float
    clipped: np.ndarray


def surrogate_gradients(
    agent: PolicyValuePair,
    obs: np.ndarray,
    raw_actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    config: PpoConfig,
    clip: bool = True,
) -> SurrogateGradients:
    """
    Perte -mean(min(rho A, clip(rho) A)) - c H et ses gradients.

    Args:
        agent (PolicyValuePair): L'agent courant.
        obs (np.ndarray): Observations du mini-lot (lignes).
        raw_actions (np.ndarray): Échantillons bruts du mini-lot.
        old_log_probs (np.ndarray): Log-probabilités à la collecte.
        advantages (np.ndarray): Avantages (déjà normalisés).
        config (PpoConfig): clip_eps et entropy_coef.
        clip (bool, optional): Faux pour le gradient de politique simple
            (ratio non écrêté).

    Returns:
        SurrogateGradients: Gradients, perte, entropie, échantillons
        écrêtés.
    """
    batch = len(advantages)
    mean, cache = net_forward(agent.policy_net, obs)
    variance = np.exp(2.0 * agent.log_std)
    diff = raw_actions - mean
    log_probs = gaussian_log_prob(raw_actions, mean, agent.log_std)
    ratio = np.exp(log_probs - old_log_probs)
    unclipped = ratio * advantages
    if clip:
        bounded = np.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps)
        objective = np.minimum(unclipped, bounded * advantages)
        active = unclipped <= bounded * advantages
    else:
        objective = unclipped
        active = np.ones(batch, dtype=bool)
    entropy = gaussian_entropy(agent.log_std)
    loss = -float(np.mean(objective)) - config.entropy_coef * entropy
    # d(perte)/d(log pi) par échantillon.
    coefficient = np.where(active, -ratio * advantages / batch, 0.0)
    mean_grad = coefficient[:, None] * diff / variance
    log_std_grad = (
        coefficient[:, None] * (diff * diff / variance - 1.0)
    ).sum(axis=0) - config.entropy_coef
    return SurrogateGradients(
        policy=net_backward(agent.policy_net, cache, mean_grad),
        log_std=log_std_grad,
        loss=loss,
        entropy=entropy,
        clipped=np.abs(ratio - 1.0) > config.clip_eps,
    )


def _clip_norm(arrays: List[np.ndarray], max_norm: float) -> List[np.ndarray]:
    norm = math.sqrt(sum(float(np.sum(a * a)) for a in arrays))
    if max_norm <= 0.0 or norm <= max_norm:
        return arrays
    return [a * (max_norm / norm) for a in arrays]


class PpoStats(NamedTuple):
    """Statistiques d'une mise à jour PPO (moyennes sur les mini-lots)."""

    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float


def ppo_update(
    agent: PolicyValuePair,
    buffer: RolloutBuffer,
    config: PpoConfig,
    rng: np.random.Generator,
) -> PpoStats:
    """
    Met à jour l'agent sur un tampon complet (avantages calculés).

    Les avantages sont normalisés une fois par mise à jour ; l'agent est
    modifié en place.

    Args:
        agent (PolicyValuePair): L'agent.
        buffer (RolloutBuffer): Le tampon, après compute_gae.
        config (PpoConfig): Les hyperparamètres.
        rng (np.random.Generator): Mélange des mini-lots.

    Returns:
        PpoStats: Pertes, entropie et fraction écrêtée.

    Raises:
        PpoError: Tampon incomplet ou perte non finie (mise à jour
            interrompue).
    """
    if buffer.advantages is None or len(buffer) == 0:
        raise PpoError("Tampon vide ou avantages non calculés")
    obs, raw = buffer.observations, buffer.actions
    old_log_probs, returns = buffer.log_probs, buffer.returns
    advantages = normalize_advantages(buffer.advantages)
    if agent.policy_optimizer is None:
        agent.policy_optimizer = AdamState.for_arrays(
            agent.policy_net.parameters() + [agent.log_std], config.lr_policy
        )
    if agent.value_optimizer is None:
        agent.value_optimizer = AdamState.for_net(
            agent.value_net, config.lr_value
        )
    policy_losses, value_losses, entropies = [], [], []
    n_clipped = n_seen = 0
    for epoch in range(config.epochs_per_update):
        order = rng.permutation(len(buffer))
        for start in range(0, len(order), config.minibatch_size):
            batch = order[start:start + config.minibatch_size]
            grads = surrogate_gradients(
                agent,
                obs[batch],
                raw[batch],
                old_log_probs[batch],
                advantages[batch],
                config,
            )
            values, value_cache = net_forward(agent.value_net, obs[batch])
            residual = values[:, 0] - returns[batch]
            value_loss = float(np.mean(residual * residual))
            if not (np.isfinite(grads.loss) and np.isfinite(value_loss)):
                raise PpoError(
                    f"Perte non finie à l'époque {epoch + 1}, mise à jour "
                    "interrompue"
                )
            value_grads = net_backward(
                agent.value_net,
                value_cache,
                (2.0 * residual / len(batch))[:, None],
            )

            policy_arrays = _clip_norm(
                grads.policy.arrays() + [grads.log_std], config.max_grad_norm
            )
            params, agent.policy_optimizer = adam_step(
                agent.policy_net.parameters() + [agent.log_std],
                policy_arrays,
                agent.policy_optimizer,
            )
            agent.policy_net = agent.policy_net.with_parameters(params[:-1])
            agent.log_std = np.maximum(params[-1], LOG_STD_FLOOR)

            value_arrays = _clip_norm(
                value_grads.arrays(), config.max_grad_norm
            )
            params, agent.value_optimizer = adam_step(
                agent.value_net.parameters(),
                value_arrays,
                agent.value_optimizer,
            )
            agent.value_net = agent.value_net.with_parameters(params)

            policy_losses.append(grads.loss)
            value_losses.append(value_loss)
            entropies.append(grads.entropy)
            n_clipped += int(np.sum(grads.clipped))
            n_seen += len(batch)
    return PpoStats(
        policy_loss=float(np.mean(policy_losses)),
        value_loss=float(np.mean(value_losses)),
        entropy=float(np.mean(entropies)),
        clip_fraction=n_clipped / n_seen,
    )


class CurvePoint(NamedTuple):
    """Point de la courbe d'apprentissage."""

    steps: int
    mean_return: float


class TrainResult(NamedTuple):
    agent: PolicyValuePair
    curve: List[CurvePoint]


def train(
    agent: PolicyValuePair,
    env: Environment,
    config: PpoConfig,
    seed: int,
    task: Optional[TaskSpec] = None,
) -> TrainResult:
    """
    Alterne collecte de `rollout_batch` pas et mise à jour PPO.

    Le budget `total_step_budget` est consommé exactement (le dernier lot est
    raccourci si besoin). La courbe enregistre, après chaque lot où au moins
    un épisode s'est terminé, la moyenne des retours de ces épisodes.

    Args:
        agent (PolicyValuePair): L'agent, modifié en place.
        env (Environment): Environnement réel ou synthétique.
        config (PpoConfig): Les hyperparamètres.
        seed (int): Graine des tirages d'actions et des mélanges.
        task (Optional[TaskSpec]): La tâche de l'environnement, pour les
            messages uniquement.

    Returns:
        TrainResult: L'agent et sa courbe d'apprentissage.
    """
    rng = np.random.default_rng(seed)
    budget = config.total_step_budget
    curve: List[CurvePoint] = []
    if budget == 0:
        return TrainResult(agent, curve)
    label = task.kind if task is not None else "?"
    steps = 0
    obs = env.reset()
    episode_return = 0.0
    while steps < budget:
        buffer = RolloutBuffer()
        finished: List[float] = []
        for _ in range(min(config.rollout_batch, budget - steps)):
            sample = sample_action(agent, obs, rng)
            value = float(agent.value(obs))
            result = env.step(sample.action)
            buffer.add(
                obs,
                sample.raw,
                sample.log_prob,
                result.reward,
                value,
                result.done,
                result.truncated,
            )
            steps += 1
            episode_return += result.reward
            if result.done:
                finished.append(episode_return)
                episode_return = 0.0
                obs = env.reset() if steps < budget else None
            else:
                obs = result.obs
        last_value = 0.0 if obs is None or buffer.dones[-1] else float(
            agent.value(obs)
        )
        compute_gae(buffer, last_value, config)
        stats = ppo_update(agent, buffer, config, rng)
        if finished:
            curve.append(CurvePoint(steps, float(np.mean(finished))))
        logger.debug(
            "PPO %s : %d/%d pas, %d épisodes, perte %.4f, valeur %.4f, "
            "écrêtage %.3f",
            label,
            steps,
            budget,
            len(finished),
            stats.policy_loss,
            stats.value_loss,
            stats.clip_fraction,
        )
    logger.info("Entraînement PPO terminé : %d pas", steps)
    return TrainResult(agent, curve)


class EvalResult(NamedTuple):
    """Retour moyen et retours par épisode d'une évaluation."""

    mean_return: float
    returns: List[float]


def episode_seed(seed: int, episode: int) -> int:
    return mix_seed(seed, episode)


def run_episode(
    policy: Optional[Callable[[np.ndarray], np.ndarray]],
    config: CrawlerConfig,
    task: TaskSpec,
    seed: int,
) -> List[StepResult]:
    """Un épisode réel complet ; sans politique, l'action est nulle."""
    state, obs = env_reset(config, seed)
    results = []
    done = False
    while not done:
        action = np.zeros(config.dof) if policy is None else policy(obs)
        state, obs, reward, done = env_step(state, action, config, task)
        results.append(StepResult(obs, reward, done))
    return results


def evaluate_policy(
    agent: PolicyValuePair,
    config: CrawlerConfig,
    task: TaskSpec,
    n_episodes: int = 10,
    seed: int = 0,
) -> EvalResult:
    """
    Évalue la politique déterministe (action moyenne) sur l'environnement
    réel.

    Args:
        agent (PolicyValuePair): L'agent.
        config (CrawlerConfig): La morphologie.
        task (TaskSpec): La tâche.
        n_episodes (int, optional): Nombre d'épisodes.
        seed (int, optional): Graine des resets.

    Returns:
        EvalResult: Moyenne et liste des retours.
    """
    if n_episodes < 1:
        raise PpoError(f"Nombre d'épisodes invalide : {n_episodes}")
    policy = agent.deterministic_policy()
    returns = [
        sum(r.reward for r in run_episode(
            policy, config, task, episode_seed(seed, i)
        ))
        for i in range(n_episodes)
    ]
    return EvalResult(float(np.mean(returns)), returns)


def evaluate_random(
    config: CrawlerConfig,
    task: TaskSpec,
    n_episodes: int = 10,
    seed: int = 0,
) -> EvalResult:
    """Même protocole qu'evaluate_policy, actions uniformes dans [-1, 1]."""
    if n_episodes < 1:
        raise PpoError(f"Nombre d'épisodes invalide : {n_episodes}")
    rng = np.random.default_rng(seed)

    def policy(obs):
        return rng.uniform(-1.0, 1.0, size=config.dof)

    returns = [
        sum(r.reward for r in run_episode(
            policy, config, task, episode_seed(seed, i)
        ))
        for i in range(n_episodes)
    ]
    return EvalResult(float(np.mean(returns)), returns)


class Trace(NamedTuple):
    """
    Trace d'un épisode réel.

    Attributes:
        x (np.ndarray): Position horizontale du corps à chaque pas.
        z (np.ndarray): Hauteur du corps à chaque pas.
        total_return (float): Retour de l'épisode.
    """

    x: np.ndarray
    z: np.ndarray
    total_return: float


def record_trace(
    agent: Optional[PolicyValuePair],
    config: CrawlerConfig,
    task: TaskSpec,
    seed: int = 0,
) -> Trace:
    """
    Enregistre la trajectoire du corps sur un épisode réel déterministe.

    Args:
        agent (Optional[PolicyValuePair]): L'agent, ou None pour l'action
            nulle.
        config (CrawlerConfig): La morphologie.
        task (TaskSpec): La tâche.
        seed (int, optional): Graine du reset.

    Returns:
        Trace: Positions x et z du corps, état initial compris.
    """
    policy = None if agent is None else agent.deterministic_policy()
    state, obs = env_reset(config, episode_seed(seed, 0))
    xs, zs = [state.x], [state.z]
    total = 0.0
    done = False
    while not done:
        action = np.zeros(config.dof) if policy is None else policy(obs)
        state, obs, reward, done = env_step(state, action, config, task)
        xs.append(state.x)
        zs.append(state.z)
        total += reward
    return Trace(np.array(xs), np.array(zs), total)


def write_agent(stream: BinaryIO, agent: PolicyValuePair) -> None:
    """
    Écrit un agent au format "SMPG" : magique, version, réseau de politique
    puis réseau de valeur ("SDNN"), puis la taille et les valeurs de log_std.
    """
    write_header(stream, MAGIC, VERSION)
    write_net(stream, agent.policy_net)
    write_net(stream, agent.value_net)
    write_u32(stream, len(agent.log_std))
    write_f32(stream, agent.log_std)


def read_agent(stream: BinaryIO) -> PolicyValuePair:
    """Lit un agent au format "SMPG" (voir write_agent)."""
    version = read_header(stream, MAGIC)
    if version != VERSION:
        raise FormatError(f"Version SMPG non supportée : {version}")
    policy_net = read_net(stream)
    value_net = read_net(stream)
    log_std = read_f32(stream, read_u32(stream))
    try:
        return PolicyValuePair(policy_net, log_std, value_net)
    except PpoError as exc:
        raise FormatError(f"Agent SMPG invalide : {exc}") from exc
