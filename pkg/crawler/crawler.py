"""Famille de robots "crawler" plans et articulés, à nombre de DoF réglable.

Le monde est le plan x-z, la gravité est dirigée vers -z. Le corps est un
segment rigide (masse ponctuelle en translation plus un état de tangage) ;
chaque patte est une chaîne de segments sans masse attachée au corps à une
hanche, avec un pied au bout. Le contact pied-sol est pénalisé (ressort
amortisseur normal) et le frottement est un Coulomb lissé.

Les angles sont comptés dans le sens trigonométrique du plan x-z (x vers la
droite, z vers le haut) ; un segment d'angle absolu nul pointe vers le bas.

L'intégration est un Euler semi-implicite : articulations d'abord, puis
forces de contact, vitesses du corps, positions du corps.
"""

__copyright__ = "Copyright (C) 2024 Grostim"
__license__ = "GNU GPLv2"

import logging
from dataclasses import dataclass, replace
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from ..myutils import mix_seed

logger = logging.getLogger(__name__)

WALK = "walk"
JUMP = "jump"
TASKS = (WALK, JUMP)

# Indices des canaux de l'observation.
OBS_Z, OBS_VX, OBS_VY, OBS_VZ, OBS_ROLL, OBS_PITCH = range(6)
OBS_HEADER = 6

PRESETS: Dict[str, Tuple[int, int]] = {
    "crawler-2": (2, 1),
    "crawler-4": (2, 2),
    "crawler-6": (2, 3),
    "crawler-8": (4, 2),
    "crawler-12": (4, 3),
    "crawler-16": (4, 4),
}


class CrawlerError(ValueError):
    "Une erreur de l'environnement crawler."


@dataclass(frozen=True)
class CrawlerConfig:
    """
    Paramètres physiques d'un crawler.

    Attributes:
        legs (int): Nombre de pattes L (un pied par patte).
        joints_per_leg (int): Articulations par patte J ; DoF m = L * J.
        link_length (float): Longueur d'un segment de patte (m).
        body_length (float): Longueur du corps (m), sert aux hanches par
            défaut.
        body_mass (float): Masse du corps (kg).
        body_inertia (float): Inertie de tangage du corps (kg.m2).
        joint_inertia (float): Inertie d'une articulation (kg.m2).
        joint_damping (float): Amortissement articulaire (N.m.s).
        pitch_damping (float): Amortissement du tangage (N.m.s).
        torque_limit (float): Couple maximal (N.m), action 1.0 <-> ce couple.
        joint_angle_limits (Tuple[float, float]): Butées articulaires (rad).
        dt (float): Pas de temps (s).
        gravity (float): Gravité (m/s2).
        contact_stiffness (float): Raideur de contact k_p (N/m).
        contact_damping (float): Amortissement de contact k_d (N.s/m).
        friction (float): Coefficient de frottement mu.
        friction_velocity (float): Vitesse de lissage v_s (m/s).
        horizon (int): Longueur d'épisode de la marche.
        jump_horizon (int): Longueur d'épisode du saut.
        z_terminate (Optional[float]): Hauteur terminant le saut ; par défaut
            hauteur debout + jump_clearance.
        jump_clearance (float): Marge au-dessus de la hauteur debout (m).
        fall_height (float): Hauteur du corps en dessous de laquelle
            l'épisode s'arrête (m).
        hip_attachment_offsets (Optional[Tuple[float, ...]]): Position des
            hanches le long de l'axe du corps ; par défaut réparties sur la
            longueur du corps.
        reset_jitter (float): Amplitude du bruit sur les angles initiaux.
    """

    legs: int = 2
    joints_per_leg: int = 1
    link_length: float = 0.15
    body_length: float = 0.4
    body_mass: float = 5.0
    body_inertia: float = 0.1
    joint_inertia: float = 0.02
    joint_damping: float = 0.1
    pitch_damping: float = 0.1
    torque_limit: float = 5.0
    joint_angle_limits: Tuple[float, float] = (-1.2, 1.2)
    dt: float = 0.01
    gravity: float = 9.81
    contact_stiffness: float = 4000.0
    contact_damping: float = 40.0
    friction: float = 0.9
    friction_velocity: float = 0.05
    horizon: int = 500
    jump_horizon: int = 300
    z_terminate: Optional[float] = None
    jump_clearance: float = 0.25
    fall_height: float = 0.05
    hip_attachment_offsets: Optional[Tuple[float, ...]] = None
    reset_jitter: float = 0.05

    def __post_init__(self):
        if self.legs < 1 or self.joints_per_leg < 1:
            raise CrawlerError(
                f"Morphologie invalide : {self.legs} x {self.joints_per_leg}"
            )
        if self.dt <= 0.0:
            raise CrawlerError(f"Pas de temps invalide : {self.dt}")
        if self.torque_limit <= 0.0:
            raise CrawlerError(f"Couple maximal invalide : {self.torque_limit}")
        if self.horizon < 1 or self.jump_horizon < 1:
            raise CrawlerError("L'horizon doit être au moins 1")
        low, high = self.joint_angle_limits
        if not low < high:
            raise CrawlerError(f"Butées invalides : {low}, {high}")
        offsets = self.hip_attachment_offsets
        if offsets is not None and len(offsets) != self.legs:
            raise CrawlerError(
                f"{len(offsets)} hanches pour {self.legs} pattes"
            )

    @property
    def dof(self) -> int:
        return self.legs * self.joints_per_leg

    @property
    def obs_dim(self) -> int:
        return 2 * self.dof + OBS_HEADER

    @property
    def hip_offsets(self) -> np.ndarray:
        if self.hip_attachment_offsets is not None:
            return np.array(self.hip_attachment_offsets, dtype=np.float64)
        half = 0.5 * self.body_length
        if self.legs == 1:
            return np.zeros(1)
        return np.linspace(-half, half, self.legs)

    @property
    def standing_depth(self) -> float:
        """Enfoncement statique des pieds quand toutes les pattes portent."""
        return self.body_mass * self.gravity / (
            self.contact_stiffness * self.legs
        )

    @property
    def standing_height(self) -> float:
        """Hauteur du corps à l'équilibre, pattes verticales."""
        return self.joints_per_leg * self.link_length - self.standing_depth

    @property
    def jump_height(self) -> float:
        if self.z_terminate is not None:
            return self.z_terminate
        return self.standing_height + self.jump_clearance


@dataclass(frozen=True)
class TaskSpec:
    """
    Tâche : canal de récompense et conditions d'arrêt.

    Attributes:
        kind (str): "walk" (récompense vx) ou "jump" (récompense vz).
        horizon (int): Nombre maximal de pas par épisode.
        z_terminate (Optional[float]): Hauteur terminant un saut.
    """

    kind: str
    horizon: int
    z_terminate: Optional[float] = None

    def __post_init__(self):
        if self.kind not in TASKS:
            raise CrawlerError(f"Tâche inconnue : {self.kind}")
        if self.horizon < 1:
            raise CrawlerError("L'horizon doit être au moins 1")
        if self.kind == JUMP and self.z_terminate is None:
            raise CrawlerError("Le saut exige une hauteur z_terminate")

    @property
    def reward_channel(self) -> int:
        return OBS_VX if self.kind == WALK else OBS_VZ


def make_task(kind: str, config: CrawlerConfig) -> TaskSpec:
    """
    Construit la tâche `kind` avec les valeurs par défaut de la config.

    Args:
        kind (str): "walk" ou "jump".
        config (CrawlerConfig): La morphologie.

    Returns:
        TaskSpec: La tâche.
    """
    if kind == WALK:
        return TaskSpec(WALK, config.horizon)
    if kind == JUMP:
        return TaskSpec(JUMP, config.jump_horizon, config.jump_height)
    raise CrawlerError(f"Tâche inconnue : {kind}")


@dataclass(frozen=True, eq=False)
class PhysicsState:
    """
    État interne du simulateur.

    Attributes:
        x, z (float): Position du centre du corps (m).
        vx, vz (float): Vitesse du corps (m/s).
        pitch (float): Tangage (rad).
        pitch_rate (float): Vitesse de tangage (rad/s).
        q (np.ndarray): Angles articulaires, patte par patte (rad).
        w (np.ndarray): Vitesses articulaires (rad/s).
        step_index (int): Nombre de pas depuis le reset.
    """

    x: float
    z: float
    vx: float
    vz: float
    pitch: float
    pitch_rate: float
    q: np.ndarray
    w: np.ndarray
    step_index: int = 0

    def equals(self, other: "PhysicsState") -> bool:
        """Égalité exacte, champ par champ."""
        scalars = ("x", "z", "vx", "vz", "pitch", "pitch_rate", "step_index")
        return all(
            getattr(self, name) == getattr(other, name) for name in scalars
        ) and np.array_equal(self.q, other.q) and np.array_equal(
            self.w, other.w
        )


class FootState(NamedTuple):
    """Positions et vitesses des pieds (un élément par patte)."""

    x: np.ndarray
    z: np.ndarray
    vx: np.ndarray
    vz: np.ndarray


def preset(name: str) -> CrawlerConfig:
    """
    Retourne la configuration d'un préréglage de l'échelle de DoF.

    Args:
        name (str): Un nom parmi crawler-2, -4, -6, -8, -12, -16.

    Returns:
        CrawlerConfig: La configuration (constantes physiques partagées).

    Raises:
        CrawlerError: Si le nom est inconnu.
    """
    try:
        legs, joints = PRESETS[name]
    except KeyError:
        raise CrawlerError(
            f"Préréglage inconnu : {name} (connus : {', '.join(PRESETS)})"
        ) from None
    return CrawlerConfig(legs=legs, joints_per_leg=joints)


def standing_state(config: CrawlerConfig) -> PhysicsState:
    """État d'équilibre debout : pattes verticales, tout au repos."""
    return PhysicsState(
        x=0.0,
        z=config.standing_height,
        vx=0.0,
        vz=0.0,
        pitch=0.0,
        pitch_rate=0.0,
        q=np.zeros(config.dof),
        w=np.zeros(config.dof),
    )


def observe(state: PhysicsState, config: CrawlerConfig) -> np.ndarray:
    """
    Observation capteurs : [z, vx, vy, vz, roulis, tangage, q..., w...].

    Les canaux vy et roulis sont identiquement nuls dans ce monde plan.

    Args:
        state (PhysicsState): L'état.
        config (CrawlerConfig): La morphologie.

    Returns:
        np.ndarray: Vecteur de longueur 2m + 6.
    """
    head = np.array(
        [state.z, state.vx, 0.0, state.vz, 0.0, state.pitch],
        dtype=np.float64,
    )
    return np.concatenate([head, state.q, state.w])


def foot_state(config: CrawlerConfig, state: PhysicsState) -> FootState:
    """
    Cinématique directe des pieds.

    Args:
        config (CrawlerConfig): La morphologie.
        state (PhysicsState): L'état.

    Returns:
        FootState: Positions et vitesses des pieds.
    """
    shape = (config.legs, config.joints_per_leg)
    phi = state.pitch + np.cumsum(state.q.reshape(shape), axis=1)
    phi_rate = state.pitch_rate + np.cumsum(state.w.reshape(shape), axis=1)
    offsets = config.hip_offsets
    cos_p, sin_p = np.cos(state.pitch), np.sin(state.pitch)
    length = config.link_length
    sin_phi, cos_phi = np.sin(phi), np.cos(phi)
    fx = state.x + offsets * cos_p + length * sin_phi.sum(axis=1)
    fz = state.z + offsets * sin_p - length * cos_phi.sum(axis=1)
    vfx = (
        state.vx
        - offsets * sin_p * state.pitch_rate
        + length * (cos_phi * phi_rate).sum(axis=1)
    )
    vfz = (
        state.vz
        + offsets * cos_p * state.pitch_rate
        + length * (sin_phi * phi_rate).sum(axis=1)
    )
    return FootState(fx, fz, vfx, vfz)


def contact_forces(
    config: CrawlerConfig, feet: FootState
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Forces de contact (normale, tangentielle) pour chaque pied.

    Un pied sous le sol (z < 0) subit F_N = max(0, k_p.(-z) - k_d.vz) et
    F_T = -mu.F_N.tanh(vx / v_s) ; les autres pieds ne subissent rien.
    """
    in_contact = feet.z < 0.0
    normal = np.where(
        in_contact,
        np.maximum(
            0.0,
            config.contact_stiffness * (-feet.z)
            - config.contact_damping * feet.vz,
        ),
        0.0,
    )
    tangential = (
        -config.friction * normal * np.tanh(feet.vx / config.friction_velocity)
    )
    return normal, tangential


def task_reward(task: TaskSpec, obs: np.ndarray, dt: float) -> float:
    """Récompense vraie : vitesse du canal de la tâche multipliée par dt."""
    return float(obs[task.reward_channel]) * dt


def observation_done(
    task: TaskSpec, obs: np.ndarray, config: CrawlerConfig
) -> bool:
    """
    Arrêt lisible depuis l'observation : chute, ou hauteur de saut atteinte.
    """
    z = obs[OBS_Z]
    if z < config.fall_height:
        return True
    return task.kind == JUMP and z >= task.z_terminate


def check_action(action, dof: int) -> np.ndarray:
    """
    Vérifie une action normalisée.

    Raises:
        CrawlerError: Mauvaise longueur, valeur non finie ou hors [-1, 1].
    """
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (dof,):
        raise CrawlerError(
            f"Action de forme {action.shape}, {dof} composantes attendues"
        )
    if not np.all(np.isfinite(action)):
        raise CrawlerError("Action non finie")
    if np.any(np.abs(action) > 1.0):
        raise CrawlerError(
            f"Action hors de [-1, 1] : max |a| = {np.max(np.abs(action))}"
        )
    return action


def env_reset(
    config: CrawlerConfig, seed: int
) -> Tuple[PhysicsState, np.ndarray]:
    """
    Remet le robot debout, angles articulaires légèrement bruités.

    Args:
        config (CrawlerConfig): La morphologie.
        seed (int): Graine du bruit initial.

    Returns:
        Tuple[PhysicsState, np.ndarray]: L'état initial et S_0.
    """
    rng = np.random.default_rng(seed)
    low, high = config.joint_angle_limits
    jitter = config.reset_jitter
    q = np.clip(rng.uniform(-jitter, jitter, size=config.dof), low, high)
    state = replace(standing_state(config), q=q)
    return state, observe(state, config)


def env_step(
    state: PhysicsState, action, config: CrawlerConfig, task: TaskSpec
) -> Tuple[PhysicsState, np.ndarray, float, bool]:
    """
    Avance la physique d'un pas dt, l'action étant tenue pendant le pas.

    Args:
        state (PhysicsState): L'état courant.
        action: Action normalisée dans [-1, 1]^m.
        config (CrawlerConfig): La morphologie.
        task (TaskSpec): La tâche (récompense et arrêt).

    Returns:
        Tuple: (état suivant, observation, récompense, terminé).

    Raises:
        CrawlerError: Action invalide (aucun écrêtage silencieux).
    """
    action = check_action(action, config.dof)
    dt = config.dt
    low, high = config.joint_angle_limits

    torque = config.torque_limit * action
    w = state.w + dt * (torque - config.joint_damping * state.w) / (
        config.joint_inertia
    )
    q = state.q + dt * w
    clamped = (q < low) | (q > high)
    q = np.clip(q, low, high)
    w = np.where(clamped, 0.0, w)

    feet = foot_state(config, replace(state, q=q, w=w))
    normal, tangential = contact_forces(config, feet)
    arm_x = feet.x - state.x
    arm_z = feet.z - state.z
    contact_torque = float(np.sum(arm_x * normal - arm_z * tangential))

    ax = float(np.sum(tangential)) / config.body_mass
    az = float(np.sum(normal)) / config.body_mass - config.gravity
    alpha = (
        contact_torque - config.pitch_damping * state.pitch_rate
    ) / config.body_inertia

    vx = state.vx + dt * ax
    vz = state.vz + dt * az
    pitch_rate = state.pitch_rate + dt * alpha
    next_state = PhysicsState(
        x=state.x + dt * vx,
        z=state.z + dt * vz,
        vx=vx,
        vz=vz,
        pitch=state.pitch + dt * pitch_rate,
        pitch_rate=pitch_rate,
        q=q,
        w=w,
        step_index=state.step_index + 1,
    )
    obs = observe(next_state, config)
    reward = task_reward(task, obs, dt)
    done = next_state.step_index >= task.horizon or observation_done(
        task, obs, config
    )
    return next_state, obs, reward, bool(done)


def body_energy(config: CrawlerConfig, state: PhysicsState) -> float:
    """Énergie mécanique du corps (cinétique + potentielle)."""
    kinetic = 0.5 * config.body_mass * (state.vx**2 + state.vz**2)
    rotational = 0.5 * config.body_inertia * state.pitch_rate**2
    return kinetic + rotational + config.body_mass * config.gravity * state.z


class StepResult(NamedTuple):
    """Résultat d'un pas d'un environnement."""

    obs: np.ndarray
    reward: float
    done: bool
    truncated: bool = False


class CrawlerEnv:
    """
    Environnement réel à épisodes, instrumenté.

    Chaque reset tire sa graine de (seed, numéro d'épisode) ; les compteurs
    `step_count` et `reset_count` permettent de vérifier les budgets de
    données réelles.
    """

    def __init__(
        self,
        config: CrawlerConfig,
        task: TaskSpec,
        seed: int,
        debug: bool = False,
    ):
        """
        Initialise l'environnement.

        Args:
            config (CrawlerConfig): La morphologie.
            task (TaskSpec): La tâche.
            seed (int): Graine des resets successifs.
            debug (bool, optional): Active les messages de débogage.
        """
        self.config = config
        self.task = task
        self.seed = seed
        self.debug = debug
        self.logger = logging.getLogger(__name__)
        self.state: Optional[PhysicsState] = None
        self.step_count = 0
        self.reset_count = 0

    def _debug(self, message: str):
        if self.debug:
            self.logger.debug(message)

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    @property
    def act_dim(self) -> int:
        return self.config.dof

    def reset(self) -> np.ndarray:
        """Démarre un nouvel épisode et retourne S_0."""
        episode_seed = mix_seed(self.seed, self.reset_count)
        self.state, obs = env_reset(self.config, episode_seed)
        self.reset_count += 1
        self._debug(f"Reset n°{self.reset_count}")
        return obs

    def step(self, action) -> StepResult:
        """Avance d'un pas réel."""
        if self.state is None:
            raise CrawlerError("step() appelé avant reset()")
        self.state, obs, reward, done = env_step(
            self.state, action, self.config, self.task
        )
        self.step_count += 1
        return StepResult(obs, reward, done)
