"""Réseau dense minimal avec gradients en mode inverse et optimiseur Adam.

Ce module est le noyau numérique partagé par le self-model et l'agent PPO.
Il ne construit pas de graphe : un réseau est une suite de couches denses
(matrice de poids, biais, activation) et la passe arrière est écrite à la main
à partir du cache de la passe avant.

Les entrées peuvent être un vecteur (un échantillon) ou une matrice dont
chaque ligne est un échantillon ; dans ce dernier cas les gradients sont
la somme des gradients par échantillon.

Tous les calculs se font en float64 ; les fichiers stockent du float32.
"""

__copyright__ = "Copyright (C) 2024 Grostim"
__license__ = "GNU GPLv2"

import logging
from dataclasses import dataclass
from typing import BinaryIO, Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..myutils import (
    FormatError,
    read_f32,
    read_header,
    read_u8,
    read_u32,
    write_f32,
    write_header,
    write_u8,
    write_u32,
)

logger = logging.getLogger(__name__)

MAGIC = b"SDNN"
VERSION = 1

ACTIVATIONS = ("identity", "tanh", "relu")
ACTIVATION_CODES = {name: code for code, name in enumerate(ACTIVATIONS)}

FD_STEP = 1e-5


class NetError(ValueError):
    "Une erreur du noyau de réseau dense."


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_slope(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


@dataclass(frozen=True, eq=False)
class DenseNet:
    """
    Réseau dense feed-forward.

    Attributes:
        layer_sizes (Tuple[int, ...]): Tailles (entrée, cachées..., sortie).
        weights (Tuple[np.ndarray, ...]): Matrice (sortie x entrée) par couche.
        biases (Tuple[np.ndarray, ...]): Vecteur de biais par couche.
        activations (Tuple[str, ...]): Activation par couche, la dernière
            étant "identity".
    """

    layer_sizes: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activations: Tuple[str, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        weights = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        biases = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
        activations = tuple(self.activations)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "activations", activations)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise NetError(f"Tailles de couches invalides : {sizes}")
        n_layers = len(sizes) - 1
        if not (
            len(self.weights) == len(self.biases) == len(self.activations)
            == n_layers
        ):
            raise NetError("Nombre de couches incohérent")
        for k in range(n_layers):
            if self.weights[k].shape != (sizes[k + 1], sizes[k]):
                raise NetError(
                    f"Couche {k} : poids de forme {self.weights[k].shape}, "
                    f"attendu {(sizes[k + 1], sizes[k])}"
                )
            if self.biases[k].shape != (sizes[k + 1],):
                raise NetError(f"Couche {k} : biais de forme invalide")
            if self.activations[k] not in ACTIVATION_CODES:
                raise NetError(
                    f"Activation inconnue : {self.activations[k]}"
                )
        if self.activations[-1] != "identity":
            raise NetError("La couche de sortie doit être linéaire")
        if not all(np.all(np.isfinite(p)) for p in self.parameters()):
            raise NetError("Paramètre non fini dans le réseau")

    @classmethod
    def create(
        cls,
        layer_sizes: Sequence[int],
        hidden_activation: str,
        rng: np.random.Generator,
    ) -> "DenseNet":
        """
        Crée un réseau initialisé (Glorot uniforme, biais nuls).

        Args:
            layer_sizes (Sequence[int]): Tailles des couches.
            hidden_activation (str): Activation des couches cachées.
            rng (np.random.Generator): Générateur aléatoire.

        Returns:
            DenseNet: Le réseau initialisé.
        """
        sizes = tuple(int(s) for s in layer_sizes)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        activations = (hidden_activation,) * (len(sizes) - 2) + ("identity",)
        return cls(sizes, tuple(weights), tuple(biases), activations)

    @classmethod
    def zeros(
        cls, layer_sizes: Sequence[int], hidden_activation: str = "tanh"
    ) -> "DenseNet":
        """Réseau dont tous les paramètres sont nuls."""
        sizes = tuple(int(s) for s in layer_sizes)
        weights = tuple(
            np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])
        )
        biases = tuple(np.zeros(o) for o in sizes[1:])
        activations = (hidden_activation,) * (len(sizes) - 2) + ("identity",)
        return cls(sizes, weights, biases, activations)

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> List[np.ndarray]:
        """Paramètres dans l'ordre : tous les poids puis tous les biais."""
        return list(self.weights) + list(self.biases)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def with_parameters(self, params: Sequence[np.ndarray]) -> "DenseNet":
        """Copie du réseau portant d'autres paramètres (même ordre)."""
        n = self.n_layers
        return DenseNet(
            self.layer_sizes,
            tuple(np.array(p, dtype=np.float64) for p in params[:n]),
            tuple(np.array(p, dtype=np.float64) for p in params[n:]),
            self.activations,
        )


@dataclass(frozen=True, eq=False)
class GradientSet:
    """Gradients congruents aux paramètres d'un DenseNet."""

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def arrays(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(
            tuple(w * factor for w in self.weights),
            tuple(b * factor for b in self.biases),
        )

    def global_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for g in self.arrays())))


@dataclass(frozen=True, eq=False)
class ForwardCache:
    """Activations mémorisées par net_forward pour la passe arrière."""

    inputs: Tuple[np.ndarray, ...]
    preactivations: Tuple[np.ndarray, ...]
    outputs: Tuple[np.ndarray, ...]
    batched: bool


@dataclass(eq=False)
class AdamState:
    """
    État de l'optimiseur Adam.

    Attributes:
        first_moments (List[np.ndarray]): Moyennes mobiles des gradients.
        second_moments (List[np.ndarray]): Moyennes mobiles des carrés.
        step_count (int): Nombre de mises à jour effectuées.
        lr (float): Pas d'apprentissage.
        beta1 (float): Décroissance du premier moment.
        beta2 (float): Décroissance du second moment.
        epsilon (float): Terme de stabilité numérique.
    """

    first_moments: List[np.ndarray]
    second_moments: List[np.ndarray]
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_arrays(
        cls, arrays: Sequence[np.ndarray], lr: float, **kwargs
    ) -> "AdamState":
        return cls(
            first_moments=[np.zeros_like(a, dtype=np.float64) for a in arrays],
            second_moments=[
                np.zeros_like(a, dtype=np.float64) for a in arrays
            ],
            lr=lr,
            **kwargs,
        )

    @classmethod
    def for_net(cls, net: DenseNet, lr: float, **kwargs) -> "AdamState":
        return cls.for_arrays(net.parameters(), lr, **kwargs)


def _as_input(net: DenseNet, x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_size:
        raise NetError(
            f"Entrée de forme {x.shape}, taille {net.input_size} attendue"
        )
    if not np.all(np.isfinite(x)):
        raise NetError("Entrée non finie")
    return x, x.ndim == 2


def net_forward(net: DenseNet, x) -> Tuple[np.ndarray, ForwardCache]:
    """
    Passe avant.

    Args:
        net (DenseNet): Le réseau.
        x: Vecteur d'entrée, ou matrice (un échantillon par ligne).

    Returns:
        Tuple[np.ndarray, ForwardCache]: La sortie et le cache nécessaire
        au calcul exact des gradients.

    Raises:
        NetError: Dimension incorrecte ou entrée non finie.
    """
    a, batched = _as_input(net, x)
    inputs, pre, post = [], [], []
    for w, b, name in zip(net.weights, net.biases, net.activations):
        inputs.append(a)
        z = a @ w.T + b
        a = _activate(name, z)
        pre.append(z)
        post.append(a)
    cache = ForwardCache(tuple(inputs), tuple(pre), tuple(post), batched)
    return a, cache


def net_output(net: DenseNet, x) -> np.ndarray:
    """Passe avant sans cache."""
    return net_forward(net, x)[0]


def net_backward(
    net: DenseNet, cache: ForwardCache, output_grad
) -> GradientSet:
    """
    Passe arrière : gradient de <output_grad, sortie> par rapport à chaque
    paramètre (somme sur les échantillons d'un lot).

    Args:
        net (DenseNet): Le réseau ayant produit le cache.
        cache (ForwardCache): Cache de net_forward.
        output_grad: Cotangente, de même forme que la sortie.

    Returns:
        GradientSet: Les gradients.

    Raises:
        NetError: Cache périmé (formes incompatibles) ou cotangente non finie.
    """
    if len(cache.inputs) != net.n_layers or any(
        inp.shape[-1] != size
        for inp, size in zip(cache.inputs, net.layer_sizes[:-1])
    ):
        raise NetError("Cache périmé : formes incompatibles avec le réseau")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != cache.outputs[-1].shape:
        raise NetError(
            f"Cotangente de forme {g.shape}, attendu "
            f"{cache.outputs[-1].shape}"
        )
    if not np.all(np.isfinite(g)):
        raise NetError("Cotangente non finie")
    grad_w: List[Optional[np.ndarray]] = [None] * net.n_layers
    grad_b: List[Optional[np.ndarray]] = [None] * net.n_layers
    for k in reversed(range(net.n_layers)):
        dz = g * _activation_slope(
            net.activations[k], cache.preactivations[k], cache.outputs[k]
        )
        if cache.batched:
            grad_w[k] = dz.T @ cache.inputs[k]
            grad_b[k] = dz.sum(axis=0)
        else:
            grad_w[k] = np.outer(dz, cache.inputs[k])
            grad_b[k] = dz
        g = dz @ net.weights[k]
    return GradientSet(tuple(grad_w), tuple(grad_b))


def clip_gradients(grads: GradientSet, max_norm: float) -> GradientSet:
    """Ramène la norme globale des gradients à `max_norm` au plus."""
    norm = grads.global_norm()
    if max_norm <= 0.0 or norm <= max_norm:
        return grads
    return grads.scaled(max_norm / norm)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
) -> Tuple[List[np.ndarray], AdamState]:
    """
    Une mise à jour Adam (avec correction du biais) sur une liste de tableaux.

    Args:
        params (Sequence[np.ndarray]): Les paramètres courants.
        grads (Sequence[np.ndarray]): Les gradients, mêmes formes.
        state (AdamState): L'état de l'optimiseur.

    Returns:
        Tuple[List[np.ndarray], AdamState]: Nouveaux paramètres, nouvel état.

    Raises:
        NetError: Gradient non fini, formes incompatibles ou paramètre
            résultant non fini.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moments):
        raise NetError("Gradients et état incongruents avec les paramètres")
    step = state.step_count + 1
    bias1 = 1.0 - state.beta1**step
    bias2 = 1.0 - state.beta2**step
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(
        params, grads, state.first_moments, state.second_moments
    ):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape or m.shape != p.shape:
            raise NetError(
                f"Gradient de forme {g.shape}, paramètre {p.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NetError("Gradient non fini")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
        p = p - state.lr * update
        if not np.all(np.isfinite(p)):
            raise NetError(f"Paramètre non fini après l'étape {step}")
        new_params.append(p)
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(
        first_moments=new_m,
        second_moments=new_v,
        step_count=step,
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
    )
    return new_params, new_state


def adam_update(
    net: DenseNet, grads: GradientSet, state: AdamState
) -> Tuple[DenseNet, AdamState]:
    """
    Applique Adam à tous les paramètres d'un réseau.

    Args:
        net (DenseNet): Le réseau.
        grads (GradientSet): Ses gradients.
        state (AdamState): L'état de l'optimiseur.

    Returns:
        Tuple[DenseNet, AdamState]: Le réseau mis à jour et le nouvel état.
    """
    params, state = adam_step(net.parameters(), grads.arrays(), state)
    return net.with_parameters(params), state


@dataclass(frozen=True)
class LossSpec:
    """
    Perte scalaire construite à partir de la sortie d'un réseau.

    Attributes:
        value (Callable): sortie -> perte scalaire.
        gradient (Callable): sortie -> dérivée de la perte (même forme).
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def quadratic(cls, target) -> "LossSpec":
        """Perte 0.5 * ||sortie - cible||^2 (sommée sur le lot)."""
        target = np.asarray(target, dtype=np.float64)
        return cls(
            value=lambda y: 0.5 * float(np.sum((y - target) ** 2)),
            gradient=lambda y: y - target,
        )

    @classmethod
    def linear(cls, coefficients) -> "LossSpec":
        """Perte <coefficients, sortie>."""
        coefficients = np.asarray(coefficients, dtype=np.float64)
        return cls(
            value=lambda y: float(np.sum(coefficients * y)),
            gradient=lambda y: np.broadcast_to(coefficients, y.shape).copy(),
        )


def gradient_check(net: DenseNet, x, loss: LossSpec) -> float:
    """
    Compare le gradient analytique aux différences finies centrées.

    Args:
        net (DenseNet): Réseau de taille raisonnable (10 000 paramètres au
            plus).
        x: Entrée (vecteur ou lot).
        loss (LossSpec): La perte construite sur la sortie.

    Returns:
        float: max |analytique - numérique| / max(|analytique|,
        |numérique|, 1e-8) sur tous les paramètres.
    """
    if net.n_parameters() > 10_000:
        raise NetError(
            f"Réseau trop grand pour les différences finies : "
            f"{net.n_parameters()} paramètres"
        )
    output, cache = net_forward(net, x)
    analytic = net_backward(net, cache, loss.gradient(output)).arrays()
    params = [p.copy() for p in net.parameters()]
    worst = 0.0
    for index, param in enumerate(params):
        for pos in np.ndindex(param.shape):
            original = param[pos]
            param[pos] = original + FD_STEP
            upper = loss.value(net_output(net.with_parameters(params), x))
            param[pos] = original - FD_STEP
            lower = loss.value(net_output(net.with_parameters(params), x))
            param[pos] = original
            numeric = (upper - lower) / (2.0 * FD_STEP)
            exact = analytic[index][pos]
            scale = max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, abs(exact - numeric) / scale)
    logger.debug("Vérification du gradient : erreur relative %.3e", worst)
    return worst


def write_net(stream: BinaryIO, net: DenseNet) -> None:
    """
    Écrit un réseau au format "SDNN".

    Format : magique, version u32, nombre de couches u32, tailles u32,
    codes d'activation u8, puis poids (ligne par ligne) et biais couche par
    couche, en float32 petit-boutiste.
    """
    write_header(stream, MAGIC, VERSION)
    write_u32(stream, net.n_layers)
    write_u32(stream, *net.layer_sizes)
    write_u8(stream, *(ACTIVATION_CODES[a] for a in net.activations))
    for w, b in zip(net.weights, net.biases):
        write_f32(stream, w)
        write_f32(stream, b)


def read_net(stream: BinaryIO) -> DenseNet:
    """Lit un réseau au format "SDNN" (voir write_net)."""
    version = read_header(stream, MAGIC)
    if version != VERSION:
        raise FormatError(f"Version SDNN non supportée : {version}")
    n_layers = read_u32(stream)
    sizes = tuple(read_u32(stream) for _ in range(n_layers + 1))
    codes = [read_u8(stream) for _ in range(n_layers)]
    if any(code >= len(ACTIVATIONS) for code in codes):
        raise FormatError(f"Code d'activation inconnu : {codes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(
            read_f32(stream, fan_in * fan_out).reshape(fan_out, fan_in)
        )
        biases.append(read_f32(stream, fan_out))
    try:
        return DenseNet(
            sizes,
            tuple(weights),
            tuple(biases),
            tuple(ACTIVATIONS[c] for c in codes),
        )
    except NetError as exc:
        raise FormatError(f"Réseau SDNN invalide : {exc}") from exc
