"""Configuration des expériences et manifeste des répertoires de résultats.

La configuration est un document INI dont les sections sont les préfixes des
clés pointées : `ppo.gamma` est la clé `gamma` de la section `[ppo]`. Les
valeurs par défaut viennent des dataclasses des modules ; le document puis les
surcharges `--set section.cle=valeur` s'appliquent par-dessus. Exemple :

[experiment]
presets = crawler-2, crawler-4, crawler-8
budgets = 1000
seeds = 5

[ppo]
gamma = 0.995
"""

__copyright__ = "Copyright (C) 2024 Grostim"
__license__ = "GNU GPLv2"

import configparser
import io
import json
import logging
import os
import platform
from dataclasses import dataclass, field, fields, replace
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence, Tuple

from dateutil import tz
from dateutil.parser import isoparse

from .. import __version__
from ..crawler.crawler import WALK, CrawlerConfig, CrawlerError, preset
from ..dyna.dyna import (
    DEFAULT_BUDGETS,
    DEFAULT_PRESETS,
    HarnessError,
    SweepConfig,
)
from ..myutils import atomic_write_text, file_digest
from ..ppo.ppo import PpoConfig, PpoError
from ..selfmodel.selfmodel import FitConfig

logger = logging.getLogger(__name__)

CONFIG_NAME = "config.ini"
MANIFEST_NAME = "manifest.json"
SECTIONS = ("experiment", "crawler", "selfmodel", "ppo", "harness")

# Fixés par le préréglage, pas par la configuration.
_PRESET_FIELDS = ("legs", "joints_per_leg")

# Clés dont la valeur par défaut (None) est dérivée du corps : une valeur
# vide les laisse dérivées. Exemple du type attendu pour chacune.
_DERIVED_KEYS = {
    "crawler.z_terminate": 0.0,
    "crawler.hip_attachment_offsets": (0.0,),
}


class ConfigError(ValueError):
    "Une configuration invalide."


def _dataclass_defaults(cls, exclude: Sequence[str] = ()) -> Dict[str, Any]:
    return {f.name: f.default for f in fields(cls) if f.name not in exclude}


def default_values() -> Dict[str, Dict[str, Any]]:
    """Les valeurs par défaut de toutes les clés, par section."""
    return {
        "experiment": {
            "master_seed": 0,
            "presets": DEFAULT_PRESETS,
            "budgets": DEFAULT_BUDGETS,
            "seeds": 10,
            "tasks": (WALK,),
            "output_dir": "runs",
        },
        "crawler": _dataclass_defaults(CrawlerConfig, _PRESET_FIELDS),
        "selfmodel": _dataclass_defaults(FitConfig, ("seed",)),
        "ppo": _dataclass_defaults(PpoConfig, ("total_step_budget",)),
        "harness": {
            "ppo_budget_model": 200_000,
            "eval_episodes": 10,
            "collect_episode_len": 100,
            "record_wall_time": False,
        },
    }


def coerce(key: str, raw: str, default: Any) -> Any:
    """
    Convertit une valeur texte dans le type de la valeur par défaut.

    Args:
        key (str): La clé pointée, pour les messages.
        raw (str): La valeur lue.
        default (Any): La valeur par défaut de la clé.

    Returns:
        Any: bool, int, float, str ou tuple (liste séparée par des virgules) ;
        None pour une clé dérivée laissée vide.

    Raises:
        ConfigError: Valeur non convertible.
    """
    text = raw.strip()
    if key in _DERIVED_KEYS:
        if not text:
            return None
        default = _DERIVED_KEYS[key]
    try:
        if isinstance(default, bool):
            states = configparser.ConfigParser.BOOLEAN_STATES
            if text.lower() not in states:
                raise ValueError(text)
            return states[text.lower()]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else str
            items = [item.strip() for item in text.split(",") if item.strip()]
            return tuple(kind(item) for item in items)
    except ValueError as exc:
        raise ConfigError(f"Valeur invalide pour {key} : {raw!r}") from exc
    return text


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def split_key(key: str) -> Tuple[str, str]:
    section, dot, name = key.partition(".")
    if not dot or not name:
        raise ConfigError(f"Clé non pointée : {key!r} (attendu section.cle)")
    return section.strip(), name.strip()


@dataclass
class ExperimentConfig:
    """
    Configuration complète d'une expérience.

    Attributes:
        values (Dict[str, Dict[str, Any]]): Valeurs résolues par section.
    """

    values: Dict[str, Dict[str, Any]] = field(default_factory=default_values)

    def get(self, key: str) -> Any:
        section, name = split_key(key)
        self._check(section, name)
        return self.values[section][name]

    def set(self, key: str, raw: str) -> None:
        """Applique une surcharge texte `section.cle`."""
        section, name = split_key(key)
        self._check(section, name)
        self.values[section][name] = coerce(
            f"{section}.{name}", raw, self.values[section][name]
        )

    def _check(self, section: str, name: str) -> None:
        if section not in self.values:
            raise ConfigError(f"Section inconnue : [{section}]")
        if name not in self.values[section]:
            raise ConfigError(f"Clé inconnue : {section}.{name}")

    def update_from_ini(self, text: str, source: str = "<texte>") -> None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source} illisible : {exc}") from exc
        for section in parser.sections():
            for name, raw in parser.items(section, raw=True):
                self.set(f"{section}.{name}", raw)

    def to_ini(self) -> str:
        """Le document INI complet, sections et clés dans un ordre fixe."""
        parser = configparser.ConfigParser(interpolation=None)
        for section in SECTIONS:
            parser[section] = {
                name: format_value(value)
                for name, value in self.values[section].items()
            }
        buffer = io.StringIO()
        parser.write(buffer)
        return buffer.getvalue()

    def crawler_overrides(self) -> Tuple[Tuple[str, Any], ...]:
        """Les constantes physiques différentes des valeurs par défaut."""
        defaults = _dataclass_defaults(CrawlerConfig, _PRESET_FIELDS)
        return tuple(
            (name, value)
            for name, value in self.values["crawler"].items()
            if value != defaults[name]
        )

    def crawler_config(self, preset_name: str) -> CrawlerConfig:
        return replace(preset(preset_name), **dict(self.crawler_overrides()))

    def ppo_config(self, budget: int = 0) -> PpoConfig:
        return PpoConfig(**self.values["ppo"], total_step_budget=budget)

    def fit_config(self, seed: int = 0) -> FitConfig:
        return FitConfig(**self.values["selfmodel"], seed=seed)

    def sweep_config(self) -> SweepConfig:
        experiment, harness = self.values["experiment"], self.values["harness"]
        return SweepConfig(
            presets=experiment["presets"],
            budgets=experiment["budgets"],
            seeds=experiment["seeds"],
            tasks=experiment["tasks"],
            master_seed=experiment["master_seed"],
            ppo_budget_model=harness["ppo_budget_model"],
            ppo=self.ppo_config(),
            fit=self.fit_config(),
            eval_episodes=harness["eval_episodes"],
            collect_episode_len=harness["collect_episode_len"],
            crawler_overrides=self.crawler_overrides(),
        )

    def validate(self) -> None:
        """
        Construit toutes les configurations des modules une fois.

        Raises:
            ConfigError: Une valeur est refusée par un module.
        """
        try:
            self.sweep_config().cells()
            for name in self.values["experiment"]["presets"]:
                self.crawler_config(name)
        except (CrawlerError, PpoError, HarnessError, TypeError) as exc:
            raise ConfigError(f"Configuration refusée : {exc}") from exc


def load_config(
    path: Optional[str] = None, overrides: Sequence[str] = ()
) -> ExperimentConfig:
    """
    Lit une configuration : défauts, puis document INI, puis surcharges.

    Args:
        path (Optional[str]): Le document INI ; None pour les seuls défauts.
        overrides (Sequence[str]): Surcharges "section.cle=valeur".

    Returns:
        ExperimentConfig: La configuration résolue et validée.

    Raises:
        ConfigError: Clé inconnue, valeur invalide ou refusée.
    """
    config = ExperimentConfig()
    if path is not None:
        with open(path, encoding="utf-8") as handle:
            config.update_from_ini(handle.read(), source=path)
        logger.debug("Configuration lue depuis %s", path)
    for item in overrides:
        key, equal, raw = item.partition("=")
        if not equal:
            raise ConfigError(f"Surcharge mal formée : {item!r}")
        config.set(key, raw)
    config.validate()
    return config


def _now() -> datetime:
    return datetime.now(tz.tzutc())


def file_inventory(run_dir: str) -> Dict[str, str]:
    """Empreintes SHA-256 des fichiers d'un répertoire, hors manifeste."""
    inventory = {}
    for root, dirs, names in os.walk(run_dir):
        dirs.sort()
        for name in sorted(names):
            if name == MANIFEST_NAME or name.startswith("."):
                continue
            path = os.path.join(root, name)
            relative = os.path.relpath(path, run_dir).replace(os.sep, "/")
            inventory[relative] = file_digest(path)
    return inventory


@dataclass
class RunManifest:
    """
    Manifeste d'un répertoire de résultats.

    Écrit au démarrage d'une commande puis finalisé à la fin avec
    l'inventaire des fichiers produits.

    Attributes:
        command (str): La sous-commande.
        config_text (str): La configuration résolue (INI).
        version (str): Version de l'outil.
        platform (str): Plateforme d'exécution.
        started (datetime): Début (UTC).
        finished (Optional[datetime]): Fin (UTC) ; None tant que la
            commande tourne.
        files (Dict[str, str]): Chemin relatif -> empreinte SHA-256.
    """

    command: str
    config_text: str
    version: str = __version__
    platform: str = field(default_factory=platform.platform)
    started: datetime = field(default_factory=_now)
    finished: Optional[datetime] = None
    files: Dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "command": self.command,
                "config": self.config_text,
                "version": self.version,
                "platform": self.platform,
                "started": self.started.isoformat(),
                "finished": self.finished.isoformat()
                if self.finished
                else None,
                "files": self.files,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        try:
            data = json.loads(text)
            return cls(
                command=data["command"],
                config_text=data["config"],
                version=data["version"],
                platform=data["platform"],
                started=isoparse(data["started"]),
                finished=isoparse(data["finished"])
                if data["finished"]
                else None,
                files=dict(data["files"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"Manifeste illisible : {exc}") from exc

    def write(self, run_dir: str) -> None:
        atomic_write_text(os.path.join(run_dir, MANIFEST_NAME), self.to_json())

    def finalize(self, run_dir: str) -> None:
        """Inventorie les fichiers produits et date la fin de la commande."""
        self.files = file_inventory(run_dir)
        self.finished = _now()
        self.write(run_dir)
        logger.info(
            "Manifeste finalisé : %d fichiers dans %s", len(self.files), run_dir
        )

    @classmethod
    def read(cls, run_dir: str) -> "RunManifest":
        path = os.path.join(run_dir, MANIFEST_NAME)
        with open(path, encoding="utf-8") as handle:
            return cls.from_json(handle.read())

    def verify(self, run_dir: str) -> List[str]:
        """
        Compare les fichiers du répertoire à l'inventaire.

        Returns:
            List[str]: Les anomalies (fichier manquant, modifié, ou
            manifeste non finalisé) ; vide si le répertoire est intact.
        """
        problems = []
        if self.finished is None:
            problems.append("manifeste non finalisé")
        current = file_inventory(run_dir)
        for name, digest in sorted(self.files.items()):
            if name not in current:
                problems.append(f"{name} : manquant")
            elif current[name] != digest:
                problems.append(f"{name} : modifié")
        return problems
