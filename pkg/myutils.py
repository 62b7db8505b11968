"""
Diverses fonctions utiles communes aux modules du laboratoire.

Ce module contient les fonctions utilitaires pour la lecture et l'écriture des
fichiers binaires (en-têtes, entiers et flottants petit-boutistes), l'écriture
atomique des fichiers de résultats, le calcul des empreintes et le mélange des
graines aléatoires.

Functions:
    write_header(stream, magic, version): Écrit un en-tête magique + version.
    read_header(stream, magic): Lit et vérifie un en-tête, retourne la version.
    write_u32(stream, *values) / read_u32(stream): Entiers non signés 32 bits.
    write_u64(stream, value) / read_u64(stream): Entier non signé 64 bits.
    write_f32(stream, values) / read_f32(stream, count): Vecteurs float32.
    atomic_write_bytes(path, data) / atomic_write_text(path, text):
        Écriture sous un nom temporaire puis renommage.
    file_digest(path): Empreinte SHA-256 d'un fichier.
    mix_seed(*parts): Graine 64 bits dérivée de plusieurs entiers.
    format_float(value): Représentation texte stable d'un flottant.
"""

__copyright__ = "Copyright (C) 2024 Grostim"
__license__ = "GNU GPLv2"

import hashlib
import math
import os
import struct
import tempfile
from typing import BinaryIO, Union

import numpy as np

PathLike = Union[str, "os.PathLike[str]"]

MASK64 = (1 << 64) - 1


class FormatError(ValueError):
    "Un fichier binaire mal formé ou tronqué."


def _read_exact(stream: BinaryIO, size: int) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise FormatError(
            f"Fichier tronqué : {size} octets attendus, {len(data)} lus"
        )
    return data


def write_header(stream: BinaryIO, magic: bytes, version: int) -> None:
    """
    Écrit un en-tête composé de 4 octets magiques et d'une version u32.

    Args:
        stream (BinaryIO): Flux binaire ouvert en écriture.
        magic (bytes): Les 4 octets magiques, par exemple b"SDNN".
        version (int): Numéro de version du format.
    """
    if len(magic) != 4:
        raise FormatError(f"Octets magiques invalides : {magic!r}")
    stream.write(magic)
    write_u32(stream, version)


def read_header(stream: BinaryIO, magic: bytes) -> int:
    """
    Lit un en-tête et vérifie ses octets magiques.

    Args:
        stream (BinaryIO): Flux binaire ouvert en lecture.
        magic (bytes): Les octets magiques attendus.

    Returns:
        int: La version lue.

    Raises:
        FormatError: Si les octets magiques ne correspondent pas.
    """
    found = _read_exact(stream, 4)
    if found != magic:
        raise FormatError(
            f"Octets magiques inattendus : {found!r} au lieu de {magic!r}"
        )
    return read_u32(stream)


def write_u32(stream: BinaryIO, *values: int) -> None:
    for value in values:
        stream.write(struct.pack("<I", value))


def read_u32(stream: BinaryIO) -> int:
    return struct.unpack("<I", _read_exact(stream, 4))[0]


def write_u8(stream: BinaryIO, *values: int) -> None:
    for value in values:
        stream.write(struct.pack("<B", value))


def read_u8(stream: BinaryIO) -> int:
    return struct.unpack("<B", _read_exact(stream, 1))[0]


def write_u64(stream: BinaryIO, value: int) -> None:
    stream.write(struct.pack("<Q", value))


def read_u64(stream: BinaryIO) -> int:
    return struct.unpack("<Q", _read_exact(stream, 8))[0]


def write_f32(stream: BinaryIO, values: np.ndarray) -> None:
    """Écrit un tableau (aplati en ordre C) en float32 petit-boutiste."""
    stream.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_f32(stream: BinaryIO, count: int) -> np.ndarray:
    """Lit `count` float32 petit-boutistes et les retourne en float64."""
    raw = _read_exact(stream, 4 * count)
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    """
    Écrit un fichier sous un nom temporaire puis le renomme.

    Un lecteur ne voit jamais de fichier partiellement écrit.

    Args:
        path: Chemin final du fichier.
        data (bytes): Contenu à écrire.
    """
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(
        dir=directory, prefix="." + os.path.basename(path), suffix=".tmp"
    )
    try:
        with os.fdopen(fd, "wb") as tmp:
            tmp.write(data)
            tmp.flush()
            os.fsync(tmp.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    """Version texte (UTF-8, fins de ligne '\\n') de atomic_write_bytes."""
    atomic_write_bytes(path, text.encode("utf-8"))


def file_digest(path: PathLike) -> str:
    """
    Calcule l'empreinte SHA-256 d'un fichier.

    Args:
        path: Chemin du fichier.

    Returns:
        str: L'empreinte en hexadécimal.
    """
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _splitmix64(state: int) -> int:
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(*parts: int) -> int:
    """
    Dérive une graine 64 bits reproductible d'une suite d'entiers.

    Chaque composante est absorbée par une étape splitmix64 ; le résultat ne
    dépend ni de la machine ni de la version de Python.

    Args:
        *parts (int): Les composantes (graine maître, indices, étiquette...).

    Returns:
        int: Une graine dans [0, 2**64).
    """
    state = 0
    for part in parts:
        state = _splitmix64(state ^ (int(part) & MASK64))
    return state


def format_float(value: float) -> str:
    """
    Représentation texte stable d'un flottant pour les fichiers CSV.

    Utilise la représentation la plus courte qui relit la même valeur ;
    les valeurs non finies s'écrivent "nan", "inf" ou "-inf".
    """
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(value)
