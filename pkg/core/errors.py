# core/errors.py
from typing import Optional


class PrepTraceError(Exception):
    """Erreur de base du pipeline"""


class ValidationError(PrepTraceError):
    """Entrée ou configuration invalide (code de sortie 1)"""


class ConfigError(ValidationError):
    """Configuration incohérente"""


class ParseError(ValidationError):
    """Ligne de fichier d'entrée illisible"""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        location = ""
        if path:
            location += f"{path}"
        if line is not None:
            location += f":{line}"
        super().__init__(f"{location}: {message}" if location else message)


class DuplicateKey(ValidationError):
    """Clé dupliquée dans un jeu de données"""


class InvalidGeometry(ValidationError, ValueError):
    """Géométrie rejetée à la construction"""


class DegenerateGeometry(InvalidGeometry):
    """Polygone d'aire nulle"""


class NoHome(PrepTraceError):
    """Appareil sans CBG de résidence"""


class InsufficientData(PrepTraceError):
    """Pas assez d'observations pour l'opération demandée"""


class DegenerateInput(PrepTraceError, ValueError):
    """Entrée statistique dégénérée (vide, constante...)"""
