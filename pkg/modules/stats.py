# modules/stats.py
"""Statistiques de rang: corrélation de Spearman et médiane."""
import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Sequence

import numpy as np
import pandas as pd
from loguru import logger
from scipy import stats as sps

from core.errors import DegenerateInput

# Au-delà, approximation par la loi de Student (8! = 40 320 permutations)
EXACT_MAX_N = 8
_TOLERANCE = 1e-12

CORRELATION_COLUMNS = ["category", "coefficient", "p_value", "n"]


class CorrelationMethod(str, Enum):
    T_APPROX = "TApprox"
    PERMUTATION = "Permutation"


@dataclass(frozen=True)
class CorrelationResult:
    coefficient: float
    p_value: float
    n: int
    method: CorrelationMethod


def _rank_pair(x: Sequence[float], y: Sequence[float]):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateInput(f"Séquences de longueurs différentes: {x.shape} et {y.shape}")
    if len(x) < 3:
        raise DegenerateInput(f"Au moins 3 observations requises (reçu {len(x)})")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateInput("Corrélation indéfinie pour une série constante")
    return sps.rankdata(x), sps.rankdata(y)


def _permutation_p(rx: np.ndarray, ry: np.ndarray, rho: float) -> float:
    """p bilatérale exacte sur les n! réordonnancements des rangs de y"""
    cx = rx - rx.mean()
    cy = ry - ry.mean()
    denom = np.sqrt((cx ** 2).sum() * (cy ** 2).sum())
    perms = np.array(list(itertools.permutations(cy)))
    rhos = perms @ cx / denom
    return float(np.mean(np.abs(rhos) >= abs(rho) - _TOLERANCE))


def t_approx_p_value(rho: float, n: int) -> float:
    """p bilatérale par la loi de Student à n - 2 degrés de liberté"""
    if abs(rho) >= 1.0:
        return 0.0
    t = rho * np.sqrt((n - 2) / (1 - rho ** 2))
    return float(min(1.0, 2 * sps.t.sf(abs(t), n - 2)))


def spearman(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Coefficient de Spearman (rangs moyens pour les ex aequo) et p bilatérale"""
    rx, ry = _rank_pair(x, y)
    n = len(rx)
    rho = float(np.clip(np.corrcoef(rx, ry)[0, 1], -1.0, 1.0))
    if n <= EXACT_MAX_N:
        return CorrelationResult(rho, _permutation_p(rx, ry, rho), n, CorrelationMethod.PERMUTATION)
    return CorrelationResult(rho, t_approx_p_value(rho, n), n, CorrelationMethod.T_APPROX)


def median(values: Sequence[float]) -> float:
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        raise DegenerateInput("Médiane d'une série vide")
    return float(np.median(values))


def correlate_extent_proactivity(records) -> Dict[str, CorrelationResult]:
    """Spearman ampleur / proactivité pour chaque catégorie"""
    results: Dict[str, CorrelationResult] = {}
    for category in sorted({r.category for r in records}):
        part = [r for r in records if r.category == category]
        try:
            results[category] = spearman([r.extent for r in part], [r.proactivity for r in part])
        except DegenerateInput as e:
            logger.warning(f"Corrélation ignorée pour {category}: {e}")
    return results


def correlations_to_frame(results: Dict[str, CorrelationResult]) -> pd.DataFrame:
    rows = [(category, r.coefficient, r.p_value, r.n) for category, r in sorted(results.items())]
    return pd.DataFrame(rows, columns=CORRELATION_COLUMNS)
