# app.py - Point d'entrée en ligne de commande de PrepTrace
import argparse
import sys
from dataclasses import replace
from typing import List, Optional

from loguru import logger

from config import PipelineConfig, config, load_config
from core.errors import ValidationError
from modules.pipeline import COMMANDS, PreparednessPipeline

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

# Configuration du logging (même gabarit que le format historique de l'application)
LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss,SSS} - {name} - {level} - {message}"


def setup_logging(level: str):
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), format=LOG_FORMAT)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="preptrace",
        description="Signaux de préparation aux ouragans à partir de traces de mobilité",
    )
    parser.add_argument("command", choices=COMMANDS, help="Étape à exécuter (all = pipeline complet)")
    parser.add_argument("--config", help="Fichier de configuration INI")
    parser.add_argument("--out", help="Répertoire de sortie (remplace [paths] out_dir)")
    parser.add_argument("--lenient", action="store_true", help="Ignorer les lignes invalides au lieu d'échouer")
    parser.add_argument("--workers", type=int, help="Nombre de workers")
    parser.add_argument("--seed", type=int, help="Graine du générateur (synth uniquement)")
    parser.add_argument("--log-level", help="Niveau de log (DEBUG, INFO, WARNING...)")
    parser.add_argument("--progress", action="store_true", help="Afficher les barres de progression")
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else replace(config)
    if args.out:
        cfg.out_dir = args.out
    if args.lenient:
        cfg.lenient = True
    if args.workers is not None:
        cfg.workers = args.workers
    if args.log_level:
        cfg.log_level = args.log_level
    if args.progress:
        cfg.progress_enabled = True
    return cfg.validate()


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(config.log_level)
    try:
        cfg = resolve_config(args)
        setup_logging(cfg.log_level)
        if args.seed is not None and args.command != "synth":
            logger.warning("--seed n'est utilisé que par la commande synth")
        PreparednessPipeline(cfg).run(args.command, args.config, args.seed)
    except ValidationError as e:
        logger.error(f"Entrée invalide: {e}")
        return EXIT_VALIDATION
    except Exception as e:
        logger.exception(f"Erreur d'exécution: {e}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
