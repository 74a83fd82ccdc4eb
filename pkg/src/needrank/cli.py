"""
Interface de linha de comando do needrank.

Subcomandos: gen-synthetic, make-needs, train-critic, train, eval, ablate.
Erros conhecidos viram uma linha `error=<Tipo> message="..."` no stderr com
código de saída 2 (configuração ou dados) ou 1 (execução).
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from .core.config import app, runtime
from .core.errors import NeedRankError, format_error_line
from .core.logging import get_logger, set_level
from .core.metrics import update_system_metrics
from .models import AblationPreset
from .schemas import load_config
from .services import (
    run_ablation,
    run_eval,
    run_gen_synthetic,
    run_make_needs,
    run_train,
    run_train_critic,
)

logger = get_logger()


def _gen_synthetic(args, config, out_dir: Path):
    paths = run_gen_synthetic(config, out_dir)
    logger.info(f"Dados sintéticos gravados em {out_dir}: {', '.join(p.name for p in paths.values())}")


def _make_needs(args, config, out_dir: Path):
    frame = run_make_needs(config, out_dir)
    logger.info(f"{len(frame)} contextos gravados em {out_dir}")


def _train_critic(args, config, out_dir: Path):
    report = run_train_critic(config, out_dir)
    logger.info(f"Crítico: MSE {report.mse:.4f}, correlação erro-variância {report.pearson_var:.3f}")


def _train(args, config, out_dir: Path):
    result = run_train(config, out_dir)
    logger.info(f"Treino concluído: {len(result.train_log) - 1} passos, checkpoint em {out_dir / 'policy.ckpt'}")


def _eval(args, config, out_dir: Path):
    run_eval(config, out_dir, checkpoint=args.checkpoint)


def _ablate(args, config, out_dir: Path):
    preset = AblationPreset(args.preset) if args.preset else None
    run_ablation(config, out_dir, preset)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="needrank", description=app.TITLE)
    parser.add_argument("--version", action="version", version=f"%(prog)s {app.VERSION}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="arquivo JSON de configuração")
    common.add_argument("--seed", type=int, default=None, help="substitui a semente da configuração")
    common.add_argument("--out", type=Path, default=None, help="diretório de saída")
    common.add_argument("--verbose", action="store_true", help="logs em nível DEBUG")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("gen-synthetic", parents=[common], help="gera o conjunto sintético") \
        .set_defaults(handler=_gen_synthetic)
    commands.add_parser("make-needs", parents=[common], help="grava contextos e relevâncias") \
        .set_defaults(handler=_make_needs)
    commands.add_parser("train-critic", parents=[common], help="treina o crítico heteroscedástico") \
        .set_defaults(handler=_train_critic)
    commands.add_parser("train", parents=[common], help="treina a política com GRPO") \
        .set_defaults(handler=_train)

    evaluate = commands.add_parser("eval", parents=[common], help="avalia no teste")
    evaluate.add_argument("--checkpoint", type=Path, default=None)
    evaluate.set_defaults(handler=_eval)

    ablate = commands.add_parser("ablate", parents=[common], help="executa um preset de ablação")
    ablate.add_argument("--preset", choices=[p.value for p in AblationPreset], default=None)
    ablate.set_defaults(handler=_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose or app.DEBUG:
        set_level("DEBUG")

    try:
        config = load_config(args.config, args.seed)
        out_dir = Path(args.out or runtime.DEFAULT_OUT_DIR)
        out_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"needrank {args.command} (semente {config.seed}) -> {out_dir}")
        update_system_metrics()
        args.handler(args, config, out_dir)
    except NeedRankError as e:
        logger.error(f"Falha em {args.command}: {e}", exc_info=e.exit_code == 1)
        print(e.to_line(), file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(format_error_line("IOError", str(e)), file=sys.stderr)
        return 2
    except UnicodeDecodeError as e:
        logger.error(f"Falha em {args.command}: {e}")
        print(format_error_line("DataFormatError", f"conteúdo não é UTF-8 válido ({e.reason})"),
              file=sys.stderr)
        return 2
    except ValueError as e:
        logger.error(f"Falha em {args.command}: {e}", exc_info=True)
        print(format_error_line(type(e).__name__, str(e)), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
