import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

"""
How to run:
python src/main.py <verb> [flags]

Verbs:
gen-data --out DIR --cases N --size X,Y,Z --seed S     write a phantom dataset
train    --data DIR --out DIR [--config FILE] [--resume CKPT]
infer    --ckpt FILE --case DIR [--drop t1,t2] --out FILE
eval     --pred FILE --gt FILE --report FILE
matrix   --ckpt FILE --data DIR --report FILE [--noise SIGMA]
compare  --baseline REPORT --contrastive REPORT --out DIR

Every verb accepts:
--config FILE      plain `key = value` configuration file
--set KEY=VALUE    configuration override, repeatable (defaults < file < --set)
-v, --verbose      debug logging

Example:
python src/main.py gen-data --out ./phantoms --cases 16 --size 48,48,16 --seed 7
python src/main.py train --data ./phantoms --out ./run_beta1 --set loss.beta=1.0
python src/main.py matrix --ckpt ./run_beta1/checkpoint.rfsg --data ./phantoms --report ./run_beta1/matrix.jsonl
"""

from config import ExperimentConfig, dump_config, load_config
from data import ModalityId, write_phantom_dataset
from errors import RefusegError
from metrics import evaluate_case, write_reports
from niftilite import read_volume, write_volume
from tools.ComparisonController import ComparisonController
from trainer import (
    drop_modality_matrix,
    infer,
    labels_to_volume,
    render_matrix,
    train,
    volume_to_labels,
)

logger = logging.getLogger(__name__)
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_FILE = 'refuseg.log'


def _extent(text: str) -> Tuple[int, int, int]:
    try:
        values = tuple(int(part) for part in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y,Z integers, got '{text}'")
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated extents, got '{text}'")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    common.add_argument('--config', help='Configuration file of key = value lines')
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='Configuration override (repeatable)')

    parser = argparse.ArgumentParser(prog='refuseg', description='Multi-modal fusion segmentation at desk scale')
    verbs = parser.add_subparsers(dest='verb', required=True, metavar='verb')

    gen = verbs.add_parser('gen-data', parents=[common], help='Write a phantom dataset')
    gen.add_argument('--out', required=True, help='Dataset directory')
    gen.add_argument('--cases', type=int, default=16, help='Number of cases (default: 16)')
    gen.add_argument('--size', type=_extent, default=(48, 48, 16), help='Volume extents X,Y,Z (default: 48,48,16)')
    gen.add_argument('--seed', type=int, default=0, help='Dataset seed (default: 0)')

    tr = verbs.add_parser('train', parents=[common], help='Train a model')
    tr.add_argument('--data', required=True, help='Dataset directory')
    tr.add_argument('--out', required=True, help='Run directory')
    tr.add_argument('--resume', help='Checkpoint to resume from')

    inf = verbs.add_parser('infer', parents=[common], help='Predict the labels of one case')
    inf.add_argument('--ckpt', required=True, help='Checkpoint file')
    inf.add_argument('--case', required=True, help='Case directory')
    inf.add_argument('--drop', default='', help='Comma-separated modalities to drop (t1,t1c,t2,flair)')
    inf.add_argument('--out', required=True, help='Output label volume (.nii)')

    ev = verbs.add_parser('eval', parents=[common], help='Score a predicted label volume')
    ev.add_argument('--pred', required=True, help='Predicted label volume')
    ev.add_argument('--gt', required=True, help='Ground-truth label volume')
    ev.add_argument('--report', required=True, help='Output report (JSON lines)')

    mx = verbs.add_parser('matrix', parents=[common], help='Drop-one-modality evaluation matrix')
    mx.add_argument('--ckpt', required=True, help='Checkpoint file')
    mx.add_argument('--data', required=True, help='Dataset directory')
    mx.add_argument('--report', required=True, help='Output report (JSON lines)')
    mx.add_argument('--noise', type=float, default=0.0, help='Gaussian input noise sigma (default: 0)')

    cmp = verbs.add_parser('compare', parents=[common], help='Compare a baseline and a contrastive matrix')
    cmp.add_argument('--baseline', required=True, help='Matrix report of the run without contrastive loss')
    cmp.add_argument('--contrastive', required=True, help='Matrix report of the run with contrastive loss')
    cmp.add_argument('--out', required=True, help='Output directory')
    return parser


def setup_logging(verbose: bool, log_dir: Optional[str]) -> List[logging.Handler]:
    """Console and file handlers on the root logger; returns them for removal."""
    level = logging.DEBUG if verbose else logging.INFO
    formatter = logging.Formatter(LOG_FORMAT)
    root = logging.getLogger()
    root.setLevel(level)

    ch = logging.StreamHandler()
    ch.setLevel(level)
    ch.setFormatter(formatter)

    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
    fh = logging.FileHandler(os.path.join(log_dir or '.', LOG_FILE), encoding='utf-8')
    fh.setLevel(level)
    fh.setFormatter(formatter)

    handlers = [ch, fh]
    for handler in handlers:
        root.addHandler(handler)
    return handlers


def _log_dir(args: argparse.Namespace) -> Optional[str]:
    if args.verb in ('train', 'gen-data', 'compare'):
        return args.out
    if args.verb == 'matrix':
        return str(Path(args.report).parent)
    return None


def execute(args: argparse.Namespace, config: ExperimentConfig) -> None:
    if args.verb == 'gen-data':
        write_phantom_dataset(args.out, args.cases, args.size, args.seed)

    elif args.verb == 'train':
        result = train(args.data, config, args.out, resume=args.resume)
        logger.info(f"Training finished after {result.steps} steps; checkpoint {result.checkpoint_path}")

    elif args.verb == 'infer':
        drop = ModalityId.parse_list(args.drop)
        labels = infer(args.ckpt, args.case, drop)
        write_volume(labels_to_volume(labels), args.out)
        logger.info(f"Wrote predicted labels {args.out}")

    elif args.verb == 'eval':
        pred = volume_to_labels(read_volume(args.pred))
        gt = volume_to_labels(read_volume(args.gt))
        report = evaluate_case(pred, gt, Path(args.gt).parent.name, cfg=config.hd95)
        write_reports([report], args.report)
        logger.info(f"Dice {report.dice}, HD95 {report.hd95}")

    elif args.verb == 'matrix':
        drop_modality_matrix(args.ckpt, args.data, args.report, noise_sigma=args.noise,
                             seed=config.train.seed, cfg=config.hd95)
        render_matrix(args.report, Path(args.report).parent, args.noise)

    elif args.verb == 'compare':
        ComparisonController().compare_reports(args.baseline, args.contrastive, args.out)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, run one verb and return the process exit code.

    0 on success, 1 on a runtime error, 2 on a usage error.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    handlers = setup_logging(args.verbose, _log_dir(args))
    try:
        logger.info(f"Arguments: {args}")
        config = load_config(args.config, args.overrides)
        print(dump_config(config), end='', flush=True)
        execute(args, config)
        return 0
    except (RefusegError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    except Exception:
        logger.exception("Unexpected failure")
        return 1
    finally:
        root = logging.getLogger()
        for handler in handlers:
            root.removeHandler(handler)
            handler.close()


if __name__ == '__main__':
    sys.exit(run())
