"""
Command-line entry point

    semsim vocab | pretrain | train | generate | evaluate | score | gradcheck | stats

Each run logs a start banner, numbered steps and an execution summary, and
writes execution_<id>.json into the report directory. Exit status is 0 only
when no error was reported; usage errors exit with 2.
"""

import argparse
import json
import logging
import traceback
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional

from tabulate import tabulate

from local_analytics import evalstats
from local_analytics.plots import plot_sweep
from local_analytics.rouge_eval import evaluate_stream
from semsim import tensor_autodiff as ad
from semsim.config import AppConfig, PathsConfig, load_config
from semsim.data import DatasetRecord, corpus_texts, preprocess, stream_records, tokenize_records, write_jsonl
from semsim.decoder_search import beam_search, greedy_decode
from semsim.errors import ConfigError, DataError, SemSimError
from semsim.gradcheck import TOLERANCE, run_gradcheck, toy_setup
from semsim.semsim_scorer import init_scorer, load_scorer, save_scorer, score_texts
from semsim.seq2seq_model import init_model
from semsim.tokenizer import decode, encode, load_vocab, save_vocab, train_bpe
from semsim.trainer import filter_long_samples, load_checkpoint, load_model, pretrain_lite, run_training, \
    save_checkpoint

logger = logging.getLogger(__name__)

FINAL_CHECKPOINT = 'final.ckpt'

# CLI flag -> config key
FLAG_KEYS = {
    'data': 'paths.data',
    'vocab': 'paths.vocab',
    'scorer': 'paths.scorer',
    'checkpoint_dir': 'paths.checkpoints',
    'report_dir': 'paths.reports',
    'target_vocab': 'tokenizer.target_vocab',
    'precision': 'model.precision',
    'lr': 'train.lr',
    'update_freq': 'train.update_freq',
    'max_tokens': 'train.max_tokens',
    'epochs': 'train.epochs',
    'objective': 'train.objective',
    'seed': 'train.seed',
    'lambda_semsim': 'train.lambda_semsim',
    'dropout': 'train.dropout',
    'clip_norm': 'train.clip_norm',
    'max_steps': 'train.max_steps',
    'log_every': 'train.log_every',
    'checkpoint_every': 'train.checkpoint_every',
    'max_source_len': 'train.max_source_len',
    'max_target_len': 'train.max_target_len',
    'beam': 'search.beam',
    'min_len': 'search.min_len',
    'max_len': 'search.max_len',
    'lenpen': 'search.lenpen',
    'pooling': 'scorer.pooling',
}


# ---------------------------------------------------------------------------
# Parser

def _add_paths(parser, *names):
    help_text = {
        'data': 'training JSONL (document, summary)',
        'vocab': 'vocabulary file',
        'scorer': 'scorer checkpoint',
        'checkpoint_dir': 'directory for training checkpoints',
        'report_dir': 'directory for reports',
    }
    for name in names:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, help=help_text[name])


def _add_training_flags(parser):
    parser.add_argument('--lr', type=float)
    parser.add_argument('--update-freq', type=int)
    parser.add_argument('--max-tokens', type=int)
    parser.add_argument('--epochs', type=int)
    parser.add_argument('--seed', type=int)
    parser.add_argument('--dropout', type=float)
    parser.add_argument('--clip-norm', type=float, help='global gradient norm cap, 0 disables')
    parser.add_argument('--max-steps', type=int, help='stop after this many updates (0: no limit)')
    parser.add_argument('--log-every', type=int)
    parser.add_argument('--max-source-len', type=int)
    parser.add_argument('--max-target-len', type=int)
    parser.add_argument('--precision', type=int, choices=(32, 64))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='semsim', description='Semantic-similarity summarization toolkit')
    parser.add_argument('--config', help='key = value config file (default: $SEMSIM_CONFIG or config/semsim.conf)')
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('vocab', help='train the BPE vocabulary')
    _add_paths(p, 'data', 'vocab', 'report_dir')
    p.add_argument('--target-vocab', type=int)

    p = sub.add_parser('pretrain', help='pretrain-lite: ML warm start, then freeze the encoder as scorer')
    _add_paths(p, 'data', 'vocab', 'scorer', 'report_dir')
    _add_training_flags(p)
    p.add_argument('--pooling', choices=('mean', 'first'))

    p = sub.add_parser('train', help='train the generator')
    _add_paths(p, 'data', 'vocab', 'scorer', 'checkpoint_dir', 'report_dir')
    _add_training_flags(p)
    p.add_argument('--objective', choices=('ml_only', 'composite', 'semsim_only'))
    p.add_argument('--lambda-semsim', type=float)
    p.add_argument('--checkpoint-every', type=int)
    p.add_argument('--resume', help='training checkpoint to continue from')

    p = sub.add_parser('generate', help='beam-search summaries for a JSONL of documents')
    _add_paths(p, 'vocab', 'checkpoint_dir', 'report_dir')
    p.add_argument('--checkpoint', help=f"training checkpoint (default: <checkpoint-dir>/{FINAL_CHECKPOINT})")
    p.add_argument('--input', required=True)
    p.add_argument('--output', required=True)
    p.add_argument('--beam', type=int)
    p.add_argument('--min-len', type=int)
    p.add_argument('--max-len', type=int)
    p.add_argument('--lenpen', type=float)
    p.add_argument('--no-trigram-block', action='store_true')
    p.add_argument('--greedy', action='store_true')

    p = sub.add_parser('evaluate', help='ROUGE of generated vs reference summaries')
    _add_paths(p, 'report_dir')
    p.add_argument('--input', required=True, help='JSONL with summary and generated fields')
    p.add_argument('--tokenization', choices=('default', 'whitespace'), default='default')

    p = sub.add_parser('score', help='SemSim score of a reference / candidate pair')
    _add_paths(p, 'vocab', 'scorer', 'report_dir')
    p.add_argument('--reference', required=True)
    p.add_argument('--candidate', required=True)

    p = sub.add_parser('gradcheck', help='finite-difference check of a seeded toy model')
    _add_paths(p, 'report_dir')
    p.add_argument('--precision', type=int, choices=(32, 64), default=64)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--vocab-size', type=int, default=64)
    p.add_argument('--samples-per-tensor', type=int, default=4, help='coordinates per tensor, 0 checks all')

    p = sub.add_parser('stats', help='human-evaluation aggregation and t-tests')
    _add_paths(p, 'report_dir')
    p.add_argument('--input', required=True, help='response CSV')
    p.add_argument('--truncate-pct', type=float, default=0.0)
    p.add_argument('--sweep', action='store_true', help='truncation sweep 0..40%% in steps of 5')
    p.add_argument('--pairs', default='ours:baseline,ours:reference')
    p.add_argument('--plot', action='store_true', help='save the sweep figure')
    return parser


def config_overrides(args: argparse.Namespace) -> Dict[str, str]:
    overrides = {}
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None and not (args.command == 'gradcheck' and flag in ('precision', 'seed')):
            overrides[key] = str(value)
    return overrides


# ---------------------------------------------------------------------------
# Shared steps

def _vocab(config: AppConfig):
    path = Path(config.paths.vocab)
    if not path.exists():
        raise DataError(f"vocabulary not found: {path} (run `semsim vocab` first)")
    vocab = load_vocab(path)
    logger.info(f"   ✅ Vocabulary: {vocab.size} tokens, {len(vocab.merges)} merges")
    return vocab


def _records(path, required, results: Dict) -> Iterator[DatasetRecord]:
    """Stream preprocessed records; counts and malformed lines are reported once the file is consumed"""
    if not Path(path).exists():
        raise DataError(f"input file not found: {path}")
    return _stream(path, required, results)


def _stream(path, required, results: Dict) -> Iterator[DatasetRecord]:
    errors: List[DataError] = []
    count = 0
    for record in stream_records(path, required=required, errors=errors):
        count += 1
        yield record
    results['errors'].extend(f"{Path(path).name}: {e}" for e in errors)
    logger.info(f"   📥 {count} records from {path}" + (f" ({len(errors)} malformed)" if errors else ''))


def _training_samples(config: AppConfig, vocab, results: Dict):
    records = _records(config.paths.data, ('document', 'summary'), results)
    samples = filter_long_samples(tokenize_records(records, vocab), config.train)
    results['metrics']['samples'] = len(samples)
    return samples


def _scorer_for(config: AppConfig, vocab):
    path = Path(config.paths.scorer)
    if path.exists():
        scorer = load_scorer(path)
    else:
        logger.warning(f"   ⚠️ Scorer checkpoint {path} not found, using a seeded random scorer")
        scorer = init_scorer(replace(config.scorer, vocab_size=vocab.size, pad_id=vocab.pad_id, bos_id=vocab.bos_id,
                                     precision=config.model.precision), seed=config.train.seed + 1)
    if scorer.lm.config.vocab_size != vocab.size:
        raise ConfigError(f"scorer vocabulary {scorer.lm.config.vocab_size} does not match {vocab.size}")
    return scorer


# ---------------------------------------------------------------------------
# Subcommands

def cmd_vocab(args, config: AppConfig, results: Dict) -> None:
    logger.info(f"\n🔤 Step 1: Training BPE on {config.paths.data}...")
    records = _records(config.paths.data, ('document', 'summary'), results)
    vocab = train_bpe(corpus_texts(records), config.tokenizer.target_vocab)
    path = save_vocab(vocab, config.paths.vocab)
    results['files_created'].append(str(path))
    results['metrics'].update(vocab_size=vocab.size, merges=len(vocab.merges))
    logger.info(f"   📁 Saved vocabulary: {path}")


def cmd_pretrain(args, config: AppConfig, results: Dict) -> None:
    logger.info("\n📋 Step 1: Loading vocabulary and data...")
    vocab = _vocab(config)
    samples = _training_samples(config, vocab, results)
    logger.info("\n🏋️ Step 2: Pretrain-lite...")
    model = init_model(config.model_config(vocab), seed=config.train.seed)
    scorer = pretrain_lite(samples, model, config.train, pooling=config.scorer.pooling)
    path = save_scorer(scorer, config.paths.scorer, extra={'pretrain_epochs': config.train.epochs})
    results['files_created'].append(str(path))
    results['metrics']['scorer_tensors'] = len(scorer.parameters())


def cmd_train(args, config: AppConfig, results: Dict) -> None:
    logger.info("\n📋 Step 1: Loading vocabulary and data...")
    vocab = _vocab(config)
    samples = _training_samples(config, vocab, results)

    logger.info("\n🧱 Step 2: Building model...")
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        model, scorer = resume.model, resume.scorer
        if scorer is None and config.train.objective != 'ml_only':
            scorer = _scorer_for(config, vocab)
    else:
        model = init_model(config.model_config(vocab), seed=config.train.seed)
        scorer = _scorer_for(config, vocab) if config.train.objective != 'ml_only' else None

    logger.info(f"\n🏋️ Step 3: Training ({config.train.objective})...")
    last = run_training(samples, model, scorer, config.train, resume=resume,
                        checkpoint_dir=config.paths.checkpoints)
    if last is None:
        logger.warning("   ⚠️ No optimizer update was applied")
        return
    path = save_checkpoint(last, Path(config.paths.checkpoints) / FINAL_CHECKPOINT)
    results['files_created'].append(str(path))
    results['metrics'].update(steps=last.step, **{f"last_{k}": v for k, v in last.losses.items()})


def cmd_generate(args, config: AppConfig, results: Dict) -> None:
    logger.info("\n📋 Step 1: Loading model...")
    vocab = _vocab(config)
    checkpoint = args.checkpoint or str(Path(config.paths.checkpoints) / FINAL_CHECKPOINT)
    model = load_model(checkpoint)
    search = replace(config.search, trigram_block=not args.no_trigram_block)
    counts = {'generated': 0}

    def summaries():
        for record in _records(args.input, ('document',), results):
            try:
                doc = encode(record.document, vocab, role='document')
                seq = greedy_decode(doc, model, search) if args.greedy else beam_search(doc, model, search)
            except SemSimError as e:
                error_msg = f"Error decoding {record.id}: {e}"
                logger.error(f"   ❌ {error_msg}")
                results['errors'].append(error_msg)
                continue
            row = record.to_dict()
            row['generated'] = decode(seq, vocab)
            counts['generated'] += 1
            yield row

    logger.info(f"\n✍️ Step 2: Decoding {args.input} (beam {search.beam}, len {search.min_len}-{search.max_len})...")
    path = write_jsonl(args.output, summaries())
    results['files_created'].append(str(path))
    results['metrics']['generated'] = counts['generated']
    logger.info(f"   📁 Saved {counts['generated']} summaries to {path}")


def cmd_evaluate(args, config: AppConfig, results: Dict) -> None:
    logger.info(f"\n📊 Step 1: Scoring pairs from {args.input}...")
    records = _records(args.input, ('summary', 'generated'), results)
    report = evaluate_stream(((r.id, r.summary, r.generated) for r in records), tokenization=args.tokenization)
    print(report.table())

    reports = Path(config.paths.reports)
    stamp = results['execution_id']
    parquet = report.to_parquet(reports / f"rouge_{stamp}.parquet")
    summary = reports / f"rouge_{stamp}.json"
    summary.write_text(json.dumps(report.summary(), indent=2))
    results['files_created'].extend([str(parquet), str(summary)])
    results['metrics'].update({k: v for k, v in report.summary().items() if k.endswith('_f1') or k == 'samples'})


def cmd_score(args, config: AppConfig, results: Dict) -> None:
    vocab = _vocab(config)
    scorer = _scorer_for(config, vocab)
    reference = encode(preprocess(DatasetRecord(document=args.reference)).document, vocab, role='reference')
    candidate = encode(preprocess(DatasetRecord(document=args.candidate)).document, vocab, role='generated')
    score = score_texts(reference, candidate, scorer.lm, scorer.head)
    print(f"Score_semsim = {score:.6f}")
    print(f"L_semsim     = {-score:.6f}")
    results['metrics'].update(score=score, loss=-score)


def cmd_gradcheck(args, config: AppConfig, results: Dict) -> None:
    logger.info(f"\n🧮 Step 1: Gradient check at {args.precision}-bit...")
    samples = args.samples_per_tensor or None
    model, scorer = toy_setup(precision=args.precision, seed=args.seed, vocab_size=args.vocab_size,
                              pooling=config.scorer.pooling, base=config.model)
    reports = run_gradcheck(model, scorer, precision=args.precision, seed=args.seed, samples_per_tensor=samples)
    rows = [[r.loss, f"{r.max_rel_error:.3e}", r.worst_param, r.coordinates] for r in reports]
    print(tabulate(rows, headers=['loss', 'max rel error', 'worst tensor', 'coordinates'], tablefmt='github'))
    worst = max(r.max_rel_error for r in reports)
    print(f"max relative error: {worst:.3e} (tolerance {TOLERANCE[args.precision]:.0e})")
    results['metrics'].update(max_rel_error=worst)
    for report in reports:
        if not report.passed(args.precision):
            results['errors'].append(f"{report.loss}: relative error {report.max_rel_error:.3e} in "
                                     f"{report.worst_param} exceeds {TOLERANCE[args.precision]:.0e}")


def cmd_stats(args, config: AppConfig, results: Dict) -> None:
    logger.info("\n📋 Step 1: Loading responses...")
    frame = evalstats.load_responses(args.input)
    pairs = evalstats.parse_pairs(args.pairs)
    reports = Path(config.paths.reports)
    stamp = results['execution_id']

    logger.info(f"\n📊 Step 2: Aggregating (truncate {args.truncate_pct:g}%)...")
    truncated = evalstats.truncate_by_time(frame, args.truncate_pct)
    report = evalstats.aggregate(truncated, pairs)
    removed = evalstats.removed_workers_by_team(frame, truncated)
    print(tabulate(report.means.round(2), headers='keys', tablefmt='github'))
    if not report.p_values.empty:
        print()
        print(tabulate(report.p_values, headers='keys', tablefmt='github', showindex=False, floatfmt='.4g'))
    if removed:
        print()
        print(tabulate(sorted(removed.items()), headers=['team', 'removed workers'], tablefmt='github'))
    means_path = reports / f"stats_{stamp}.csv"
    report.means.to_csv(means_path)
    results['files_created'].append(str(means_path))
    results['metrics'].update(responses=report.retained_responses, workers=report.retained_workers)

    if args.sweep:
        logger.info("\n📈 Step 3: Truncation sweep...")
        table = evalstats.sweep_table(evalstats.truncation_sweep(frame, evalstats.SWEEP_PERCENTS, pairs))
        print()
        print(tabulate(table, headers='keys', tablefmt='github', showindex=False, floatfmt='.4g'))
        sweep_path = reports / f"sweep_{stamp}.csv"
        table.to_csv(sweep_path, index=False)
        results['files_created'].append(str(sweep_path))
        if args.plot:
            results['files_created'].append(str(plot_sweep(table, reports / f"sweep_{stamp}.png")))


COMMANDS: Dict[str, Callable] = {
    'vocab': cmd_vocab,
    'pretrain': cmd_pretrain,
    'train': cmd_train,
    'generate': cmd_generate,
    'evaluate': cmd_evaluate,
    'score': cmd_score,
    'gradcheck': cmd_gradcheck,
    'stats': cmd_stats,
}


# ---------------------------------------------------------------------------
# Runner

def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format='%(message)s', force=True)


def save_execution_summary(results: Dict, report_dir) -> str:
    path = Path(report_dir) / f"execution_{results['execution_id']}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(results, indent=2, default=str))
    logger.info(f"   📁 Summary saved to: {path}")
    return str(path)


def run_command(argv: Optional[List[str]] = None) -> int:
    """Parse, dispatch and report one subcommand; returns the exit status"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    configure_logging(args.verbose)
    start_time = datetime.now()
    logger.info("=" * 60)
    logger.info(f"🚀 SEMSIM {args.command.upper()} STARTED")
    logger.info(f"⏰ Start Time: {start_time.isoformat()}")
    logger.info("=" * 60)

    results = {
        'execution_id': f"{args.command}-{start_time.strftime('%Y%m%d-%H%M%S-%f')}",
        'command': args.command,
        'start_time': start_time.isoformat(),
        'end_time': None,
        'duration_seconds': None,
        'success': True,
        'metrics': {},
        'errors': [],
        'files_created': [],
    }
    report_dir = PathsConfig().reports
    try:
        config = load_config(args.config, config_overrides(args))
        report_dir = config.paths.reports
        config.paths.ensure_output_dirs()
        logger.info(f"   ✅ Configuration loaded ({config.source or 'defaults'})")
        with ad.precision(config.model.precision):
            COMMANDS[args.command](args, config, results)
    except SemSimError as e:
        logger.error(f"\n❌ {type(e).__name__}: {e}")
        results['errors'].append(f"{type(e).__name__}: {e}")
    except Exception as e:
        logger.error(f"\n❌ Fatal error: {str(e)}")
        logger.error(traceback.format_exc())
        results['errors'].append(f"Fatal error: {str(e)}")
    results['success'] = not results['errors']

    end_time = datetime.now()
    duration = (end_time - start_time).total_seconds()
    results['end_time'] = end_time.isoformat()
    results['duration_seconds'] = duration
    try:
        results['files_created'].append(save_execution_summary(results, report_dir))
    except OSError as e:
        logger.error(f"   ❌ Could not save execution summary: {e}")

    logger.info("\n" + "=" * 60)
    logger.info("📈 EXECUTION SUMMARY")
    logger.info("=" * 60)
    logger.info(f"⏱️  Duration: {duration:.2f} seconds")
    for key, value in results['metrics'].items():
        logger.info(f"📊 {key}: {value:.6g}" if isinstance(value, float) else f"📊 {key}: {value}")
    logger.info(f"📁 Files Created: {len(results['files_created'])}")
    logger.info(f"❌ Errors: {len(results['errors'])}")
    logger.info(f"✅ Status: {'SUCCESS' if results['success'] else 'FAILED'}")
    logger.info("=" * 60)
    return 0 if results['success'] else 1


def main() -> None:
    raise SystemExit(run_command())
