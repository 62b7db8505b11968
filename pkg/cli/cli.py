"""Interface en ligne de commande du laboratoire self-model.

Sous-commandes : collect, fit-model, train, eval, sweep, report, transfer,
trace et verify. Codes de sortie : 0 succès, 1 erreur d'utilisation,
2 échec à l'exécution. Les résultats sont écrits sous un nom temporaire puis
renommés ; les messages vont sur la sortie d'erreur.
"""

__copyright__ = "Copyright (C) 2024 Grostim"
__license__ = "GNU GPLv2"

import argparse
import io
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from .. import __version__
from ..crawler.crawler import TASKS, WALK, CrawlerEnv, make_task
from ..dyna.dyna import (
    curve_csv,
    run_sweep,
    run_transfer,
    sweep_csv,
    trace_csv,
    transfer_csv,
)
from ..myutils import (
    atomic_write_bytes,
    atomic_write_text,
    format_float,
    mix_seed,
)
from ..ppo.ppo import (
    PolicyValuePair,
    PpoError,
    evaluate_policy,
    read_agent,
    record_trace,
    train,
    write_agent,
)
from ..selfmodel.selfmodel import (
    SelfModelEnv,
    SelfModelError,
    collect_random,
    fit_self_model,
    horizon_errors,
    read_dataset,
    read_model,
    write_dataset,
    write_model,
)
from .config import CONFIG_NAME, RunManifest, load_config
from .report import ReportError, emit_report, trace_svg

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
SWEEP_NAME = "sweep.csv"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog} : erreur : {message}\n")


def _write_binary(path: str, writer, obj) -> None:
    buffer = io.BytesIO()
    writer(buffer, obj)
    atomic_write_bytes(path, buffer.getvalue())


def _read_binary(path: str, reader):
    with open(path, "rb") as handle:
        return reader(handle)


def _curve_path(out: str) -> str:
    return os.path.splitext(out)[0] + ".curve.csv"


def _check_agent(agent: PolicyValuePair, config) -> None:
    if (agent.obs_dim, agent.act_dim) != (config.obs_dim, config.dof):
        raise PpoError(
            f"Agent {agent.obs_dim}x{agent.act_dim} incompatible avec "
            f"obs_dim={config.obs_dim}, dof={config.dof}"
        )


def _start_run(out: str, command: str, config) -> RunManifest:
    os.makedirs(out, exist_ok=True)
    text = config.to_ini()
    atomic_write_text(os.path.join(out, CONFIG_NAME), text)
    manifest = RunManifest(command, text)
    manifest.write(out)
    return manifest


def cmd_collect(args) -> int:
    config = load_config(args.config, args.set)
    crawler = config.crawler_config(args.env)
    episode_len = args.episode_len or config.get("harness.collect_episode_len")
    data = collect_random(crawler, args.n, episode_len, args.seed)
    _write_binary(args.out, write_dataset, data)
    logger.info(
        "%d transitions (obs_dim=%d, act_dim=%d) écrites dans %s",
        len(data),
        data.obs_dim,
        data.act_dim,
        args.out,
    )
    return EXIT_OK


def cmd_fit_model(args) -> int:
    if args.horizon_errors and not args.env:
        args.parser.error("--horizon-errors demande --env")
    config = load_config(args.config, args.set)
    data = _read_binary(args.data, read_dataset)
    model = fit_self_model(data, config.fit_config(args.seed))
    _write_binary(args.out, write_model, model)
    logger.info(
        "Self-model écrit dans %s (perte de validation %.6g, %d époques)",
        args.out,
        model.report.validation_loss,
        model.report.epochs_run,
    )
    if args.horizon_errors:
        errors = horizon_errors(
            model,
            config.crawler_config(args.env),
            args.horizon_errors,
            seed=args.seed,
        )
        print("k,error")
        for k, error in enumerate(errors, start=1):
            print(f"{k},{format_float(error)}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.mode == "dyna" and not (args.data or args.model):
        args.parser.error("--mode dyna demande --data ou --model")
    config = load_config(args.config, args.set)
    crawler = config.crawler_config(args.env)
    task = make_task(args.task, crawler)
    if args.mode == "mfrl":
        env = CrawlerEnv(crawler, task, args.seed, debug=args.debug)
    else:
        if args.model:
            model = _read_binary(args.model, read_model)
        else:
            data = _read_binary(args.data, read_dataset)
            model = fit_self_model(data, config.fit_config(args.seed))
        if (model.obs_dim, model.act_dim) != (crawler.obs_dim, crawler.dof):
            raise SelfModelError(
                f"Self-model {model.obs_dim}x{model.act_dim} incompatible "
                f"avec {args.env}"
            )
        seed_env = CrawlerEnv(crawler, task, mix_seed(args.seed, 1))
        env = SelfModelEnv(model, task, crawler, seed_env, debug=args.debug)
    agent = PolicyValuePair.create(
        crawler.obs_dim, crawler.dof, np.random.default_rng(args.seed)
    )
    result = train(
        agent, env, config.ppo_config(args.budget), args.seed, task
    )
    _write_binary(args.out, write_agent, agent)
    atomic_write_text(_curve_path(args.out), curve_csv(result.curve))
    logger.info("Agent %s écrit dans %s", args.mode, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_config(args.config, args.set)
    crawler = config.crawler_config(args.env)
    agent = _read_binary(args.agent, read_agent)
    _check_agent(agent, crawler)
    result = evaluate_policy(
        agent, crawler, make_task(args.task, crawler), args.episodes, args.seed
    )
    print(format_float(result.mean_return))
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = load_config(args.config, args.set)
    out = args.out or config.get("experiment.output_dir")
    manifest = _start_run(out, "sweep", config)
    result = run_sweep(config.sweep_config(), args.jobs, args.progress)
    atomic_write_text(
        os.path.join(out, SWEEP_NAME),
        sweep_csv(result, config.get("harness.record_wall_time")),
    )
    for cell in result.cells:
        for arm, curve in (
            ("mfrl", cell.mfrl_curve),
            ("selfmodel", cell.selfmodel_curve),
        ):
            name = f"{cell.task}_{cell.preset}_{cell.budget}_{cell.seed}"
            atomic_write_text(
                os.path.join(out, "curves", f"{name}_{arm}.csv"),
                curve_csv(curve),
            )
    manifest.finalize(out)
    logger.info(
        "Balayage écrit dans %s : %d cellules, %d en échec",
        out,
        len(result.cells),
        len(result.failures),
    )
    return EXIT_OK


def cmd_report(args) -> int:
    sweep_path = os.path.join(args.runs, SWEEP_NAME)
    if not os.path.isfile(sweep_path):
        raise ReportError(f"Aucun balayage dans {args.runs}")
    emit_report(
        sweep_path,
        args.csv or os.path.join(args.runs, f"regression_{args.task}.csv"),
        args.svg or os.path.join(args.runs, f"report_{args.task}.svg"),
        args.task,
    )
    return EXIT_OK


def cmd_transfer(args) -> int:
    config = load_config(args.config, args.set)
    manifest = _start_run(args.out, "transfer", config)
    result = run_transfer(
        args.env,
        args.budget,
        args.seed,
        ppo_budget_model=config.get("harness.ppo_budget_model"),
        ppo=config.ppo_config(),
        fit=config.fit_config(),
        eval_episodes=config.get("harness.eval_episodes"),
        collect_episode_len=config.get("harness.collect_episode_len"),
        crawler_overrides=config.crawler_overrides(),
    )
    atomic_write_text(
        os.path.join(args.out, "transfer.csv"), transfer_csv(result)
    )
    atomic_write_text(
        os.path.join(args.out, "trace.csv"), trace_csv(result.traces)
    )
    atomic_write_text(
        os.path.join(args.out, "trace.svg"),
        trace_svg(result.traces, f"Saut, {args.env}"),
    )
    manifest.finalize(args.out)
    return EXIT_OK


def cmd_trace(args) -> int:
    config = load_config(args.config, args.set)
    crawler = config.crawler_config(args.env)
    agent = None
    if args.agent:
        agent = _read_binary(args.agent, read_agent)
        _check_agent(agent, crawler)
    trace = record_trace(
        agent, crawler, make_task(args.task, crawler), args.seed
    )
    traces = {"none" if agent is None else "agent": trace}
    atomic_write_text(args.out, trace_csv(traces))
    if args.svg:
        atomic_write_text(args.svg, trace_svg(traces))
    logger.info("Trace de %d pas, retour %.4f", len(trace.z) - 1,
                trace.total_return)
    return EXIT_OK


def cmd_verify(args) -> int:
    manifest = RunManifest.read(args.runs)
    problems = manifest.verify(args.runs)
    for problem in problems:
        logger.error("%s : %s", args.runs, problem)
    if problems:
        return EXIT_RUNTIME
    logger.info("%s intact : %d fichiers", args.runs, len(manifest.files))
    return EXIT_OK


def _config_options(parser) -> None:
    parser.add_argument("--config", help="Document INI de configuration")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.CLE=VALEUR",
        help="Surcharge d'une clé de configuration (répétable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="selfmodellab",
        description="Dyna par self-model contre PPO sans modèle",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "--debug", action="store_true", help="Messages de débogage"
    )
    commands = parser.add_subparsers(dest="command", metavar="COMMANDE")
    commands.required = True

    def command(name, handler, help_text):
        sub = commands.add_parser(name, help=help_text)
        sub.set_defaults(handler=handler, parser=sub)
        _config_options(sub)
        return sub

    sub = command("collect", cmd_collect, "Collecte de transitions aléatoires")
    sub.add_argument("--env", required=True, help="Préréglage crawler")
    sub.add_argument("--n", type=int, required=True)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--episode-len", type=int, default=0)
    sub.add_argument("--out", required=True)

    sub = command("fit-model", cmd_fit_model, "Apprentissage du self-model")
    sub.add_argument("--data", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--env", help="Préréglage pour --horizon-errors")
    sub.add_argument(
        "--horizon-errors",
        type=int,
        default=0,
        metavar="K",
        help="Affiche l'erreur de prédiction à 1..K pas",
    )

    sub = command("train", cmd_train, "Entraînement PPO")
    sub.add_argument("--mode", choices=("mfrl", "dyna"), required=True)
    sub.add_argument("--env", required=True)
    sub.add_argument("--task", choices=TASKS, default=WALK)
    sub.add_argument("--budget", type=int, required=True)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--data", help="Jeu de transitions (mode dyna)")
    sub.add_argument("--model", help="Self-model déjà appris (mode dyna)")
    sub.add_argument("--out", required=True)

    sub = command("eval", cmd_eval, "Évaluation sur l'environnement réel")
    sub.add_argument("--agent", required=True)
    sub.add_argument("--env", required=True)
    sub.add_argument("--task", choices=TASKS, default=WALK)
    sub.add_argument("--episodes", type=int, default=10)
    sub.add_argument("--seed", type=int, default=0)

    sub = command("sweep", cmd_sweep, "Balayage préréglages x budgets")
    sub.add_argument("--out", help="Répertoire de résultats")
    sub.add_argument("--jobs", type=int, default=1)
    sub.add_argument(
        "--progress", action="store_true", help="Barre de progression"
    )

    sub = commands.add_parser("report", help="Régression et figure")
    sub.set_defaults(handler=cmd_report, parser=sub)
    sub.add_argument("--runs", required=True)
    sub.add_argument("--csv")
    sub.add_argument("--svg")
    sub.add_argument("--task", choices=TASKS, default=WALK)

    sub = command("transfer", cmd_transfer, "Transfert marche -> saut")
    sub.add_argument("--env", required=True)
    sub.add_argument("--budget", type=int, required=True)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", required=True)

    sub = command("trace", cmd_trace, "Trace du corps sur un épisode réel")
    sub.add_argument("--agent", help="Agent ; action nulle sinon")
    sub.add_argument("--env", required=True)
    sub.add_argument("--task", choices=TASKS, default=WALK)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", required=True)
    sub.add_argument("--svg")

    sub = commands.add_parser("verify", help="Vérifie un répertoire")
    sub.set_defaults(handler=cmd_verify, parser=sub)
    sub.add_argument("--runs", required=True)
    return parser


def configure_logging(debug: bool) -> None:
    level = logging.DEBUG if debug else logging.INFO
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(levelname)s %(name)s : %(message)s",
    )
    logging.getLogger().setLevel(level)


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    """
    Analyse les arguments et exécute la sous-commande.

    Args:
        argv (Optional[List[str]]): Les arguments ; sys.argv[1:] par défaut.

    Returns:
        int: 0 succès, 1 erreur d'utilisation, 2 échec à l'exécution.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        configure_logging(args.debug)
        return args.handler(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (ValueError, OSError) as exc:
        logger.error("%s : %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_dispatch())
