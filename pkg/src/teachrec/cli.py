"""Command-line entry points: train, evaluate, recommend, simulate, serve.

The CLI is a thin layer over the core package; ``recommend`` can also act
as a client against a running service via ``--server``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import gbdt
from .config import AppConfig
from .evaluation import (
    EvalConfig,
    eval_as_of,
    evaluate_all,
    load_external_scores,
    training_matrix,
)
from .features import FeatureExtractor, build_schema, stat_columns_of
from .labels import Polarity, build_labels
from .ranking import BoostParams, rank
from .simulator import (
    AffinitySamplingPolicy,
    OraclePolicy,
    RandomPolicy,
    RankerPolicy,
    WorldConfig,
    compare_policies,
    fit_ranker,
    generate_world,
    run_episode,
)
from .store import IngestError, ingest, load_courses, load_outcomes, load_people

logger = logging.getLogger(__name__)


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_data(config: AppConfig):
    for path in (config.courses_csv, config.outcomes_csv, config.students_csv, config.teachers_csv):
        if not os.path.exists(path):
            raise IngestError(f"required data file is missing: {path}")
    courses = load_courses(config.courses_csv)
    outcomes = load_outcomes(config.outcomes_csv)
    students = load_people(config.students_csv, "student_id")
    teachers = load_people(config.teachers_csv, "teacher_id")
    return ingest(courses, outcomes), students, teachers


def run_train(config: AppConfig) -> dict:
    """Full training pipeline; writes the model and schema files atomically."""
    store, students, teachers = _load_data(config)
    labels = build_labels(store)
    if not labels:
        raise IngestError("no labeled pairs: every student lacks an outcome")
    schema = build_schema(students, teachers, stat_columns_of(store), config.max_school_vocab)
    extractor = FeatureExtractor(store, schema, students, teachers)
    X, y = training_matrix(extractor, labels)
    model = gbdt.train(X, y, config.gbdt.to_params(config.seed), schema_fingerprint=schema.fingerprint)

    _atomic_write(config.model_path, model.to_bytes())
    _atomic_write(config.schema_path, schema.to_json().encode("utf-8"))
    return {
        "labels": len(labels),
        "positive_labels": sum(1 for l in labels if l.polarity is Polarity.POSITIVE),
        "negative_labels": sum(1 for l in labels if l.polarity is Polarity.NEGATIVE),
        "n_trees": len(model.trees),
        "final_training_mse": model.training_mse[-1],
        "model_path": config.model_path,
        "schema_path": config.schema_path,
        "schema_fingerprint": schema.fingerprint,
    }


def cmd_train(args) -> int:
    config = _config_from_args(args)
    summary = run_train(config)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_evaluate(args) -> int:
    config = _config_from_args(args)
    store, students, teachers = _load_data(config)
    eval_config = EvalConfig(
        k=args.k,
        threshold=args.threshold,
        sample_size=args.sample_size,
        seed=config.seed,
        gbdt=config.gbdt.to_params(config.seed),
        max_school_vocab=config.max_school_vocab,
    )
    external = {}
    for spec in args.external or []:
        name, _, path = spec.partition("=")
        if not path:
            raise IngestError("--external expects NAME=path.csv")
        external[name] = load_external_scores(path)
    report = evaluate_all(
        store, students, teachers, config.boost.to_params(), eval_config, external
    )
    os.makedirs(args.out_dir, exist_ok=True)
    text_path = os.path.join(args.out_dir, "report.txt")
    csv_path = os.path.join(args.out_dir, "report.csv")
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv_text())
    print(report.to_text(), end="")
    print(f"\nwrote {text_path} and {csv_path}")
    return 0


def cmd_recommend(args) -> int:
    config = _config_from_args(args)
    k = args.k or config.k
    if args.server:
        import httpx

        response = httpx.post(
            args.server.rstrip("/") + "/v1/recommendations",
            json={"student_id": args.student, "k": k},
            timeout=30.0,
        )
        print(json.dumps(response.json(), indent=2))
        return 0 if response.status_code == 200 else 1

    store, students, teachers = _load_data(config)
    with open(config.model_path, "rb") as fh:
        model = gbdt.GbdtModel.from_bytes(fh.read())
    if os.path.exists(config.schema_path):
        from .features import FeatureSchema

        with open(config.schema_path, encoding="utf-8") as fh:
            schema = FeatureSchema.from_json(fh.read())
    else:
        schema = build_schema(students, teachers, stat_columns_of(store), config.max_school_vocab)
    extractor = FeatureExtractor(store, schema, students, teachers)
    universe = tuple(sorted(set(teachers.ids()) | set(store.teachers())))
    slate = rank(
        args.student, universe, model, extractor, config.boost.to_params(), k, eval_as_of(store)
    )
    print(json.dumps(slate.to_dict(), indent=2))
    return 0


def cmd_simulate(args) -> int:
    world_config = WorldConfig(
        n_students=args.students,
        n_teachers=args.teachers,
        latent_dim=args.latent_dim,
        dropout_steepness=args.steepness,
        teacher_capacity=args.capacity,
        fraction_new_teachers=args.fraction_new,
        rng_seed=args.seed,
    )
    world = generate_world(world_config)

    # the historical log predates the new teachers joining the platform
    bootstrap = run_episode(
        world,
        AffinitySamplingPolicy(temperature=0.2, exclude_mask=world.new_teacher_mask),
        horizon=args.horizon,
        blocks_to_complete=args.blocks,
        rng_seed=args.seed + 1000,
        initial_teacher_courses=world.initial_teacher_courses,
    )
    model, extractor, as_of = fit_ranker(
        world,
        bootstrap.courses,
        bootstrap.outcomes,
        gbdt.TrainParams(n_trees=80, max_depth=3, min_samples_leaf=10, rng_seed=args.seed),
    )
    boost = BoostParams(alpha=args.boost_alpha)
    policies = {
        "random": RandomPolicy(),
        "oracle": OraclePolicy(),
        "ranker": RankerPolicy(model, extractor, as_of),
        "ranker+boost": RankerPolicy(model, extractor, as_of, boost=boost),
    }
    comparison = compare_policies(
        world,
        policies,
        episodes=args.episodes,
        horizon=args.horizon,
        blocks_to_complete=args.blocks,
        base_seed=args.seed,
        new_teacher_delta=boost.delta,
        initial_teacher_courses=world.initial_teacher_courses,
    )
    print(comparison.to_text(), end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(comparison.to_csv_text())
        print(f"wrote {args.out}")
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for name, policy in policies.items():
                run_episode(
                    world,
                    policy,
                    horizon=args.horizon,
                    blocks_to_complete=args.blocks,
                    rng_seed=args.seed,
                    trace=lambda event, _n=name: fh.write(
                        json.dumps({"policy": _n, **event}, separators=(",", ":")) + "\n"
                    ),
                )
        print(f"wrote {args.trace}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = _config_from_args(args)
    bind = args.bind or config.bind
    host, _, port = bind.rpartition(":")
    app = create_app(config)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level=config.log_level.lower())
    return 0


def _config_from_args(args) -> AppConfig:
    overrides = {}
    for key in ("seed", "model_path", "k"):
        if hasattr(args, key) and getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    # recommend/evaluate take k as a command flag, not a config override
    overrides.pop("k", None)
    return AppConfig.load(getattr(args, "config", None), **overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teachrec",
        description="Teacher recommendation pipeline: pseudo labels, boosted-tree "
        "ranking, novelty boost, evaluation, and marketplace simulation.",
    )
    parser.add_argument("--config", help="path to a JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="build labels, train the ranker, write the model file")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--model-path", dest="model_path", default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="run the offline protocol and write the report")
    p_eval.add_argument("--k", type=int, default=200)
    p_eval.add_argument("--threshold", type=float, default=0.5)
    p_eval.add_argument("--sample-size", dest="sample_size", type=int, default=None)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--out-dir", dest="out_dir", default="artifacts")
    p_eval.add_argument(
        "--external",
        action="append",
        metavar="NAME=CSV",
        help="add an externally scored model row (CSV of student_id,teacher_id,score)",
    )
    p_eval.set_defaults(func=cmd_evaluate)

    p_rec = sub.add_parser("recommend", help="print the top-K slate for one student")
    p_rec.add_argument("--student", required=True)
    p_rec.add_argument("--k", type=int, default=None)
    p_rec.add_argument("--server", help="query a running service instead of local files")
    p_rec.set_defaults(func=cmd_recommend)

    p_sim = sub.add_parser("simulate", help="compare matching policies on a synthetic marketplace")
    p_sim.add_argument("--students", type=int, default=300)
    p_sim.add_argument("--teachers", type=int, default=120)
    p_sim.add_argument("--latent-dim", dest="latent_dim", type=int, default=8)
    p_sim.add_argument("--steepness", type=float, default=8.0)
    p_sim.add_argument("--capacity", type=int, default=8)
    p_sim.add_argument("--fraction-new", dest="fraction_new", type=float, default=0.15)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--episodes", type=int, default=3)
    p_sim.add_argument("--horizon", type=int, default=30)
    p_sim.add_argument("--blocks", type=int, default=4)
    p_sim.add_argument(
        "--boost-alpha",
        dest="boost_alpha",
        type=float,
        default=0.2,
        help="novelty boost strength for the boosted ranker policy",
    )
    p_sim.add_argument("--out", help="write the comparison table as CSV")
    p_sim.add_argument("--trace", help="write a JSONL event trace")
    p_sim.set_defaults(func=cmd_simulate)

    p_serve = sub.add_parser("serve", help="run the HTTP recommendation service")
    p_serve.add_argument("--bind", default=None, help="host:port (default from config)")
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config_level = os.environ.get("TEACHREC_LOG_LEVEL", "INFO")
    logging.basicConfig(level=config_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (IngestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
