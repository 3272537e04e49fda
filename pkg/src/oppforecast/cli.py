"""Command line entry point: ``oppforecast <command> ...``.

Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import ingest, metrics, pipeline, synth
from .calibrate import CalibrationError
from .enhance import EnhanceError
from .ensemble import CVReport
from .pipeline import ArtifactError, PipelineError

log = logging.getLogger("oppforecast")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
VALIDATION_ERRORS = (ingest.IngestError, ArtifactError, CalibrationError, EnhanceError, FileNotFoundError)


def _write_text(path, text: str) -> None:
    if str(path) == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_gen_data(args) -> int:
    cfg = synth.SynthConfig(
        n_records=args.n,
        won_prior=args.won_prior,
        signal_strength=args.signal,
        noise_user_prediction=args.noise,
        missing_rate=args.missing_rate,
        open_fraction=args.open_fraction,
        seed=args.seed,
    )
    rs = synth.generate(cfg)
    ingest.write_csv(rs, args.out)
    n_won = sum(1 for r in rs if r.status is ingest.Status.WON)
    log.info("wrote %d records (%d won, %d open) to %s", len(rs), n_won, len(rs.open()), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = pipeline.PipelineConfig(
        seed=args.seed,
        train_fraction=args.train_fraction,
        cv_folds=args.folds,
        calibrate_on=args.calibrate_on,
        n_trees=args.trees,
        stamp_time=args.timestamp,
    )
    artifact = pipeline.run_ml_pipeline(args.data, cfg, progress=log.info)
    pipeline.save_artifact(artifact, args.out)
    if args.cv_report:
        _write_text(args.cv_report, CVReport.from_dict(artifact.training_metadata["cv_report"]).to_csv())
    test = artifact.training_metadata.get("test_metrics")
    if test:
        log.info("test accuracy %.4f, AUC %.4f", test["ml"]["accuracy"], test["ml"]["auc"])
    log.info("artifact %s written to %s", artifact.fingerprint[:12], args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    artifact = pipeline.load_artifact(args.model)
    report = pipeline.run_prediction_pipeline(args.data, artifact, drop_missing=args.drop_missing)
    _write_text(args.out, report.to_csv())
    if report.metrics:
        print(metrics.format_table(report.metrics["ml"], report.metrics["user"]))
    return EXIT_OK


def _evaluation_records(artifact, data_path, which: str):
    rs = ingest.read_csv(data_path)
    if which == "auto":
        same = pipeline.file_fingerprint(data_path) == artifact.training_metadata.get("data_fingerprint")
        which = "test" if same else "all"
    return pipeline.split_for_artifact(artifact, rs, which), which


def _training_summary(artifact, top: int = 5) -> str:
    rep = CVReport.from_dict(artifact.training_metadata["cv_report"])
    ranked = sorted(enumerate(rep.members, start=1), key=lambda m: -m[1][1].mean)
    lines = ["Cross-validated training accuracy"]
    if rep.ensemble is not None:
        lines.append(f"  {'ensemble (soft vote)':<44}{rep.ensemble.mean:.4f}")
    for i, (hp, res) in ranked[:top]:
        lines.append(f"  {i:>2}. {hp.label():<40}{res.mean:.4f}")
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    artifact = pipeline.load_artifact(args.model)
    rs, which = _evaluation_records(artifact, args.data, args.split)
    ev = pipeline.evaluate_records(artifact, rs)
    c, m = ev["confusion"], ev["monetary_confusion"]
    out = [
        _training_summary(artifact),
        "",
        "Decision boundaries",
        artifact.boundary_grid.format_table(),
        "",
        f"Performance on {ev['n_records']} records ({which} split)",
        metrics.format_table(ev["ml"], ev["user"]),
        "",
        f"Counts     TP={c.tp} TN={c.tn} FP={c.fp} FN={c.fn}",
        f"Values     TP_m={m.tp_m:.2f} TN_m={m.tn_m:.2f} FP_m={m.fp_m:.2f} FN_m={m.fn_m:.2f}",
    ]
    print("\n".join(out))
    if args.json:
        doc = {k: (v.to_dict() if hasattr(v, "to_dict") else v) for k, v in ev.items()
               if k in ("n_records", "ml", "ml_default_boundary", "user")}
        doc["split"] = which
        _write_text(args.json, json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    artifact = pipeline.load_artifact(args.model)
    rs = ingest.read_csv(args.data)
    if args.on != "all" and pipeline.file_fingerprint(args.data) != artifact.training_metadata.get("data_fingerprint"):
        raise ingest.ValidationError(
            f"--on {args.on} needs the training CSV (fingerprint mismatch); use --on all for other data")
    history = pipeline.split_for_artifact(artifact, rs, args.on)
    updated = pipeline.recalibrate(artifact, history)
    updated.training_metadata["calibrate_on"] = args.on
    pipeline.save_artifact(updated, args.out or args.model)
    print(updated.boundary_grid.format_table())
    return EXIT_OK


def cmd_serve(args) -> int:
    from .serve import serve

    artifact = pipeline.load_artifact(args.model)
    try:
        serve(artifact, args.addr)
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oppforecast", description="B2B opportunity win-probability toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic CRM CSV")
    g.add_argument("--n", type=int, default=25000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--won-prior", type=float, default=0.58)
    g.add_argument("--signal", type=float, default=3.0)
    g.add_argument("--noise", type=float, default=0.25, help="noise of the user-entered probability")
    g.add_argument("--missing-rate", type=float, default=0.009)
    g.add_argument("--open-fraction", type=float, default=0.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run the ML pipeline and save an artifact")
    t.add_argument("--data", required=True)
    t.add_argument("--seed", type=int, default=7)
    t.add_argument("--out", required=True)
    t.add_argument("--train-fraction", type=float, default=0.7)
    t.add_argument("--folds", type=int, default=10)
    t.add_argument("--trees", type=int, default=50)
    t.add_argument("--calibrate-on", choices=("train", "test"), default="train")
    t.add_argument("--cv-report", help="also write the per-member CV table as CSV")
    t.add_argument("--timestamp", action="store_true", help="record the creation time in the artifact")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="score records with a saved artifact")
    pr.add_argument("--data", required=True)
    pr.add_argument("--model", required=True)
    pr.add_argument("--out", required=True, help="report CSV path, or - for stdout")
    pr.add_argument("--drop-missing", action="store_true", help="skip records that cannot be scored")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="print training, boundary and test performance tables")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--split", choices=("auto", "test", "train", "all"), default="auto",
                   help="auto uses the held-out split when DATA is the training CSV")
    e.add_argument("--json", help="also write the metric reports as JSON")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("calibrate", help="recompute the decision boundaries of an artifact")
    c.add_argument("--model", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--on", choices=("train", "test", "all"), default="train")
    c.add_argument("--out", help="write here instead of overwriting --model")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("serve", help="run the JSON scoring endpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--addr", default="127.0.0.1:8080")
    s.set_defaults(func=cmd_serve)
    return p


def _is_validation(exc: BaseException) -> bool:
    if isinstance(exc, PipelineError):
        return isinstance(exc.cause, VALIDATION_ERRORS)
    return isinstance(exc, VALIDATION_ERRORS)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except Exception as exc:
        code = EXIT_INVALID if _is_validation(exc) else EXIT_RUNTIME
        print(f"error: {exc}", file=sys.stderr)
        if args.verbose:
            log.exception("details")
        return code


if __name__ == "__main__":
    sys.exit(main())
