"""Line-delimited metrics records and their validator.

Every record is one JSON object per line carrying ``kind`` (round, attack
or summary), ``run_id``, ``timestamp`` and the payload fields of whichever
log produced it. Files are append-only; round indices within a run must be
monotone. ``validate_metrics_file`` re-parses a file and reports every
violation with its line number.
"""

from __future__ import annotations

import json
import time

__all__ = ["MetricsWriter", "validate_metrics_file"]

KINDS = ("round", "attack", "summary")


class MetricsWriter:
    """Append-only JSONL sink; usable as the trainers' metrics callback.

    ``fresh=True`` truncates an existing file first: a rerun is a new run,
    and stale records from a previous pass would break the per-run
    round-monotonicity contract.
    """

    def __init__(self, path, run_id: str, fresh: bool = False):
        self.path = path
        self.run_id = run_id
        self._fh = open(path, "w" if fresh else "a", encoding="utf-8")

    def emit(self, record: dict) -> None:
        if "kind" not in record:
            raise ValueError("metrics record must carry a 'kind' field")
        out = dict(record)
        out.setdefault("run_id", self.run_id)
        out.setdefault("timestamp", time.time())
        self._fh.write(json.dumps(out, sort_keys=True) + "\n")
        self._fh.flush()

    __call__ = emit

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def validate_metrics_file(path) -> list[str]:
    """Return a list of problems (empty when the file is valid)."""
    problems: list[str] = []
    last_round: dict[str, int] = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        return [f"{path}: cannot open: {exc}"]
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"line {lineno}: not valid JSON ({exc.msg})")
                continue
            if not isinstance(record, dict):
                problems.append(f"line {lineno}: record is not an object")
                continue
            kind = record.get("kind")
            if kind not in KINDS:
                problems.append(f"line {lineno}: unknown kind {kind!r}")
            for required in ("run_id", "timestamp"):
                if required not in record:
                    problems.append(f"line {lineno}: missing field {required!r}")
            if kind == "round":
                if "round" not in record:
                    problems.append(f"line {lineno}: round record missing 'round'")
                else:
                    rid = record.get("run_id", "")
                    t = record["round"]
                    if rid in last_round and t <= last_round[rid]:
                        problems.append(
                            f"line {lineno}: round {t} not after round {last_round[rid]}"
                        )
                    last_round[rid] = t
    return problems
