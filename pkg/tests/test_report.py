from __future__ import annotations

import numpy as np
import pytest

from unsupos.metrics import evaluate_run
from unsupos.report import (
    format_ll_log,
    format_report_kv,
    format_report_table,
    save_contingency_figure,
    save_ll_figure,
    save_metric_figure,
    write_ll_log,
    write_report,
)


@pytest.fixture
def report():
    gold_dev = [[0, 1, 2], [1, 1, 0]]
    pred_dev = [[2, 0, 1], [0, 0, 2]]
    gold_test = [[0, 2], [1, 0]]
    pred_test = [[2, 1], [0, 2]]
    return evaluate_run(gold_dev, pred_dev, gold_test, pred_test)


HISTORY = [("fhmm", 0, -4.2), ("fhmm", 1, -3.917), ("crfae", 0, -5.0),
           ("pretrain", 1, -4.5), ("crfae", 1, -3.25)]


def test_table_layout(report):
    text = format_report_table(report)
    lines = text.splitlines()
    assert lines[0].split() == ["split", "M-1", "1-1", "VM", "H", "C", "tokens"]
    assert lines[1].startswith("dev")
    assert lines[2].startswith("test")
    # aligned: every metric column starts at the same offset in each row
    offsets = [lines[0].index(col) for col in ("M-1", "1-1", "VM")]
    for line in lines[1:3]:
        for start in offsets:
            assert line[start - 1] == " " and line[start] != " "
    assert text.endswith("\n")


def test_table_flags_unseen_indexes(report):
    # predicted index 3 appears only on test, never on dev
    gold = [[0, 1], [1, 0]]
    pred = [[0, 1], [1, 0]]
    flagged = evaluate_run(gold, pred, [[0, 1]], [[3, 1]], num_gold=2, num_pred=4)
    text = format_report_table(flagged)
    assert "unseen on dev: 3" in text
    assert "note: dev" not in text


def test_kv_format(report):
    text = format_report_kv(report)
    lines = text.splitlines()
    assert f"dev.m1={report['splits']['dev']['m1']:.4f}" in lines
    assert f"test.vm={report['splits']['test']['vm']:.4f}" in lines
    assert "dev.tokens=6" in lines
    assert "test.tokens=4" in lines
    assert all("=" in line for line in lines)


def test_write_report_contains_both_sections(tmp_path, report):
    path = tmp_path / "report.txt"
    write_report(report, str(path))
    text = path.read_text(encoding="utf-8")
    assert format_report_table(report) in text
    assert format_report_kv(report) in text


def test_ll_log_format(tmp_path):
    text = format_ll_log(HISTORY)
    lines = text.splitlines()
    assert lines[0] == "stage\tepoch\tll"
    assert lines[1] == "fhmm\t0\t-4.200000"
    assert lines[-1] == "crfae\t1\t-3.250000"
    path = tmp_path / "ll.tsv"
    write_ll_log(HISTORY, str(path))
    assert path.read_text(encoding="utf-8") == text


def test_figures_written_and_deterministic(tmp_path, report):
    cm = np.array([[10, 0, 2], [1, 8, 0]], dtype=np.int64)
    jobs = [
        (save_ll_figure, HISTORY),
        (save_contingency_figure, cm),
        (save_metric_figure, report),
    ]
    for k, (fn, arg) in enumerate(jobs):
        a = tmp_path / f"fig{k}_a.png"
        b = tmp_path / f"fig{k}_b.png"
        fn(arg, str(a))
        fn(arg, str(b))
        assert a.stat().st_size > 800  # a real rendered image, not a stub
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
