import csv
import json

from replaybench.report import (build_report, render_fairness_chart,
                                render_reward_curves, write_rows)


def curve_csv(path, n=20):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mean_cumulative_reward", "ci_half_width",
                         "seed_1"])
        for t in range(n):
            writer.writerow([t, 0.3 + t / 100, 0.05, 0.3])
    return path


def sample_slices():
    return [
        {"attribute": "device", "value": "mobile", "metric": "tpr",
         "estimate": 0.4, "ci_low": 0.3, "ci_high": 0.5, "support": 100,
         "low_support": False},
        {"attribute": "device", "value": "desktop", "metric": "tpr",
         "estimate": 0.35, "ci_low": 0.2, "ci_high": 0.5, "support": 20,
         "low_support": True},
    ]


def test_render_reward_curves_writes_svg(tmp_path):
    c = curve_csv(tmp_path / "curve.csv")
    out = tmp_path / "curves.svg"
    render_reward_curves({"random": str(c)}, str(out))
    assert out.read_text().lstrip().startswith("<?xml")


def test_render_fairness_chart(tmp_path):
    out = tmp_path / "f.svg"
    assert render_fairness_chart(sample_slices(), "tpr", str(out)) is True
    assert out.exists()
    assert render_fairness_chart(sample_slices(), "nope", str(out)) is False


def test_build_report_embeds_everything(tmp_path):
    c = curve_csv(tmp_path / "curve.csv")
    rows = [{"agent": "random", "ndcg@5": 0.21, "ips": 0.3}]
    page = build_report(str(tmp_path / "rep"), "Task demo",
                        {"random": str(c)}, rows, sample_slices())
    html = open(page).read()
    assert "Task demo" in html
    assert "ndcg@5" in html
    assert html.count("<svg") >= 2  # reward curve + at least one fairness


def test_build_report_without_artifacts(tmp_path):
    page = build_report(str(tmp_path / "rep"), "Empty", {}, [], [])
    assert "Empty" in open(page).read()


def test_write_rows_roundtrip(tmp_path):
    rows = [{"a": 1, "b": 0.5}, {"a": 2, "c": "x"}]
    write_rows(rows, str(tmp_path / "rows"))
    assert json.load(open(tmp_path / "rows.json")) == rows
    with open(tmp_path / "rows.csv") as fh:
        parsed = list(csv.DictReader(fh))
    assert parsed[0]["a"] == "1"
    assert set(parsed[1].keys()) == {"a", "b", "c"}
