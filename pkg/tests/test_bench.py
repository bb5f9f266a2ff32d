import json
import shutil

import pytest

from rgbwkit.bench import (
    AlgoResult,
    BenchmarkReport,
    DatasetError,
    THREADS_ENV,
    default_workers,
    emit_report,
    extrapolate_runtime,
    ingest,
    render_markdown,
    run_benchmark,
    score_predictions,
)
from rgbwkit.cfa import read_mraw, write_mraw
from rgbwkit.metrics import MetricRecord, aggregate
from rgbwkit.remosaic import RemosaicAlgo, remosaic_nearest

from conftest import plugin_cmd


def fake_result(name, m4_value, psnr=30.0, runtime=1.0):
    recs = [MetricRecord("s", 0, psnr, 1.0, 0.0, "external", 0.0, m4_value)]
    return AlgoResult(name, "plugin", recs, [], aggregate(recs), runtime, (1200, 1800))


@pytest.fixture
def dataset_copy(small_dataset, tmp_path):
    dst = tmp_path / "ds"
    shutil.copytree(small_dataset, dst)
    return dst


class TestExtrapolation:
    @pytest.mark.parametrize("measured, expect", [(0.26, 7.7), (6.02, 178.4)])
    def test_table_rows(self, measured, expect):
        assert extrapolate_runtime(measured, 1200, 1800) == pytest.approx(expect, rel=0.005)

    def test_identity_at_target(self):
        assert extrapolate_runtime(1.0, 8000, 8000) == 1.0

    def test_factor(self):
        assert extrapolate_runtime(1.0, 1200, 1800) == pytest.approx(64e6 / 2.16e6, rel=1e-15)

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            extrapolate_runtime(0.0, 10, 10)


class TestIngest:
    def test_round_trip(self, small_dataset):
        man = ingest(small_dataset)
        assert [s.scene_id for s in man.scenes] == ["scene000", "scene001", "scene002"]
        assert man.gains == ["0", "24", "42"]
        assert all(len(s.inputs) == 3 and s.gt is not None for s in man.scenes)
        assert man.failures == []
        assert man.seed == 7

    def test_truncated_file_listed(self, dataset_copy):
        path = dataset_copy / "scene001" / "rgbw_24db.rgbw"
        path.write_bytes(path.read_bytes()[:-10])
        man = ingest(dataset_copy)
        assert len(man.failures) == 1
        assert "rgbw_24db.rgbw" in man.failures[0]
        assert f"expected {24 + 2 * 96 * 64} bytes for 96x64, got {24 + 2 * 96 * 64 - 10}" in man.failures[0]
        assert set(man.scenes[1].inputs) == {"0", "42"}

    def test_sorted_regardless_of_manifest_order(self, dataset_copy):
        mpath = dataset_copy / "manifest.json"
        meta = json.loads(mpath.read_text())
        meta["scenes"].reverse()
        mpath.write_text(json.dumps(meta))
        assert [s.scene_id for s in ingest(dataset_copy).scenes] == ["scene000", "scene001", "scene002"]

    def test_without_manifest(self, dataset_copy):
        (dataset_copy / "manifest.json").unlink()
        man = ingest(dataset_copy)
        assert len(man.scenes) == 3 and man.gains == ["0", "24", "42"]

    def test_hidden_gt(self, dataset_copy):
        (dataset_copy / "scene002" / "gt.bayer").unlink()
        man = ingest(dataset_copy)
        test = [s for s in man.scenes if s.split == "test"]
        assert [s.scene_id for s in test] == ["scene002"] and test[0].gt_hidden

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(DatasetError):
            ingest(tmp_path)


class TestRunBenchmark:
    def test_identity_plugin(self, small_dataset):
        algo = RemosaicAlgo.plugin("oracle", plugin_cmd("identity_gt.py"))
        report = run_benchmark(ingest(small_dataset), [algo])
        (res,) = report.results
        assert len(res.records) == 9 and not res.failures
        assert all((r.psnr, r.ssim, r.kld) == (100.0, 1.0, 0.0) for r in res.records)

    def test_malformed_plugin_recorded(self, small_dataset):
        algos = [RemosaicAlgo.plugin("broken", plugin_cmd("wrong_size.py")),
                 RemosaicAlgo.builtin("nearest")]
        report = run_benchmark(ingest(small_dataset), algos, repeats=1)
        broken, nearest = report.results
        assert len(broken.failures) == 9 and broken.aggregates is None
        assert "output is 48x32, input is 96x64" in broken.failures[0]
        assert any("every scene failed" in n for n in report.notes)
        assert len(nearest.records) == 9
        assert [r.name for r in report.ranked()] == ["nearest"]

    def test_ranking_and_noise_order(self, small_dataset):
        algos = [RemosaicAlgo.builtin(k) for k in ("nearest", "bilinear", "wguided")]
        report = run_benchmark(ingest(small_dataset), algos, repeats=1)
        assert report.ranked()[0].name == "wguided"
        for res in report.results:
            assert res.aggregates["0"].psnr >= res.aggregates["42"].psnr
            assert res.runtime_measured > 0 and res.measured_size == (96, 64)

    def test_rows_deterministic_across_workers(self, small_dataset):
        man = ingest(small_dataset)
        a = run_benchmark(man, [RemosaicAlgo.builtin("bilinear")], workers=1, repeats=1)
        b = run_benchmark(man, [RemosaicAlgo.builtin("bilinear")], workers=4, repeats=1)
        assert a.results[0].records == b.results[0].records

    def test_lpips_tables(self, small_dataset):
        table = {("scene000", "0"): 0.2}
        report = run_benchmark(ingest(small_dataset), [RemosaicAlgo.builtin("nearest")],
                               lpips={"*": table}, repeats=1)
        recs = report.results[0].records
        assert recs[0].lpips == 0.2 and recs[0].lpips_source == "external"
        assert sum(r.lpips_source == "absent" for r in recs) == 8

    def test_split_selection(self, small_dataset):
        report = run_benchmark(ingest(small_dataset), [RemosaicAlgo.builtin("nearest")],
                               split="test", repeats=1)
        assert {r.scene_id for r in report.results[0].records} == {"scene002"}

    def test_workers_env(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "3")
        assert default_workers() == 3
        monkeypatch.delenv(THREADS_ENV)
        assert default_workers() == 1


class TestScorePredictions:
    def test_scores_layout(self, small_dataset, tmp_path):
        man = ingest(small_dataset)
        for scene in man.scenes:
            (tmp_path / scene.scene_id).mkdir()
            for g, path in scene.inputs.items():
                write_mraw(tmp_path / scene.scene_id / f"{g}db.bayer", remosaic_nearest(read_mraw(path)))
        report = score_predictions(man, tmp_path, "team", split=None)
        ref = run_benchmark(man, [RemosaicAlgo.builtin("nearest")], repeats=1)
        assert report.results[0].records == ref.results[0].records

    def test_missing_prediction_is_failure(self, small_dataset, tmp_path):
        report = score_predictions(ingest(small_dataset), tmp_path, split="test")
        assert len(report.results[0].failures) == 3


class TestReport:
    def test_ranked_by_m4(self):
        report = BenchmarkReport([fake_result("MegNR", 67.10), fake_result("RUSH MI", 68.72)])
        assert [r.name for r in report.ranked()] == ["RUSH MI", "MegNR"]

    def test_ties_broken_by_psnr_then_name(self):
        report = BenchmarkReport([fake_result("b", 60, 30), fake_result("a", 60, 30),
                                  fake_result("c", 60, 31)])
        assert [r.name for r in report.ranked()] == ["c", "a", "b"]

    def test_runtime_scaling_keeps_ranking(self):
        a = [fake_result("x", 60, runtime=5.0), fake_result("y", 61, runtime=0.1)]
        b = [fake_result("x", 60, runtime=0.5), fake_result("y", 61, runtime=100.0)]
        assert [r.name for r in BenchmarkReport(a).ranked()] == [r.name for r in BenchmarkReport(b).ranked()]

    def test_single_algo(self):
        md = render_markdown(BenchmarkReport([fake_result("only", 50.0)]))
        assert "| 1 | only |" in md and "| 2 |" not in md

    def test_runtime_column(self):
        md = render_markdown(BenchmarkReport([fake_result("x", 50.0, runtime=0.26)]))
        assert "| x | 1200x1800 | 0.26s | 7.704s |" in md

    def test_emission_byte_identical(self, tmp_path):
        report = BenchmarkReport([fake_result("a", 50.0), fake_result("b", 40.0)], "host")
        first = [p.read_bytes() for p in emit_report(report, "md", tmp_path / "1") +
                 emit_report(report, "csv", tmp_path / "1")]
        second = [p.read_bytes() for p in emit_report(report, "md", tmp_path / "2") +
                  emit_report(report, "csv", tmp_path / "2")]
        assert first == second

    def test_csv_files(self, tmp_path):
        paths = emit_report(BenchmarkReport([fake_result("a", 50.0)]), "csv", tmp_path)
        assert [p.name for p in paths] == ["metrics.csv", "runtime.csv"]
        assert paths[0].read_text().startswith("algo,scene_id,gain_db,")
        assert paths[1].read_text().splitlines()[1] == "a,plugin,1200,1800,1.000000,29.629630"

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report(BenchmarkReport([]), "html", tmp_path)
