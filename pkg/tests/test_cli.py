import csv

import numpy as np
import pytest

from tnnr.cli import ExperimentConfig, emit_plot_data, main, run
from tnnr.data import save_image
from tnnr.sve import estimate_rank


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def make_test_image(path, seed=0, size=24, color=True):
    rng = np.random.default_rng(seed)
    u = np.linspace(0, 1, size)
    base = 120 * np.outer(np.sin(np.pi * u) + 1, np.cos(2 * np.pi * u) + 1.2) / 2.2
    channels = []
    for _ in range(3 if color else 1):
        channels.append(np.clip(base + rng.normal(0, 5, base.shape), 0, 255))
    save_image(channels, path)
    return path


class TestExperimentConfig:
    def test_file_round_trip(self, tmp_path):
        cfg = ExperimentConfig(command="compare", m=30, n=30, rank=2, sr=0.6,
                               std=0.25, trials=3, seed=11, out="somewhere",
                               kappa=4.5, adjust=1)
        path = tmp_path / "cfg.txt"
        cfg.to_file(path)
        loaded = ExperimentConfig.from_file(path)
        assert loaded == cfg

    def test_unknown_key_reports_path_and_field(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("command = compare\nwhatever = 3\n")
        with pytest.raises(ValueError, match="whatever"):
            ExperimentConfig.from_file(path)

    def test_bad_value_reports_field(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("trials = soon\n")
        with pytest.raises(ValueError, match="trials"):
            ExperimentConfig.from_file(path)

    def test_comments_and_blanks(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("# a comment\n\ncommand = sve-trace  # trailing\nm = 10\n")
        loaded = ExperimentConfig.from_file(path)
        assert loaded.command == "sve-trace" and loaded.m == 10

    def test_validation_catches_inconsistencies(self):
        with pytest.raises(ValueError, match="image"):
            ExperimentConfig(command="complete").validate()
        with pytest.raises(ValueError, match="image"):
            ExperimentConfig(command="dct-synth", m=10, n=10, rank=1,
                             image="x.ppm").validate()
        with pytest.raises(ValueError, match="operator"):
            ExperimentConfig(command="dct-synth", m=10, n=10, rank=1,
                             operator="mask").validate()
        with pytest.raises(ValueError, match="rank"):
            ExperimentConfig(command="compare", m=10, n=10).validate()
        with pytest.raises(ValueError, match="mask_file"):
            ExperimentConfig(command="compare", m=10, n=10, rank=1,
                             operator="dct", mask_file="m.txt").validate()


@pytest.fixture(scope="module")
def compare_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("cmp")
    cfg = ExperimentConfig(command="compare", operator="dct", m=30, n=30,
                           rank=2, sr=0.6, std=0.3, trials=3, seed=5,
                           out=str(out), inner_tol=1e-3, max_inner_iters=300)
    assert run(cfg) == 0
    return out


class TestCompareCommand:
    def test_metrics_rows_and_methods(self, compare_out):
        rows = read_csv(compare_out / "metrics.csv")
        assert len(rows) == 6  # 3 seeds x 2 methods
        assert {r["method"] for r in rows} == {"lr", "lrisd"}
        assert [r["seed"] for r in rows] == sorted(r["seed"] for r in rows)
        for r in rows:
            assert float(r["reer"]) > 0
            assert r["psnr_db"] == ""  # synthetic runs carry no image metrics

    def test_summary_medians(self, compare_out):
        rows = read_csv(compare_out / "metrics.csv")
        summary = {r["method"]: r for r in read_csv(compare_out / "summary.csv")}
        for method in ("lr", "lrisd"):
            reers = [float(r["reer"]) for r in rows if r["method"] == method]
            assert float(summary[method]["median_reer"]) == pytest.approx(np.median(reers))

    def test_trace_and_config_written(self, compare_out):
        assert (compare_out / "trace.csv").exists()
        assert (compare_out / "config.txt").exists()
        trace = read_csv(compare_out / "trace.csv")
        assert {"seed", "method", "stage", "l", "k", "objective", "residual", "beta"} <= set(trace[0])

    def test_rerun_is_byte_identical(self, compare_out, tmp_path):
        cfg = ExperimentConfig.from_file(compare_out / "config.txt")
        cfg.out = str(tmp_path / "again")
        assert run(cfg) == 0
        for name in ("metrics.csv", "trace.csv", "sve.csv", "summary.csv"):
            assert (compare_out / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


class TestDctSynthCommand:
    def test_rows_and_adjust(self, tmp_path):
        out = tmp_path / "ds"
        cfg = ExperimentConfig(command="dct-synth", m=24, n=24, rank=2, sr=0.6,
                               std=0.2, trials=2, seed=4, out=str(out),
                               adjust=1, inner_tol=1e-3, max_inner_iters=300)
        assert run(cfg) == 0
        rows = read_csv(out / "metrics.csv")
        assert {r["method"] for r in rows} == {"lrisd", "lrisd-adjust"}
        by = {(r["seed"], r["method"]): r for r in rows}
        for seed in ("4", "5"):
            adj = float(by[(seed, "lrisd-adjust")]["reer"])
            base = float(by[(seed, "lrisd")]["reer"])
            assert adj <= base + 1e-9  # the sweep keeps the best recovery

    def test_mask_operator_rejected(self):
        cfg = ExperimentConfig(command="dct-synth", m=10, n=10, rank=1, operator="mask")
        with pytest.raises(ValueError, match="operator"):
            cfg.validate()


class TestSveTraceCommand:
    def test_profile_matches_estimator(self, tmp_path, capsys):
        out = tmp_path / "sve"
        cfg = ExperimentConfig(command="sve-trace", operator="dct", m=40, n=40,
                               rank=3, sr=0.6, std=0.2, seed=2, out=str(out))
        assert run(cfg) == 0
        assert "estimated rank" in capsys.readouterr().out
        rows = read_csv(out / "sve.csv")
        assert rows, "sve.csv must contain profile rows"
        stage1 = [r for r in rows if r["stage"] == "1"]
        s = np.array([float(r["S"]) for r in stage1])
        kappa = float(stage1[0]["kappa"])
        prof = estimate_rank(s, kappa)
        assert int(stage1[0]["r_hat"]) == prof.r_hat
        st = np.array([float(r["St"]) for r in stage1 if r["St"] != ""])
        stt = np.array([float(r["Stt"]) for r in stage1 if r["Stt"] != ""])
        assert np.allclose(st, prof.St) and np.allclose(stt, prof.Stt)


class TestCompleteCommand:
    def test_color_completion_outputs(self, tmp_path, capsys):
        image = make_test_image(tmp_path / "in.ppm", seed=1)
        out = tmp_path / "cmp"
        cfg = ExperimentConfig(command="complete", operator="mask", sr=0.5,
                               image=str(image), seed=3, out=str(out),
                               kappa_mode="real")
        assert run(cfg) == 0
        rows = read_csv(out / "metrics.csv")
        assert {r["method"] for r in rows} == {"lr", "lrisd"}
        for r in rows:
            assert r["psnr_db"] != "" and float(r["psnr_db"]) > 5
            assert r["t_count"] != "" and int(r["t_count"]) > 0
        assert (out / "recovered_lr.ppm").exists()
        assert (out / "recovered_lrisd.ppm").exists()
        assert (out / "masked.ppm").exists()
        assert (out / "operator.txt").exists()

    def test_fully_observed_hits_cap(self, tmp_path):
        image = make_test_image(tmp_path / "in.pgm", seed=2, color=False)
        out = tmp_path / "full"
        cfg = ExperimentConfig(command="complete", operator="mask", sr=1.0,
                               image=str(image), out=str(out), kappa_mode="real")
        assert run(cfg) == 0
        rows = read_csv(out / "metrics.csv")
        for r in rows:
            assert float(r["psnr_db"]) == 99.0

    def test_adjust_method_appears(self, tmp_path):
        image = make_test_image(tmp_path / "in.pgm", seed=3, color=False, size=20)
        out = tmp_path / "adj"
        cfg = ExperimentConfig(command="complete", operator="mask", sr=0.6,
                               image=str(image), out=str(out), adjust=1,
                               kappa_mode="real")
        assert run(cfg) == 0
        rows = {r["method"]: r for r in read_csv(out / "metrics.csv")}
        assert "lrisd-adjust" in rows
        assert float(rows["lrisd-adjust"]["psnr_db"]) >= float(rows["lrisd"]["psnr_db"]) - 1e-9

    def test_transform_operator_scores_all_pixels(self, tmp_path):
        image = make_test_image(tmp_path / "in.pgm", seed=5, color=False, size=20)
        out = tmp_path / "dct"
        cfg = ExperimentConfig(command="complete", operator="dct", sr=0.7,
                               image=str(image), out=str(out), kappa_mode="real",
                               inner_tol=1e-5)
        assert run(cfg) == 0
        rows = read_csv(out / "metrics.csv")
        for r in rows:
            assert int(r["t_count"]) == 400  # no missing-pixel set: score everywhere
        assert (out / "recovered_lrisd.pgm").exists()

    def test_mask_file_input(self, tmp_path):
        from tnnr.operators import SamplingMask

        image = make_test_image(tmp_path / "in.pgm", seed=6, color=False, size=16)
        mask = SamplingMask.random(16, 16, 0.6, 77)
        mask_path = tmp_path / "mask.txt"
        mask.to_file(mask_path)
        out = tmp_path / "mf"
        cfg = ExperimentConfig(command="complete", operator="mask",
                               image=str(image), mask_file=str(mask_path),
                               out=str(out), kappa_mode="real",
                               inner_tol=1e-4, max_inner_iters=500)
        assert run(cfg) == 0
        saved = SamplingMask.from_file(out / "operator.txt")
        assert np.array_equal(saved.rows, mask.rows)

    def test_missing_image_errors(self, tmp_path, capsys):
        code = main(["complete", "--image", str(tmp_path / "nope.ppm"),
                     "--out", str(tmp_path / "o")])
        assert code == 2
        assert "nope.ppm" in capsys.readouterr().err


class TestPlotData:
    def test_families_emitted(self, tmp_path):
        runs = []
        for std in (0.2, 0.4):
            out = tmp_path / f"std{std}"
            cfg = ExperimentConfig(command="compare", operator="dct", m=24, n=24,
                                   rank=2, sr=0.6, std=std, trials=2, seed=1,
                                   out=str(out), inner_tol=1e-3, max_inner_iters=300)
            assert run(cfg) == 0
            runs.append(out)
        plots = tmp_path / "plots"
        files = [str(r / "metrics.csv") for r in runs] + [str(runs[0] / "sve.csv")]
        emit_plot_data(files, plots)

        by_std = read_csv(plots / "reer_vs_std.csv")
        assert [float(r["std"]) for r in by_std] == sorted(float(r["std"]) for r in by_std)
        assert {r["method"] for r in by_std} == {"lr", "lrisd"}

        by_sr = read_csv(plots / "reer_vs_sr.csv")
        assert [float(r["sr"]) for r in by_sr] == sorted(float(r["sr"]) for r in by_sr)

        ranks = read_csv(plots / "rank_recovery.csv")
        assert {"true_r", "recovered_r", "seed", "method"} <= set(ranks[0])

        stt = read_csv(plots / "stt_vs_index.csv")
        source = [r for r in read_csv(runs[0] / "sve.csv") if r["Stt"] != ""]
        assert [r["Stt"] for r in stt] == [r["Stt"] for r in source]

    def test_unrecognized_file_is_format_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="format error"):
            emit_plot_data([str(bad)], tmp_path / "p")


class TestWorkerCount:
    def test_env_var_caps_workers(self, monkeypatch):
        from tnnr.cli import _worker_count
        monkeypatch.setenv("LOWRANK_THREADS", "2")
        assert _worker_count(8) == 2
        assert _worker_count(1) == 1
        monkeypatch.delenv("LOWRANK_THREADS")
        assert _worker_count(3) <= 3

    def test_run_under_thread_cap(self, tmp_path, monkeypatch):
        monkeypatch.setenv("LOWRANK_THREADS", "1")
        out = tmp_path / "serial"
        cfg = ExperimentConfig(command="compare", operator="mask", m=16, n=16,
                               rank=1, sr=0.7, std=0.1, trials=2, seed=0,
                               out=str(out), inner_tol=1e-3, max_inner_iters=200)
        assert run(cfg) == 0
        assert len(read_csv(out / "metrics.csv")) == 4


class TestMainEntry:
    def test_compare_via_argv(self, tmp_path):
        out = tmp_path / "viaargv"
        code = main(["compare", "--m", "20", "--n", "20", "--rank", "2",
                     "--sr", "0.6", "--std", "0.2", "--trials", "1",
                     "--seed", "0", "--out", str(out)])
        assert code == 0
        assert (out / "metrics.csv").exists()

    def test_config_file_with_override(self, tmp_path):
        base = tmp_path / "base.txt"
        ExperimentConfig(command="compare", operator="dct", m=20, n=20, rank=2,
                         sr=0.6, std=0.2, trials=1).to_file(base)
        out = tmp_path / "ovr"
        code = main(["compare", "--config", str(base), "--out", str(out), "--seed", "9"])
        assert code == 0
        resolved = ExperimentConfig.from_file(out / "config.txt")
        assert resolved.seed == 9 and resolved.m == 20

    def test_command_conflict_detected(self, tmp_path, capsys):
        base = tmp_path / "base.txt"
        ExperimentConfig(command="compare", m=20, n=20, rank=2).to_file(base)
        code = main(["sve-trace", "--config", str(base)])
        assert code == 2
        assert "conflict" in capsys.readouterr().err

    def test_solver_failure_exit_code(self, tmp_path, capsys, monkeypatch):
        from tnnr.solvers import SolverDivergence, StageTrace

        def explode(*args, **kwargs):
            raise SolverDivergence("stage 0: objective 1e+99", StageTrace())

        monkeypatch.setattr("tnnr.cli.lrisd", explode)
        code = main(["compare", "--m", "10", "--n", "10", "--rank", "1",
                     "--sr", "0.8", "--trials", "1", "--out", str(tmp_path / "x")])
        assert code == 1
        assert "solver failure" in capsys.readouterr().err
