import csv
import io
import json

import pytest

from tenerv import bench
from tenerv.cli import main

TINY = {
    "total_epochs": 6, "pretrain_epochs": 1, "qat_epochs": 1, "channels": [8, 8, 4], "factors": [2, 2],
    "msssim_scales": 1, "gop_count": 2, "min_gop_length": 2,
}


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "c.json").write_text(json.dumps(TINY))
    return tmp_path


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_pipeline_psnr_consistent(workdir, capsys):
    assert run(capsys, "gen", "--kind", "two-scene", "--frames", "6", "--height", "16", "--width", "16",
               "--out", "v.y4m")[0] == 0
    code, out, _ = run(capsys, "encode", "--input", "v.y4m", "--config", "c.json", "--out", "v.tnrv",
                       "--history", "h.csv")
    assert code == 0
    reported = dict(zip(*csv.reader(io.StringIO(out))))
    assert (workdir / "h.csv").read_text().count("\n") == TINY["total_epochs"] + 1
    assert float(reported["bpp"]) == (workdir / "v.tnrv").stat().st_size * 8 / (6 * 16 * 16)
    assert run(capsys, "decode", "v.tnrv", "--out", "frames")[0] == 0
    assert len(list((workdir / "frames").glob("*.rgb"))) == 6
    code, out, _ = run(capsys, "metrics", "--reference", "v.y4m", "--distorted", "frames", "--width", "16",
                       "--height", "16", "--scales", "1")
    assert code == 0
    mean = [r for r in csv.reader(io.StringIO(out)) if r[0] == "mean"][0]
    assert abs(float(mean[1]) - float(reported["psnr"])) <= 1e-6
    assert abs(float(mean[2]) - float(reported["msssim"])) <= 1e-6


def test_decode_formats(workdir, capsys):
    run(capsys, "gen", "--frames", "4", "--height", "16", "--width", "16", "--out", "v.rgb")
    run(capsys, "encode", "--input", "v.rgb", "--width", "16", "--height", "16", "--config", "c.json",
        "--out", "v.tnrv")
    assert run(capsys, "decode", "v.tnrv", "--out", "d.rgb")[0] == 0
    assert (workdir / "d.rgb").stat().st_size == 4 * 16 * 16 * 3
    assert run(capsys, "decode", "v.tnrv", "--out", "d.y4m")[0] == 0
    assert run(capsys, "export-y4m", "v.rgb", "--width", "16", "--height", "16", "--out", "e.y4m")[0] == 0
    assert (workdir / "e.y4m").read_bytes().startswith(b"YUV4MPEG2 W16 H16")


def test_partition_from_scores(workdir, capsys):
    (workdir / "d.csv").write_text("t,divergence\n" + "".join(
        f"{t},{d}\n" for t, d in enumerate([0.1, 0.9, 0.2, 0.8, 0.05, 0.3, 0.7, 0.15, 0.25], 1)))
    code, out, _ = run(capsys, "partition", "--scores", "d.csv", "--gops", "3", "--min-length", "3")
    assert code == 0 and out.strip() == "4,7"


def test_partition_from_checkpoint(workdir, capsys):
    run(capsys, "gen", "--frames", "6", "--height", "16", "--width", "16", "--out", "v.y4m")
    run(capsys, "encode", "--input", "v.y4m", "--config", "c.json", "--out", "v.tnrv")
    code, out, _ = run(capsys, "partition", "--checkpoint", "v.tnrv", "--gops", "2", "--min-length", "2")
    assert code == 0
    assert all(2 <= int(b) <= 4 for b in out.strip().split(","))


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "gen", "--bogus", "--out", "x.y4m")
    assert code == 1
    assert "usage:" in err


def test_missing_subcommand(capsys):
    code, _, err = run(capsys)
    assert code == 1 and "usage:" in err


def test_partition_needs_one_source(capsys):
    assert run(capsys, "partition")[0] == 1


def test_corrupt_stream_is_data_error(workdir, capsys):
    (workdir / "bad.tnrv").write_bytes(b"TNRV\x01\x00" + bytes(40))
    code, out, err = run(capsys, "decode", "bad.tnrv", "--out", "x")
    assert code == 2 and "CRC" in err and out == ""


def test_bad_y4m_is_data_error(workdir, capsys):
    (workdir / "bad.y4m").write_bytes(b"YUV4MPEG2 W4 H4 C444\nFRAME\n")
    code, _, err = run(capsys, "encode", "--input", "bad.y4m", "--out", "x.tnrv")
    assert code == 2 and "colorspace" in err


def test_bad_config_is_data_error(workdir, capsys):
    run(capsys, "gen", "--frames", "4", "--height", "16", "--width", "16", "--out", "v.y4m")
    (workdir / "bad.json").write_text('{"alpha": 3}')
    code, _, err = run(capsys, "encode", "--input", "v.y4m", "--config", "bad.json", "--out", "x.tnrv")
    assert code == 2 and "alpha" in err


def test_internal_error_code(monkeypatch, capsys):
    import tenerv.cli as cli

    def boom(args):
        raise RuntimeError("unexpected")

    monkeypatch.setattr(cli, "cmd_gen", boom)
    code, _, err = run(capsys, "gen", "--out", "x.y4m")
    assert code == 3 and "internal" in err


def test_bench_ablation_rows(workdir, capsys):
    code, out, _ = run(capsys, "bench", "--ablation", "--config", "c.json", "--kinds", "moving-square",
                       "--seeds", "1", "--bits", "3", "4", "6", "8", "--epochs", "4", "--qat-epochs", "1",
                       "--frames", "6", "--height", "16", "--width", "16", "--out-dir", "b")
    assert code == 0
    rows = bench.parse_rd_csv((workdir / "b" / "rd.csv").read_text())
    assert len(rows) == 6 * 4
    table = list(csv.reader(io.StringIO((workdir / "b" / "bd_rate.csv").read_text())))
    assert [r[0] for r in table[1:]] == ["V1", "V2", "V3", "V4", "V5"]
    assert all(v in out for v in ("V1", "V5"))
