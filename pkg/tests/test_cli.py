import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ternroll import (
    ImageStream,
    build_tree,
    evaluate,
    schedule_serial,
    simulate,
    td_cse,
    ternarize,
)
from ternroll.cli import main
from ternroll.matrices import FloatMatrix, dump_fmx, dump_tmx, load_tmx
from ternroll.cse import parse_cse
from ternroll import netlist
from ternroll.network import save_network
from ternroll.pipeline import dump_img

TMX_7X6 = "tmx 7 6\n00++00\n+0+++0\n0+00++\n0+000+\n+0++00\n+00+00\n0+00++\n"


def run_cli(args, **kw):
    return subprocess.run(
        [sys.executable, "-m", "ternroll.cli", *args],
        capture_output=True,
        text=True,
        **kw,
    )


@pytest.fixture
def m7x6_file(tmp_path):
    p = tmp_path / "m7x6.tmx"
    p.write_text(TMX_7X6)
    return str(p)


def test_ternarize_prints_delta_s_sparsity(tmp_path, capsys):
    w = FloatMatrix(np.array([[0.5, -0.2, 0.9, 0.05]]))
    fin = tmp_path / "w.fmx"
    fout = tmp_path / "w.tmx"
    dump_fmx(w, str(fin))
    assert main(["ternarize", "--eps", "0.7", str(fin), str(fout)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("delta=0.28875 s=0.7 sparsity=0.5")
    assert load_tmx(str(fout)).entries.tolist() == [[1, 0, 1, 0]]


def test_sweep_eps(tmp_path, capsys, rng):
    w = FloatMatrix(rng.normal(size=(16, 16)))
    fin = tmp_path / "w.fmx"
    dump_fmx(w, str(fin))
    assert main(["sweep-eps", "--eps", "0.7,1.0,1.4", str(fin)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert all(l.startswith("eps=") and " sparsity=" in l for l in lines)


def test_cse_first_definition_line(tmp_path, m7x6_file, capsys):
    out = tmp_path / "m7x6.cse"
    assert main(["cse", "--method", "td", m7x6_file, str(out)]) == 0
    assert out.read_text().splitlines()[0] == "def x6 = +x2 +x3"


def test_cse_verify_flag(tmp_path, m7x6_file, capsys):
    out = tmp_path / "m7x6.cse"
    assert main(["cse", "--method", "bu", "--verify", "50", "--seed", "7", m7x6_file, str(out)]) == 0
    assert "verify=ok" in capsys.readouterr().out


def test_tree_and_stats_roundtrip(tmp_path, m7x6_file, capsys):
    cse_path = tmp_path / "a.cse"
    ngl_path = tmp_path / "a.ngl"
    assert main(["cse", "--method", "td", m7x6_file, str(cse_path)]) == 0
    assert main(["tree", "--arity", "2", "--inputs", "6", str(cse_path), str(ngl_path)]) == 0
    assert main(["stats", str(ngl_path)]) == 0
    out = capsys.readouterr().out
    assert "Adds+Regs" in out
    g = netlist.load(str(ngl_path))
    assert evaluate(g, [1] * 6) == [2, 4, 3, 2, 3, 2, 3]


def test_emit_one_shot(tmp_path, m7x6_file):
    ngl_path = tmp_path / "b.ngl"
    assert main(["emit", "--method", "bu", "--interval", "4", m7x6_file, str(ngl_path)]) == 0
    g = netlist.load(str(ngl_path))
    assert g.digits == 4
    assert evaluate(g, [1] * 6) == [2, 4, 3, 2, 3, 2, 3]


def test_arity3_serial_rejected(tmp_path, m7x6_file, capsys):
    ngl_path = tmp_path / "c.ngl"
    rc = main(["emit", "--method", "td", "--arity", "3", "--interval", "4", m7x6_file, str(ngl_path)])
    assert rc == 2
    assert not ngl_path.exists()  # no partial outputs


def test_cli_pipeline_equals_library(tmp_path, rng):
    w = FloatMatrix(rng.normal(size=(8, 12)))
    fmx = tmp_path / "w.fmx"
    tmx = tmp_path / "w.tmx"
    cse_p = tmp_path / "w.cse"
    ngl_p = tmp_path / "w.ngl"
    dump_fmx(w, str(fmx))
    assert main(["ternarize", "--eps", "0.8", str(fmx), str(tmx)]) == 0
    assert main(["cse", "--method", "td", str(tmx), str(cse_p)]) == 0
    assert main(["tree", "--inputs", "12", str(cse_p), str(ngl_p)]) == 0

    t_lib, _ = ternarize(w, 0.8)
    r_lib = td_cse(t_lib)
    g_lib = schedule_serial(build_tree(r_lib, 2), 1)
    assert load_tmx(str(tmx)).entries.tolist() == t_lib.entries.tolist()
    assert parse_cse(cse_p.read_text(), 12) == r_lib
    assert netlist.load(str(ngl_p)) == g_lib


def test_byte_identical_outputs(tmp_path, m7x6_file):
    a = tmp_path / "a.ngl"
    b = tmp_path / "b.ngl"
    assert main(["emit", "--method", "bu", m7x6_file, str(a)]) == 0
    assert main(["emit", "--method", "bu", m7x6_file, str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_report_throughput_line(capsys):
    assert main(["report-throughput", "configs/vgg7_cifar10.json", "--clock", "125e6"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[-1] == "122070 frames/sec"
    assert "64 values every 4 cycles" in out
    assert "4 values every cycle" in out


def test_report_ops_dense_column(capsys):
    assert main(["report-ops", "configs/vgg7_cifar10.json"]) == 0
    out = capsys.readouterr().out
    assert "Conv1" in out and "1769472" in out
    assert "153289984" in out


def test_report_ops_with_weights_and_cse(tmp_path, capsys, rng):
    net_path = tmp_path / "net.json"
    from .test_pipeline import tiny_net, tiny_weights

    net = tiny_net()
    save_network(net, str(net_path))
    w = tiny_weights(rng)
    wdir = tmp_path / "weights"
    wdir.mkdir()
    dump_tmx(w[1], str(wdir / "layer01.tmx"))
    (wdir / "layer02.json").write_text(json.dumps({"c": list(w[2].c), "b": list(w[2].b)}))
    dump_tmx(w[5], str(wdir / "layer05.tmx"))
    assert main(["report-ops", str(net_path), str(wdir), "--with-cse"]) == 0
    out = capsys.readouterr().out
    assert "Conv1" in out
    assert "-" not in out.splitlines()[1].split()[3]  # sparsity column filled


def test_simulate_cli_matches_library(tmp_path, capsys, rng):
    from .test_pipeline import tiny_net, tiny_weights

    net = tiny_net()
    w = tiny_weights(rng)
    net_path = tmp_path / "net.json"
    save_network(net, str(net_path))
    wdir = tmp_path / "weights"
    wdir.mkdir()
    dump_tmx(w[1], str(wdir / "layer01.tmx"))
    (wdir / "layer02.json").write_text(json.dumps({"c": list(w[2].c), "b": list(w[2].b)}))
    dump_tmx(w[5], str(wdir / "layer05.tmx"))
    img = ImageStream(rng.integers(-(2**11), 2**11, size=(8, 8, 1)))
    img_path = tmp_path / "img.txt"
    dump_img(img, str(img_path))
    assert main(["simulate", str(net_path), str(img_path), "--weights", str(wdir)]) == 0
    out = capsys.readouterr().out.strip()
    res = simulate(net, w, img)
    fields = out.split("\t")
    assert [int(v) for v in fields[:-1]] == list(res.scores)
    assert fields[-1] == f"argmax={res.argmax}"


def test_explain_config(capsys):
    assert main(["report-throughput", "configs/vgg7_cifar10.json", "--explain-config"]) == 0
    out = capsys.readouterr().out
    assert "clock_hz" in out and "(from" in out


def test_exit_codes_subprocess(tmp_path):
    # usage error: unknown subcommand
    r = run_cli(["frobnicate"])
    assert r.returncode == 1
    # usage error: missing required flag
    r = run_cli(["cse", "in.tmx", "out.cse"])
    assert r.returncode == 1
    # input error: missing file
    r = run_cli(["cse", "--method", "td", str(tmp_path / "nope.tmx"), str(tmp_path / "o.cse")])
    assert r.returncode == 2
    assert r.stderr.strip().count("\n") == 0  # single-line diagnostic
    # input error: malformed matrix
    bad = tmp_path / "bad.tmx"
    bad.write_text("tmx 1 2\n+x\n")
    r = run_cli(["cse", "--method", "td", str(bad), str(tmp_path / "o.cse")])
    assert r.returncode == 2


def test_threads_env_caps_parallel_report(tmp_path, rng):
    from .test_pipeline import tiny_net, tiny_weights

    net = tiny_net()
    w = tiny_weights(rng)
    net_path = tmp_path / "net.json"
    save_network(net, str(net_path))
    wdir = tmp_path / "weights"
    wdir.mkdir()
    dump_tmx(w[1], str(wdir / "layer01.tmx"))
    (wdir / "layer02.json").write_text(json.dumps({"c": list(w[2].c), "b": list(w[2].b)}))
    dump_tmx(w[5], str(wdir / "layer05.tmx"))
    outs = []
    for threads in ("1", "2"):
        env = dict(os.environ, TERNROLL_THREADS=threads)
        r = run_cli(
            ["report-ops", str(net_path), str(wdir), "--with-cse"], env=env, cwd="/root/pkg"
        )
        assert r.returncode == 0
        outs.append(r.stdout)
    assert outs[0] == outs[1]  # order-stable regardless of the thread cap


def test_simulate_requires_weights_and_image(tmp_path):
    net_path = tmp_path / "net.json"
    from .test_pipeline import tiny_net

    save_network(tiny_net(), str(net_path))
    r = run_cli(["simulate", str(net_path)])
    assert r.returncode == 1
