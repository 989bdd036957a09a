import csv
import json
import subprocess
import sys

import pytest

import graphmae.cli as cli
import graphmae.training as training
from graphmae import autodiff as ad
from graphmae.evaluation import EvalReport
from graphmae.graph import FeatureSpec, generate_sbm, save_graph, save_graphset, generate_sbm_graphset
from graphmae.gradcheck import REGISTRY
from graphmae.loss import cosine_error_rows

SMALL = """\
task = node
data.synthetic = sbm
sbm.blocks = 30, 30
sbm.p_in = 0.2
sbm.p_out = 0.02
sbm.dim = 8
sbm.noise = 0.3
hidden_size = 16
encoder.heads = 2
max_epoch = {epochs}
probe.epochs = 100
probe.repeats = 2
probe.lr = 0.05
"""


def _config(tmp_path, text=None, epochs=8, name="run.cfg"):
    path = tmp_path / name
    path.write_text(SMALL.format(epochs=epochs) if text is None else text)
    return path


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


# ---------------------------------------------------------------- pretrain


def test_pretrain_writes_outputs(tmp_path):
    cfg = _config(tmp_path)
    assert cli.main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    out = tmp_path / "o"
    assert {p.name for p in out.iterdir()} == {cli.CHECKPOINT_FILE, cli.ARCHITECTURE_FILE, cli.TRAIN_LOG_FILE}
    rows = _rows(out / cli.TRAIN_LOG_FILE)
    assert rows[0] == ["epoch", "loss", "lr"] and len(rows) == 9
    json.loads((out / cli.ARCHITECTURE_FILE).read_text())


def test_pretrain_same_seed_is_byte_identical(tmp_path):
    cfg = _config(tmp_path)
    for d in ("a", "b"):
        assert cli.main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / d), "--seed", "4"]) == 0
    for name in (cli.CHECKPOINT_FILE, cli.TRAIN_LOG_FILE):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_pretrain_missing_feature_file_exits_2(tmp_path, capsys):
    (tmp_path / "edges.txt").write_text("0 1\n")
    cfg = _config(tmp_path, "data.edges = edges.txt\ndata.features = nope.bin\n")
    assert cli.main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "nope.bin" in capsys.readouterr().err


def test_pretrain_from_files(tmp_path):
    g = generate_sbm([10, 10], 0.3, 0.05, FeatureSpec(dim=4), seed=0)
    save_graph(g, tmp_path / "e.txt", tmp_path / "f.bin", tmp_path / "l.txt")
    cfg = _config(tmp_path, "data.edges = e.txt\ndata.features = f.bin\ndata.labels = l.txt\n"
                            "hidden_size = 8\nencoder.heads = 2\nmax_epoch = 3\n")
    assert cli.main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = _config(tmp_path, "task = node\nmask_rato = 0.5\n")
    assert cli.main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "mask_rato" in err and ":2:" in err
    cfg = _config(tmp_path, "gamma = 0.5\n", name="g.cfg")
    assert cli.main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["pretrain", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")]) == 2


def test_nonfinite_exits_3(tmp_path, monkeypatch):
    cfg = _config(tmp_path, epochs=2)

    def boom(*args, **kwargs):
        raise training.TrainingDivergedError(0, {"w": float("inf")}, "loss")

    monkeypatch.setattr(cli, "pretrain", boom)
    assert cli.main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


# ------------------------------------------------------------------- probe


@pytest.fixture(scope="module")
def pretrained(tmp_path_factory):
    root = tmp_path_factory.mktemp("probe")
    cfg = root / "run.cfg"
    cfg.write_text(SMALL.format(epochs=20) + "sbm.mean_scale = 3\n")
    assert cli.main(["pretrain", "--config", str(cfg), "--out", str(root / "ckpt")]) == 0
    return root, cfg


def test_probe_separable_fixture(pretrained):
    root, cfg = pretrained
    assert cli.main(["probe", "--config", str(cfg), "--checkpoint", str(root / "ckpt"), "--out", str(root / "p")]) == 0
    doc = json.loads((root / "p" / "probe_report.json").read_text())
    report = EvalReport.from_dict(doc)
    assert report.mean >= 0.95
    assert json.loads(report.to_json()) == doc
    assert doc["config"]["run"]["encoder"] == "gat"


def test_probe_missing_checkpoint_exits_2(pretrained, tmp_path, capsys):
    _, cfg = pretrained
    assert cli.main(["probe", "--config", str(cfg), "--checkpoint", str(tmp_path / "none.bin"),
                     "--out", str(tmp_path)]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_probe_architecture_mismatch_exits_2(pretrained, tmp_path, capsys):
    root, cfg = pretrained
    other = tmp_path / "gin.cfg"
    other.write_text(cfg.read_text() + "encoder.kind = gin\ndecoder.kind = gin\n")
    assert cli.main(["probe", "--config", str(other), "--checkpoint", str(root / "ckpt"), "--out", str(tmp_path)]) == 2
    assert "does not match" in capsys.readouterr().err


def test_graph_eval(tmp_path):
    gs = generate_sbm_graphset(20, 8, 0.6, 0.05, FeatureSpec(dim=4, noise=0.5), seed=0)
    save_graphset(gs, tmp_path / "gs")
    cfg = _config(tmp_path, "task = graph\ndata.graphset = gs\nhidden_size = 8\nmax_epoch = 3\n"
                            "folds = 5\neval.repeats = 1\nprobe.epochs = 50\nlr = 0.01\n")
    assert cli.main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 0
    assert cli.main(["graph-eval", "--config", str(cfg), "--checkpoint", str(tmp_path / "c"),
                     "--out", str(tmp_path / "e")]) == 0
    doc = json.loads((tmp_path / "e" / "graph_eval_report.json").read_text())
    assert len(doc["values"]) == 5
    # a node config on the graph command is a usage error
    assert cli.main(["graph-eval", "--config", str(_config(tmp_path, name="n.cfg")), "--checkpoint",
                     str(tmp_path / "c"), "--out", str(tmp_path / "e")]) == 2


# ------------------------------------------------------------------ ablate


def _ablate(tmp_path, axis, values, *extra, epochs=6):
    cfg = _config(tmp_path, epochs=epochs)
    out = tmp_path / f"abl_{axis}"
    code = cli.main(["ablate", "--config", str(cfg), "--axis", axis, "--values", values, "--out", str(out), *extra])
    return code, out


def test_ablate_mask_ratio(tmp_path):
    code, out = _ablate(tmp_path, "mask_ratio", "0.1,0.5,0.75")
    assert code == 0
    rows = _rows(out / "ablation_mask_ratio.csv")
    assert rows[0] == ["axis_value", "mean", "std"]
    assert [r[0] for r in rows[1:]] == ["0.1", "0.5", "0.75"]
    assert all(0 <= float(r[1]) <= 1 and float(r[2]) >= 0 for r in rows[1:])
    assert (out / "runs" / "mask_ratio=0.5" / "train_log.csv").is_file()


def test_gamma_one_equals_plain_cosine_run(tmp_path, monkeypatch):
    code, out = _ablate(tmp_path, "gamma", "1,2,3")
    assert code == 0
    assert len(_rows(out / "ablation_gamma.csv")) == 4
    sweep_log = (out / "runs" / "gamma=1" / "train_log.csv").read_bytes()

    def plain_cosine(x, z, plan, cfg):
        return ad.mean(cosine_error_rows(x.data[plan.masked], ad.gather_rows(z, plan.masked)))

    monkeypatch.setattr(training, "reconstruction_loss", plain_cosine)
    cfg = _config(tmp_path, (SMALL + "gamma = 3\n").format(epochs=6), name="plain.cfg")
    assert cli.main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "plain")]) == 0
    assert (tmp_path / "plain" / cli.TRAIN_LOG_FILE).read_bytes() == sweep_log


def test_ablate_criterion_gives_distinct_curves(tmp_path):
    code, out = _ablate(tmp_path, "criterion", "sce,mse")
    assert code == 0
    sce = _rows(out / "runs" / "criterion=sce" / "train_log.csv")
    mse = _rows(out / "runs" / "criterion=mse" / "train_log.csv")
    assert len(sce) == len(mse) and sce != mse


def test_ablate_invalid_value_exits_2(tmp_path, capsys):
    code, out = _ablate(tmp_path, "gamma", "1,0.5")
    assert code == 2
    assert not out.exists()
    code, _ = _ablate(tmp_path, "mask_ratio", "half")
    assert code == 2
    assert "half" in capsys.readouterr().err


def test_ablate_honours_thread_cap(tmp_path, monkeypatch):
    seen = []
    real = cli.ThreadPoolExecutor

    def recording(max_workers):
        seen.append(max_workers)
        return real(max_workers=max_workers)

    monkeypatch.setattr(cli, "ThreadPoolExecutor", recording)
    monkeypatch.setenv("GRAPHMAE_THREADS", "1")
    code, out = _ablate(tmp_path, "decoder_kind", "gat,mlp", "--emit-gnuplot", epochs=3)
    assert code == 0 and seen == [1]
    gp = (out / "ablation_decoder_kind.gp").read_text()
    assert "ablation_decoder_kind.csv" in gp
    monkeypatch.setenv("GRAPHMAE_THREADS", "zero")
    assert _ablate(tmp_path, "remask_on_off", "true,false", epochs=2)[0] == 2


def test_parallel_sweep_matches_serial(tmp_path, monkeypatch):
    monkeypatch.setenv("GRAPHMAE_THREADS", "3")
    (tmp_path / "p").mkdir()
    _, par = _ablate(tmp_path / "p", "mask_ratio", "0.25,0.5,0.75", epochs=4)
    monkeypatch.setenv("GRAPHMAE_THREADS", "1")
    (tmp_path / "s").mkdir()
    _, ser = _ablate(tmp_path / "s", "mask_ratio", "0.25,0.5,0.75", epochs=4)
    assert (par / "ablation_mask_ratio.csv").read_bytes() == (ser / "ablation_mask_ratio.csv").read_bytes()


# --------------------------------------------------------------- gradcheck


def test_gradcheck_passes_and_writes_csv(tmp_path, capsys):
    assert cli.main(["gradcheck", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "gradcheck.csv")
    assert rows[0] == ["check", "kind", "max_rel_error", "threshold", "passed"]
    assert [r[0] for r in rows[1:]] == [c.name for c in REGISTRY]
    assert all(r[4] == "1" for r in rows[1:])
    assert f"{len(REGISTRY)}/{len(REGISTRY)}" in capsys.readouterr().out


def test_gradcheck_detects_corrupt_backward(tmp_path, capsys):
    assert cli.main(["gradcheck", "--out", str(tmp_path), "--corrupt-backward", "matmul"]) == 1
    out = capsys.readouterr().out
    assert "FAILED matmul" in out


def test_console_script_usage_error():
    proc = subprocess.run([sys.executable, "-m", "graphmae.cli", "ablate"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "required" in proc.stderr
