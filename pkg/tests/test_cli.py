import filecmp

import pytest

from coupledrec.cli import main, read_config
from coupledrec.data import load_split, read_interactions
from coupledrec.models import read_checkpoint_file
from coupledrec.training import TrainConfig, init_params

SMALL = ["--users", "30", "--items", "40", "--intervals", "4", "--density", "0.08", "--feature-dim", "8"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", *SMALL, "--seed", "1", "--out", str(root / "syn")]) == 0
    assert main(["ingest", "--interactions", str(root / "syn" / "interactions.tsv"), "--k-core", "1",
                 "--seed", "1", "--out", str(root / "split")]) == 0
    for variant in ("dcf", "mp"):
        assert main(["train", "--split", str(root / "split"), "--variant", variant, "--iter-max", "3",
                     "--out", str(root / variant)]) == 0
    return root


# -- ingest -----------------------------------------------------------------------

def test_ingest_three_lines(tmp_path, capsys):
    log = tmp_path / "log.tsv"
    log.write_text("u1\ti1\t0\nu1\ti2\t604800\nu2\ti1\t10\n")
    code, out, _ = run(capsys, "ingest", "--interactions", log, "--k-core", "1", "--out", tmp_path / "s")
    assert code == 0
    assert "n_raw=3" in out and "n_triples=3" in out and "P=2" in out
    assert len(load_split(tmp_path / "s").train) >= 1


def test_ingest_missing_file(tmp_path, capsys):
    missing = tmp_path / "nope.tsv"
    code, _, err = run(capsys, "ingest", "--interactions", missing)
    assert code != 0 and str(missing) in err
    assert len(err.strip().splitlines()) == 1


def test_ingest_kcore_one_keeps_everything(tmp_path, capsys):
    log = tmp_path / "log.tsv"
    log.write_text("a\tx\t0\nb\ty\t5\n")
    code, out, _ = run(capsys, "ingest", "--interactions", log, "--k-core", "1", "--out", tmp_path / "s")
    assert code == 0 and "n_kept=2" in out
    code, _, err = run(capsys, "ingest", "--interactions", log, "--out", tmp_path / "t")
    assert code == 1 and "no interactions left" in err


def test_ingest_malformed_line(tmp_path, capsys):
    log = tmp_path / "log.tsv"
    log.write_text("a\tx\n")
    code, _, err = run(capsys, "ingest", "--interactions", log, "--k-core", "1")
    assert code == 1 and "MalformedLine" in err


# -- synth ------------------------------------------------------------------------

def test_synth_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "synth", *SMALL, "--seed", 4, "--out", tmp_path / name)[0] == 0
    for fname in ("interactions.tsv", "features.bin", "groups.tsv"):
        assert filecmp.cmp(tmp_path / "a" / fname, tmp_path / "b" / fname, shallow=False)


def test_synth_single_group(tmp_path, capsys):
    assert run(capsys, "synth", *SMALL, "--groups", 1, "--out", tmp_path)[0] == 0
    groups = (tmp_path / "groups.tsv").read_text().splitlines()[1:]
    assert {line.split("\t")[2] for line in groups} == {"0"}


def test_synth_default_size(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--out", tmp_path)
    n = len(read_interactions(tmp_path / "interactions.tsv"))
    assert code == 0 and f"interactions={n}" in out
    # expectation 200 * 300 * 8 * 0.005; probabilities are capped at 1, so allow a wide band
    assert abs(n - 2400) < 300


def test_synth_rejects_bad_sizes(capsys):
    code, _, err = run(capsys, "synth", "--users", 0)
    assert code == 1 and "sizes must be positive" in err


# -- train ------------------------------------------------------------------------

def test_train_iter_max_zero_is_init(workspace, tmp_path, capsys):
    code, out, _ = run(capsys, "train", "--split", workspace / "split", "--variant", "dcf",
                       "--iter-max", 0, "--seed", 3, "--out", tmp_path)
    assert code == 0 and "iterations=0" in out
    ckpt = read_checkpoint_file(tmp_path / "model.ckpt")
    P, Q, R = ckpt.shape
    assert ckpt.params == init_params(TrainConfig(seed=3), (P, Q, R))


def test_train_dcfa_requires_features(workspace, capsys):
    code, _, err = run(capsys, "train", "--split", workspace / "split", "--variant", "dcfa")
    assert code == 1 and "--features" in err


def test_train_dcfa_with_features(workspace, tmp_path, capsys):
    code, out, _ = run(capsys, "train", "--split", workspace / "split", "--variant", "dcfa",
                       "--features", workspace / "syn" / "features.bin", "--iter-max", 2, "--out", tmp_path)
    assert code == 0 and "Recall@50=" in out and "NDCG@5=" in out
    assert (tmp_path / "trace.tsv").read_text().startswith("iteration\tobjective")


def test_train_popularity(workspace, capsys):
    assert (workspace / "mp" / "model.ckpt").exists()
    assert read_checkpoint_file(workspace / "mp" / "model.ckpt").variant == "mp"


def test_train_unknown_variant(workspace, capsys):
    code, _, err = run(capsys, "train", "--split", workspace / "split", "--variant", "svd")
    assert code == 1 and "unknown variant" in err


# -- eval -------------------------------------------------------------------------

def test_eval_single_checkpoint(workspace, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--split", workspace / "split", "--checkpoint",
                       workspace / "dcf" / "model.ckpt", "--out", tmp_path)
    assert code == 0
    rows = (tmp_path / "metrics.tsv").read_text().splitlines()
    assert [r.split("\t")[1] for r in rows[1:]] == ["5", "10", "20", "50", "100"]
    assert "d_recall" not in out


def test_eval_reference_column(workspace, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--split", workspace / "split",
                       "--checkpoint", f"dcf={workspace / 'dcf' / 'model.ckpt'}",
                       "--checkpoint", f"mp={workspace / 'mp' / 'model.ckpt'}",
                       "--reference", "mp", "--cutoffs", "10,50", "--out", tmp_path)
    assert code == 0 and "d_recall" in out
    header = (tmp_path / "comparison.tsv").read_text().splitlines()[0]
    assert header.endswith("recall_gain\tndcg_gain")
    mp_rows = [r for r in (tmp_path / "comparison.tsv").read_text().splitlines() if r.startswith("mp\t")]
    assert all(r.split("\t")[4] in ("0.0000", "n/a") for r in mp_rows)


def test_eval_vocab_mismatch(workspace, tmp_path, capsys):
    log = tmp_path / "other.tsv"
    log.write_text("z1\tq1\t0\nz2\tq2\t10\nz1\tq2\t20\nz2\tq1\t30\n")
    assert run(capsys, "ingest", "--interactions", log, "--k-core", "1", "--out", tmp_path / "s")[0] == 0
    code, _, err = run(capsys, "eval", "--split", tmp_path / "s", "--checkpoint", workspace / "mp" / "model.ckpt")
    assert code == 1 and "VocabMismatch" in err


def test_eval_unknown_reference(workspace, capsys):
    code, _, err = run(capsys, "eval", "--split", workspace / "split", "--checkpoint",
                       workspace / "mp" / "model.ckpt", "--reference", "vbpr")
    assert code == 1 and "reference" in err


# -- predict ------------------------------------------------------------------------

def test_predict_five(workspace, capsys):
    code, out, _ = run(capsys, "predict", "--split", workspace / "split", "--checkpoint",
                       workspace / "dcf" / "model.ckpt", "--user", "u0001", "--interval", 1, "-n", 5)
    lines = out.splitlines()
    assert code == 0 and len(lines) == 5
    scores = [float(line.split("\t")[1]) for line in lines]
    assert scores == sorted(scores, reverse=True)


def test_predict_unknown_user(workspace, capsys):
    code, _, err = run(capsys, "predict", "--split", workspace / "split", "--checkpoint",
                       workspace / "dcf" / "model.ckpt", "--user", "nobody")
    assert code == 1 and "UnknownUser" in err


def test_predict_unknown_interval(workspace, capsys):
    code, _, err = run(capsys, "predict", "--split", workspace / "split", "--checkpoint",
                       workspace / "dcf" / "model.ckpt", "--user", "u0001", "--interval", 99)
    assert code == 1 and "UnknownInterval" in err


def test_predict_more_than_catalog(workspace, capsys):
    Q = load_split(workspace / "split").train.n_items
    code, out, _ = run(capsys, "predict", "--split", workspace / "split", "--checkpoint",
                       workspace / "mp" / "model.ckpt", "--user", "u0001", "-n", Q + 50)
    lines = out.splitlines()
    assert code == 0 and len(lines) == Q
    assert len({line.split("\t")[0] for line in lines}) == Q


# -- config ---------------------------------------------------------------------------

def test_read_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# run\niter-max = 7\n\neta=0.5  # fast\nout = /tmp/x\n")
    assert read_config(path) == {"iter_max": "7", "eta": "0.5", "out": "/tmp/x"}
    assert read_config(None) == {}


def test_config_file_and_flag_precedence(workspace, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"split = {workspace / 'split'}\nvariant = dcf\niter_max = 2\nseed = 5\n")
    code, out, _ = run(capsys, "train", "--config", cfg, "--out", tmp_path / "a")
    assert code == 0 and "iterations=2" in out
    code, out, _ = run(capsys, "train", "--config", cfg, "--iter-max", 0, "--out", tmp_path / "b")
    assert code == 0 and "iterations=0" in out
    ckpt = read_checkpoint_file(tmp_path / "b" / "model.ckpt")
    assert ckpt.params == init_params(TrainConfig(seed=5), ckpt.shape)


def test_missing_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_planted_preset_and_sidecar(workspace, tmp_path, capsys):
    code, _, _ = run(capsys, "train", "--split", workspace / "split", "--variant", "dcfa", "--preset", "planted",
                     "--features", workspace / "syn" / "features.bin", "--normalize", "unit_l2_column",
                     "--iter-max", 0, "--out", tmp_path / "m")
    assert code == 0
    saved = read_config(tmp_path / "m" / "run.cfg")
    assert saved["normalize"] == "unit_l2_column" and saved["init_scale"] == "0.5" and saved["K1"] == "10"
    # eval picks the features and normalization up from run.cfg
    code, _, _ = run(capsys, "eval", "--split", workspace / "split", "--checkpoint", tmp_path / "m" / "model.ckpt")
    assert code == 0
    code, _, err = run(capsys, "train", "--split", workspace / "split", "--variant", "dcf", "--preset", "tuned")
    assert code == 1 and "unknown preset" in err
