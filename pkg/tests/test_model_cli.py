import csv
import json

import numpy as np
import pytest

from mvhash.cli import ARTIFACTS, CHECKPOINT_NAME, EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from mvhash.config import RunConfig, TrainConfig
from mvhash.errors import DataError
from mvhash.model import MVHashModel
from mvhash.pipeline import Dataset, ablation_rows, encode, evaluate_model, row_config, train
from mvhash.retrieval import CodeSet

SMALL = ["--n-train", "200", "--n-query", "40", "--n-gallery", "300", "--epochs-stage1", "2",
         "--epochs-stage2", "2", "--pairs-per-epoch", "512", "--q", "32", "--q-basic", "16", "--q-view", "8"]


def _cfg(**kw):
    base = dict(q=32, q_basic=16, q_view=8, epochs_stage1=2, epochs_stage2=2, pairs_per_epoch=512,
                eval_batch=64, seed=3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def ds(tiny_data_dir):
    return Dataset.from_dir(tiny_data_dir, 200, 40, seed=3, n_gallery=300)


@pytest.mark.parametrize("fusion", ["r", "c", "p"])
def test_checkpoint_round_trip(ds, tmp_path, fusion):
    model = train(ds, _cfg(fusion=fusion, cfusion_budget=160))
    model.save(tmp_path / "m.mvhk")
    back = MVHashModel.load(tmp_path / "m.mvhk")
    for relation in ("exact", "memory"):
        a = encode(model, ds, "query", relation)
        b = encode(back, ds, "query", relation)
        np.testing.assert_array_equal(a.continuous, b.continuous)
        np.testing.assert_array_equal(a.words, b.words)
    assert back.q == 32


def test_basic_only_round_trip(ds, tmp_path):
    model = train(ds, _cfg(views=(), q_basic=32))
    assert not model.multiview and model.q == 32
    model.save(tmp_path / "b.mvhk")
    np.testing.assert_array_equal(encode(MVHashModel.load(tmp_path / "b.mvhk"), ds, "query").words,
                                  encode(model, ds, "query").words)
    with pytest.raises(DataError):
        train(ds, _cfg(views=()))


def test_training_is_deterministic(ds, tmp_path):
    for name in ("a", "b"):
        m = train(ds, _cfg())
        m.save(tmp_path / f"{name}.mvhk")
        encode(m, ds, "gallery").save(tmp_path / f"{name}.codes")
    assert (tmp_path / "a.mvhk").read_bytes() == (tmp_path / "b.mvhk").read_bytes()
    assert (tmp_path / "a.codes").read_bytes() == (tmp_path / "b.codes").read_bytes()


def test_evaluate_model_echo(ds):
    report, gallery, queries = evaluate_model(train(ds, _cfg()), ds)
    assert report.config["bits"] == 32 and report.config["fusion"] == "r"
    assert len(gallery) == 300 and len(queries) == 40
    assert 0 <= report.map_radius <= 1 and 0 <= report.map_full <= 1


def test_ablation_rows():
    rows = ablation_rows(4)
    assert len(rows) == 16
    assert len({r.name for r in rows}) == 16
    assert rows[0].views == () and not rows[0].use_relation
    assert rows[-1].views == (0, 1, 2, 3) and rows[-1].use_relation
    assert row_config(TrainConfig(), rows[1]).views == (0,)


# ------------------------------------------------------------------------- CLI


def _train(tiny_data_dir, out, *extra):
    return main(["train", "--data", str(tiny_data_dir), "--out", str(out), *SMALL, *extra])


def test_cli_pipeline(tiny_data_dir, tmp_path, capsys):
    run = tmp_path / "run"
    assert _train(tiny_data_dir, run, "--seed", "5") == EXIT_OK
    for name in ARTIFACTS:
        assert (run / name).is_file(), name
    with open(run / "losses.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and list(rows[0]) == ["epoch", "Lp", "Lc", "L", "Lw"]

    ck = str(run / CHECKPOINT_NAME)
    common = ["--checkpoint", ck, "--data", str(tiny_data_dir), "--split", str(run / "split.json")]
    for part in ("gallery", "query"):
        assert main(["encode", *common, "--part", part, "--out", str(tmp_path / f"{part}.codes")]) == EXIT_OK
    g, q = CodeSet.load(tmp_path / "gallery.codes"), CodeSet.load(tmp_path / "query.codes")
    assert g.q == q.q == 32 and len(g) == 300 and len(q) == 40

    assert main(["index", "--codes", str(tmp_path / "gallery.codes"), "--out", str(tmp_path / "g.index")]) == 0
    assert main(["query", "--index", str(tmp_path / "g.index"), "--codes", str(tmp_path / "query.codes"),
                 "--radius", "2", "--limit", "5", "--out", str(tmp_path / "hits.csv")]) == 0
    with open(tmp_path / "hits.csv") as fh:
        hits = list(csv.DictReader(fh))
    assert all(int(h["hamming"]) <= 2 and int(h["rank"]) < 5 for h in hits)

    assert main(["eval", "--gallery", str(tmp_path / "gallery.codes"), "--queries", str(tmp_path / "query.codes"),
                 "--labels", str(run / "labels.json"), "--out", str(tmp_path / "report")]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert {"map_full", "map_radius", "auc", "precision_at_radius"} <= set(report)

    assert main(["encode", *common, "--part", "query", "--relation", "memory",
                 "--out", str(tmp_path / "mem.codes")]) == 0
    assert CodeSet.load(tmp_path / "mem.codes").meta["relation"] == "memory"


def test_cli_pooling_layout(tiny_data_dir, tmp_path):
    assert _train(tiny_data_dir, tmp_path, "--fusion", "p") == 0
    layout = MVHashModel.load(tmp_path / CHECKPOINT_NAME).meta()["layout"]
    assert layout["method"] == "p" and {"k", "w", "slots"} <= set(layout)


def test_cli_config_file_and_flag_precedence(tiny_data_dir, tmp_path):
    rc = RunConfig(train=_cfg(seed=8, lr=0.5), data_dir=str(tiny_data_dir), n_train=200, n_query=40, n_gallery=300)
    rc.dump(tmp_path / "cfg.json")
    out = tmp_path / "out"
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--out", str(out), "--lr", "0.002"]) == 0
    used = RunConfig.load(out / "config.json")
    assert used.train.lr == 0.002 and used.train.seed == 8 and used.n_train == 200


def test_cli_exit_codes(tiny_data_dir, tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["train", "--bogus"])
    assert e.value.code == EXIT_USAGE
    assert main(["train", "--out", str(tmp_path)]) == EXIT_DATA
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)]) == EXIT_DATA
    assert main(["eval", "--gallery", str(tmp_path / "x"), "--queries", str(tmp_path / "y"),
                 "--labels", str(tmp_path / "z"), "--out", str(tmp_path / "r")]) == EXIT_DATA
    assert _train(tiny_data_dir, tmp_path / "bad", "--q", "0") == EXIT_USAGE


def test_cli_ablate_subset(tiny_data_dir, tmp_path):
    assert main(["ablate", "--data", str(tiny_data_dir), "--out", str(tmp_path), *SMALL,
                 "--q-basic", "32", "--rows", "baseline,full"]) == 0
    with open(tmp_path / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["row"] for r in rows] == ["baseline", "full"]
    assert main(["ablate", "--data", str(tiny_data_dir), "--out", str(tmp_path), *SMALL, "--rows", "nope"]) == 2
