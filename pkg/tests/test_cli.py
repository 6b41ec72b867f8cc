"""Command-line tests: exit codes, artifacts, determinism, and the
library/CLI embedding round trip."""

import numpy as np
import pytest

from tgat.cli import main, parse_train_config
from tgat.errors import ConfigError
from tgat.layer import load_checkpoint
from tgat.temporal_graph import load_graph
from tgat.training import TrainConfig

CSV_TEXT = (
    "user_id,item_id,timestamp,state_label,f1,f2\n"
    + "\n".join(
        f"{u},{i},{t}.0,0,0.{t % 10},0.{(9 - t) % 10}"
        for t, (u, i) in enumerate(
            [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 0), (1, 1), (2, 1), (0, 1), (1, 0)],
            start=1,
        )
    )
    + "\n"
)

CONFIG_TEXT = """\
# demo config
rng_seed = 3
layers = 1
heads = 2
d = 8
d_t = 4
d_h = 4
d_f = 8
max_epochs = 2
batch_size = 4
learning_rate = 0.01
max_neighbors = 5
unseen_fraction = 0.0
patience = 2
sampling_strategy = most-recent
"""


@pytest.fixture
def workspace(tmp_path):
    data = tmp_path / "data.csv"
    data.write_text(CSV_TEXT)
    config = tmp_path / "config.txt"
    config.write_text(CONFIG_TEXT)
    graph = tmp_path / "graph.npz"
    assert main(["ingest", str(data), str(graph)]) == 0
    return tmp_path, data, config, graph


class TestIngest:
    def test_summary_line(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        data.write_text(CSV_TEXT)
        out = tmp_path / "g.npz"
        assert main(["ingest", str(data), str(out)]) == 0
        printed = capsys.readouterr().out
        assert "5 nodes, 10 events" in printed  # 3 users + 2 items
        assert out.exists()
        assert (tmp_path / "g.npz.manifest.txt").exists()

    def test_missing_file_exit_2_names_path(self, tmp_path, capsys):
        missing = tmp_path / "nowhere.csv"
        assert main(["ingest", str(missing), str(tmp_path / "g.npz")]) == 2
        assert "nowhere.csv" in capsys.readouterr().err

    def test_short_row_exit_1_cites_line(self, tmp_path, capsys):
        data = tmp_path / "bad.csv"
        data.write_text("user_id,item_id,timestamp,state_label\n1,2\n")
        assert main(["ingest", str(data), str(tmp_path / "g.npz")]) == 1
        assert "line 2" in capsys.readouterr().err

    def test_outputs_byte_identical(self, tmp_path):
        data = tmp_path / "d.csv"
        data.write_text(CSV_TEXT)
        g1, g2 = tmp_path / "g1.npz", tmp_path / "g2.npz"
        assert main(["ingest", str(data), str(g1)]) == 0
        assert main(["ingest", str(data), str(g2)]) == 0
        assert g1.read_bytes() == g2.read_bytes()


class TestTrain:
    def test_artifacts_written(self, workspace):
        tmp_path, _, config, graph = workspace
        outdir = tmp_path / "run"
        assert main(["train", str(graph), str(config), str(outdir)]) == 0
        assert (outdir / "checkpoint.json").exists()
        assert (outdir / "history.csv").exists()
        assert (outdir / "manifest.txt").exists()
        manifest = (outdir / "manifest.txt").read_text()
        assert "command = train" in manifest
        assert "seed = 3" in manifest

    def test_rerun_identical_history_and_checkpoint(self, workspace):
        tmp_path, _, config, graph = workspace
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["train", str(graph), str(config), str(out1)]) == 0
        assert main(["train", str(graph), str(config), str(out2)]) == 0
        assert (out1 / "history.csv").read_bytes() == (out2 / "history.csv").read_bytes()
        assert (out1 / "checkpoint.json").read_bytes() == \
               (out2 / "checkpoint.json").read_bytes()

    def test_unknown_config_key_exit_1(self, workspace, capsys):
        tmp_path, _, _, graph = workspace
        bad = tmp_path / "bad.txt"
        bad.write_text("rng_seed = 1\nwibble = 4\n")
        assert main(["train", str(graph), str(bad), str(tmp_path / "out")]) == 1
        assert "wibble" in capsys.readouterr().err

    def test_missing_graph_exit_2(self, workspace, capsys):
        tmp_path, _, config, _ = workspace
        code = main(["train", str(tmp_path / "no.npz"), str(config), str(tmp_path / "o")])
        assert code == 2


class TestEvalAndEmbed:
    @pytest.fixture
    def trained(self, workspace):
        tmp_path, _, config, graph = workspace
        outdir = tmp_path / "run"
        assert main(["train", str(graph), str(config), str(outdir)]) == 0
        return tmp_path, graph, outdir / "checkpoint.json"

    def test_eval_prints_metrics_line(self, trained, capsys):
        _, graph, ckpt = trained
        assert main(["eval", str(ckpt), str(graph),
                     "--split", "transductive", "--task", "link",
                     "--period", "val"]) == 0
        line = capsys.readouterr().out.strip()
        assert line.startswith("split=transductive task=link acc=")
        assert " ap=" in line and " auc=" in line

    def test_eval_missing_checkpoint_exit_2(self, trained):
        tmp_path, graph, _ = trained
        assert main(["eval", str(tmp_path / "none.json"), str(graph)]) == 2

    def test_embed_unseen_node_roundtrips_bit_exact(self, trained, capsys):
        tmp_path, graph_path, ckpt = trained
        # node 3 only ever appears in the final events; embed far in the past
        assert main(["embed", str(ckpt), str(graph_path),
                     "--nodes", "3", "--times", "0.5"]) == 0
        line = capsys.readouterr().out.strip()
        fields = line.split(",")
        assert fields[0] == "3"
        cli_vec = np.array([float(v) for v in fields[2:]])

        from tgat.layer import embed
        model, extra = load_checkpoint(ckpt)
        graph = load_graph(graph_path)
        config = TrainConfig(**extra["train_config"])
        lib_vec = embed(model, 3, 0.5, graph, config.sampling(),
                        rng_seed=config.rng_seed)
        np.testing.assert_array_equal(cli_vec, lib_vec)

    def test_embed_writes_file(self, trained):
        tmp_path, graph, ckpt = trained
        out = tmp_path / "emb.csv"
        assert main(["embed", str(ckpt), str(graph), "--nodes", "0,1",
                     "--times", "5.0", "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 2

    def test_embed_malformed_time_exit_1(self, trained, capsys):
        _, graph, ckpt = trained
        assert main(["embed", str(ckpt), str(graph),
                     "--nodes", "0", "--times", "soon"]) == 1

    def test_embed_mismatched_lists_exit_1(self, trained):
        _, graph, ckpt = trained
        assert main(["embed", str(ckpt), str(graph),
                     "--nodes", "0,1,2", "--times", "1.0,2.0"]) == 1


class TestCheck:
    def test_grad_check_passes(self, capsys):
        assert main(["check", "--grad"]) == 0
        out = capsys.readouterr().out
        assert "negative control" in out
        assert "all checks passed" in out

    def test_kernel_check_passes_and_writes_csv(self, tmp_path, capsys):
        csv_path = tmp_path / "kernel.csv"
        assert main(["check", "--kernel", "--csv", str(csv_path)]) == 0
        out = capsys.readouterr().out
        assert "sup_error" in out
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "k,sup_error,mean_error"
        assert len(lines) == 3  # k = 16 and k = 4096

    def test_check_requires_a_suite(self, capsys):
        assert main(["check"]) == 1

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0

    def test_unknown_command_exit_1(self):
        assert main(["frobnicate"]) == 1


class TestConfigParsing:
    def test_round_trip_types(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("learning_rate = 0.5\nlayers = 3\n"
                        "positional_learnable = true\nattention_mode = positional\n")
        cfg = parse_train_config(path)
        assert cfg.learning_rate == 0.5
        assert cfg.layers == 3
        assert cfg.positional_learnable is True
        assert cfg.attention_mode == "positional"

    def test_unknown_key_is_hard_error(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("nope = 1\n")
        with pytest.raises(ConfigError, match="nope"):
            parse_train_config(path)

    def test_bad_value_cites_line(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("layers = many\n")
        with pytest.raises(ConfigError, match=":1:"):
            parse_train_config(path)

    def test_comments_and_blanks_skipped(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("\n# comment\nrng_seed = 9\n\n")
        assert parse_train_config(path).rng_seed == 9

    def test_invalid_config_value_rejected(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("neighborhood_dropout = 1.5\n")
        with pytest.raises(Exception):
            parse_train_config(path)
